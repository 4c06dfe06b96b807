#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "dataset.hpp"
#include "nets.hpp"
#include "train.hpp"

namespace ph {

// Single-scale SSIM, gaussian window 11x11 sigma 1.5, valid positions only,
// computed in double. Inputs [N,1,H,W] in [0,1]; returns the mean over the
// batch. Throws config_error when an image side is smaller than the window.
double ssim_single(const torch::Tensor& a, const torch::Tensor& b);

// Multi-scale SSIM with the standard five weights, downsampling by 2x average
// pooling. The scale count shrinks until the smallest side stays >= the
// window at the coarsest scale, and the weights are renormalized to sum to 1.
// Contrast-structure factors are clamped at zero before exponentiation.
double ms_ssim(const torch::Tensor& a, const torch::Tensor& b);

// iD: masked MS-SSIM outside the pathology region, per sample.
// Both images are multiplied by (1 - m) first.
double identity_score(const torch::Tensor& x_p, const torch::Tensor& x_th,
                      const torch::Tensor& m_p);
std::vector<double> identity_per_sample(const torch::Tensor& x_p, const torch::Tensor& x_th,
                                        const torch::Tensor& m_p);

// Maps a batch of images to per-pixel pathology probabilities.
using JudgeFn = std::function<torch::Tensor(const torch::Tensor&)>;

JudgeFn judge_from_net(SegmentorNet net);

struct HealthinessResult {
  double h = 0.0;
  double mean_n_synth = 0.0;
  double mean_n_input = 0.0;
  std::vector<double> n_synth, n_input;  // per-sample pixel counts above 0.5
};

// h = 1 - E[N(judge(synth))] / E[N(judge(input))], expectations as batch
// means, N counting pixels with probability > 0.5. The input-side denominator
// cancels any bias the judge carries. Throws numeric_error when the judge
// finds no pathology in the inputs.
HealthinessResult healthiness(const torch::Tensor& synth, const torch::Tensor& input,
                              const JudgeFn& judge);

// Judge segmentor: trained on the train split, fine-tuned on the validation
// split at a tenth of the learning rate, evaluation only.
struct JudgeConfig {
  int epochs = 15;
  int finetune_epochs = 5;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 404;
  NetConfig net{};

  void validate() const;
};

struct Judge {
  SegmentorNet net{nullptr};
  double heldout_dice = 0.0;  // thresholded dice on the test split
};

Judge train_judge(const Dataset& ds, const JudgeConfig& cfg);

// Canny edge map: gaussian smoothing, Sobel gradients, non-maximum
// suppression, gradient magnitudes normalized by their maximum, then
// hysteresis at (low, high). A constant image yields an empty map.
ImageSlice canny_edges(const ImageSlice& img, double sigma = 1.0, double low = 0.1,
                       double high = 0.2);

// Binary classifier over edge maps estimating P(deformation-free).
class DecNetImpl : public torch::nn::Module {
 public:
  explicit DecNetImpl(int base_channels = 8);
  torch::Tensor forward(const torch::Tensor& x);  // [N,1,H,W] -> logits [N]

 private:
  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(DecNet);

struct DecConfig {
  int epochs = 12;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 505;

  void validate() const;
};

struct DecClassifier {
  DecNet net{nullptr};
  double heldout_accuracy = 0.0;  // on validation-split healthy slices
};

// Trains deformed-vs-undeformed on edge maps of healthy training slices;
// label 1 means deformation-free.
DecClassifier train_dec_classifier(const Dataset& ds, const DecConfig& cfg);

// Mean P(deformation-free) over the batch plus per-sample probabilities.
// Images are converted to edge maps internally.
std::pair<double, std::vector<double>> dec_score(const DecClassifier& clf,
                                                 const std::vector<ImageSlice>& synth);

// |x_p - x_th| > threshold as a pathology mask.
PathologyMask diff_map_segmentation(const ImageSlice& x_p, const ImageSlice& x_th,
                                    double threshold = 0.1);

// 2*|a & b| / (|a| + |b| + 1e-6), the soft-dice formula on binary counts.
double dice_of_masks(const PathologyMask& a, const PathologyMask& b);
double mask_iou(const PathologyMask& a, const PathologyMask& b);

// Mean per-image dice of thresholded predictions (> 0.5) against ground truth.
double segmentor_dice(SegmentorNet s, const std::vector<const ImageSlice*>& images,
                      const std::vector<const PathologyMask*>& masks,
                      std::vector<double>* per_sample = nullptr);

// R(x_h, m): synthesizes a diseased-looking image from a healthy one.
ImageSlice pseudo_disease(ReconstructorNet r, const ImageSlice& x_h, const PathologyMask& m);

struct IterPoint {
  double id = 0.0;
  double h = 0.0;
};

// Applies G repeatedly, scoring each pass against the original inputs.
std::vector<IterPoint> iterate_generator(GeneratorNet g, const torch::Tensor& x_p,
                                         const torch::Tensor& m_p, const JudgeFn& judge, int k);

struct MaskShiftOutcome {
  bool valid = false;  // a shift keeping the lesion inside the brain existed
  double iou_shifted = 0.0;
  double iou_original = 0.0;
};

// Shifts the predicted mask by shift_px before reconstruction and re-segments
// the result. A mask-conditioned reconstructor moves the lesion with the
// mask, so the IoU against the shifted reference should win.
MaskShiftOutcome mask_shift_diagnostic(const ModelBundle& b, const ImageSlice& x_p,
                                       int shift_px = 8);

struct MetricReport {
  double h = 0.0;
  double id = 0.0;
  double dec = 0.0;
  double dice_diffmap = 0.0;
  double dice_segmentor = 0.0;
  double judge_dice = 0.0;
  double dec_accuracy = 0.0;
  int n_samples = 0;
  bool has_segmentor = false;
  std::vector<double> id_per_sample, diffmap_dice_per_sample, seg_dice_per_sample,
      dec_per_sample, judge_n_synth, judge_n_input;
};

// Runs the full metric battery for a trained bundle on the test split.
MetricReport evaluate_bundle(const ModelBundle& b, const Dataset& ds, const Judge& judge,
                             const DecClassifier& clf);

// Mean l1 of R(x_h, 0) against x_h over the given split's healthy slices.
double cycle_hh_residual(const ModelBundle& b, const Dataset& ds, Split split);

void write_report_csv(const MetricReport& r, const std::filesystem::path& path);
MetricReport read_report_csv(const std::filesystem::path& path);

}  // namespace ph

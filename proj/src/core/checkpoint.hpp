#pragma once

#include <torch/torch.h>

#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace ph {

// Binary container: magic, length-prefixed JSON manifest (meta + tensor
// table), then raw little-endian payloads in manifest order. Writing the same
// tensors and meta twice produces byte-identical files, which is what the
// reproducibility checks hash.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, torch::Tensor> tensors;  // sorted by name
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw file bytes, as a hex string.
std::string file_hash(const std::string& path);

// Module parameters/buffers under "<prefix>.<name>".
void put_module(Checkpoint& ck, const std::string& prefix, const torch::nn::Module& m);
void get_module(const Checkpoint& ck, const std::string& prefix, torch::nn::Module& m);

// Adam moment tensors and step counts, keyed by parameter position.
void put_adam(Checkpoint& ck, const std::string& prefix, const torch::optim::Adam& opt);
void get_adam(const Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt);

}  // namespace ph

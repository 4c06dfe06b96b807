#include "checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "errors.hpp"

using nlohmann::json;

namespace ph {
namespace {

constexpr char kMagic[8] = {'P', 'H', 'C', 'K', 'P', 'T', '1', '\n'};

std::string param_key(const std::string& prefix, size_t i, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), ".p%04zu.", i);
  return prefix + buf + what;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json manifest;
  manifest["format"] = "pseudoheal-checkpoint-v1";
  manifest["meta"] = ck.meta;
  json table = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (t.scalar_type() != torch::kFloat)
      throw internal_error("checkpoint: only float32 tensors are supported, got " + name);
    json e;
    e["name"] = name;
    e["shape"] = std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
    e["offset"] = offset;
    table.push_back(e);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  manifest["tensors"] = std::move(table);
  std::string m = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  uint64_t len = m.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : ck.tensors) {
    auto c = t.detach().cpu().contiguous();
    f.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
            static_cast<std::streamsize>(c.numel() * sizeof(float)));
  }
  if (!f) throw data_error("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw data_error("missing checkpoint: " + path);
  auto file_size = static_cast<uint64_t>(f.tellg());
  f.seekg(0);

  char magic[8];
  uint64_t len = 0;
  if (file_size < sizeof(magic) + sizeof(len)) throw data_error("corrupt checkpoint header: " + path);
  f.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw data_error("corrupt checkpoint header: " + path);
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (len > file_size - sizeof(magic) - sizeof(len))
    throw data_error("corrupt checkpoint manifest: " + path);

  std::string m(len, '\0');
  f.read(m.data(), static_cast<std::streamsize>(len));
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw data_error("corrupt checkpoint manifest: " + path + ": " + e.what());
  }
  if (manifest.value("format", "") != std::string("pseudoheal-checkpoint-v1"))
    throw data_error("not a pseudoheal checkpoint: " + path);

  Checkpoint ck;
  ck.meta = manifest.value("meta", json::object());
  uint64_t payload = file_size - sizeof(magic) - sizeof(len) - len;
  uint64_t expected = 0;
  for (const auto& e : manifest.at("tensors")) {
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    int64_t numel = 1;
    for (int64_t d : shape) numel *= d;
    expected += static_cast<uint64_t>(numel) * sizeof(float);
  }
  if (payload != expected)
    throw data_error("truncated checkpoint payload: " + path + " (expected " +
                     std::to_string(expected) + " bytes, found " + std::to_string(payload) + ")");

  for (const auto& e : manifest.at("tensors")) {
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::kFloat);
    f.read(reinterpret_cast<char*>(t.data_ptr<float>()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw data_error("short read: " + path);
    ck.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("missing file: " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    auto n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016" PRIx64, h);
  return out;
}

void put_module(Checkpoint& ck, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters())
    ck.tensors[prefix + "." + p.key()] = p.value().detach().cpu().contiguous().clone();
  for (const auto& b : m.named_buffers())
    ck.tensors[prefix + "." + b.key()] = b.value().detach().cpu().contiguous().clone();
}

void get_module(const Checkpoint& ck, const std::string& prefix, torch::nn::Module& m) {
  torch::NoGradGuard ng;
  for (auto p : m.named_parameters()) {
    auto it = ck.tensors.find(prefix + "." + p.key());
    if (it == ck.tensors.end())
      throw data_error("checkpoint is missing tensor " + prefix + "." + p.key());
    if (it->second.sizes() != p.value().sizes())
      throw data_error("checkpoint tensor " + prefix + "." + p.key() + " has wrong shape");
    p.value().copy_(it->second);
  }
  for (auto b : m.named_buffers()) {
    auto it = ck.tensors.find(prefix + "." + b.key());
    if (it != ck.tensors.end()) b.value().copy_(it->second);
  }
}

void put_adam(Checkpoint& ck, const std::string& prefix, const torch::optim::Adam& opt) {
  auto& state = const_cast<torch::optim::Adam&>(opt).state();
  size_t i = 0;
  json steps = json::object();
  for (const auto& group : opt.param_groups()) {
    for (const auto& p : group.params()) {
      auto it = state.find(p.unsafeGetTensorImpl());
      if (it != state.end()) {
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        ck.tensors[param_key(prefix, i, "exp_avg")] = s.exp_avg().detach().cpu().contiguous().clone();
        ck.tensors[param_key(prefix, i, "exp_avg_sq")] =
            s.exp_avg_sq().detach().cpu().contiguous().clone();
        char key[16];
        std::snprintf(key, sizeof(key), "p%04zu", i);
        steps[key] = s.step();
      }
      ++i;
    }
  }
  ck.meta["adam"][prefix] = std::move(steps);
}

void get_adam(const Checkpoint& ck, const std::string& prefix, torch::optim::Adam& opt) {
  if (!ck.meta.contains("adam") || !ck.meta["adam"].contains(prefix)) return;
  const auto& steps = ck.meta["adam"][prefix];
  size_t i = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      char key[16];
      std::snprintf(key, sizeof(key), "p%04zu", i);
      if (steps.contains(key)) {
        auto avg = ck.tensors.find(param_key(prefix, i, "exp_avg"));
        auto sq = ck.tensors.find(param_key(prefix, i, "exp_avg_sq"));
        if (avg == ck.tensors.end() || sq == ck.tensors.end())
          throw data_error("checkpoint is missing optimizer moments for " + prefix);
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(steps[key].get<int64_t>());
        s->exp_avg(avg->second.clone());
        s->exp_avg_sq(sq->second.clone());
        opt.state()[p.unsafeGetTensorImpl()] = std::move(s);
      }
      ++i;
    }
  }
}

}  // namespace ph

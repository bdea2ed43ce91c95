#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mh2f/config.hpp"
#include "mh2f/model.hpp"

namespace mh2f {

// Adam moment estimates, aligned with the for_each_param order.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(ModelParams<T>& p) {
  AdamState<T> s;
  for_each_param(p, [&](const std::string&, Tensor<T>& t, int) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  });
  return s;
}

// Everything needed to continue training bit-exactly: parameters, optimizer
// moments, and the (epoch, batch offset, step) position of the data stream.
struct Checkpoint {
  std::uint32_t format_version = 1;
  TrainConfig train_config;  // train_config.model is the model config
  ModelParams<float> params;
  AdamState<float> opt;
  std::uint64_t epoch = 0;
  std::uint64_t batch_offset = 0;
  std::uint64_t global_step = 0;
  double best_psnr = -1.0;
};

// Binary layout: magic, format_version, config JSON, shape manifest, then the
// little-endian float32 parameter blob, optimizer blob, progress counters and
// a trailer magic. The version is checked before any parameter is read;
// truncation or manifest mismatch aborts the load with no partial state.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mh2f

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mh2f/checkpoint.hpp"
#include "mh2f/config.hpp"
#include "mh2f/datapipe.hpp"
#include "mh2f/losses.hpp"
#include "mh2f/model.hpp"

namespace mh2f {

// One Adam update over aligned (param, grad, m, v) tensors; eps = 1e-8.
// lr = 0 leaves every parameter bit-identical (the moments still advance).
template <typename T>
void adam_step(std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr, double beta1, double beta2) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = static_cast<double>(g.data[j]);
      const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * gj * gj;
      m.data[j] = static_cast<T>(mj);
      v.data[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) -
                                 lr * mhat / (std::sqrt(vhat) + kAdamEpsilon));
    }
  }
}

// Forward + hybrid loss + backward + Adam. The returned breakdown is the loss
// of the batch before the update. A non-finite loss aborts with the label of
// the first non-finite tensor on the tape.
LossBreakdown train_step(ModelParams<float>& model, const Batch& batch,
                         AdamState<float>& opt, const TrainConfig& cfg);

struct TrainLog {
  struct Iter {
    std::uint64_t iter;
    double l1, ssim_loss, total;
  };
  struct Epoch {
    std::uint64_t epoch;
    double mean_total;
    bool has_eval = false;
    double psnr = 0, ssim = 0;
  };
  std::vector<Iter> iters;
  std::vector<Epoch> epochs;

  void to_csv(std::ostream& os) const;
  [[nodiscard]] std::string csv() const;
};

struct FitResult {
  Checkpoint final;
  Checkpoint best;  // highest eval PSNR (== final when no eval set given)
  TrainLog log;
};

// Runs cfg.epochs epochs of train_step over shuffled patch batches, evaluating
// PSNR/SSIM on eval every cfg.eval_every epochs when given. Constant learning
// rate. Pass resume to continue a run; with deterministic mode on, the
// trajectory is identical to an uninterrupted run. When out_dir is non-empty,
// checkpoint_last.ckpt / checkpoint_best.ckpt are written as training goes;
// write failures are fatal.
FitResult fit(const PairIndex& train, const PairIndex* eval_set, const TrainConfig& cfg,
              const Checkpoint* resume = nullptr, const std::string& out_dir = {});

// Mean PSNR/SSIM of the model over full-size pairs (output clamped to [0,1]).
std::pair<double, double> evaluate_model(ModelParams<float>& model, const PairIndex& pairs);

// Inference for arbitrary image sizes: dims not divisible by 4 are
// reflection-padded to the next multiple, processed, and cropped back.
TensorF derain_image(ModelParams<float>& model, const TensorF& img);

// ---- ablation -----------------------------------------------------------------

struct Variant {
  std::string name;
  ModelConfig model;
};

struct AblationRow {
  std::string variant;
  long long params = 0;
  double psnr = NAN, ssim = NAN;
  std::string error;  // non-empty when this variant failed
};

// Trains every variant under the base config (same seed and data); a failing
// variant is reported in its row without aborting the table. When the variants
// differ only in num_mheb, strictly increasing parameter counts are verified.
std::vector<AblationRow> run_ablation(const PairIndex& train, const PairIndex* eval_set,
                                      const TrainConfig& base,
                                      const std::vector<Variant>& variants);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

// ---- gradient verification -----------------------------------------------------

struct FdRow {
  std::string tensor;
  std::size_t numel = 0;
  std::size_t checked = 0;
  double max_rel_err = 0;
};

struct FdOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  // 0 = check every element; otherwise a seeded sample per tensor
  int max_samples_per_tensor = 0;
  std::uint64_t seed = 20240501;
  bool corrupt_analytic = false;  // test fixture: falsify one gradient entry
};

struct FdReport {
  std::string block;
  double tolerance = 0;
  double max_rel_err = 0;
  bool pass = false;
  std::vector<FdRow> rows;  // one row per input/parameter tensor
};

// Central finite differences (double precision) against the analytic gradients
// of a sum-of-outputs objective, for one named block on micro shapes.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-6).
FdReport finite_difference_check(const std::string& block_name, const FdOptions& opts = {});

std::vector<std::string> fd_block_names();

}  // namespace mh2f

#include "mh2f/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "mh2f/errors.hpp"
#include "mh2f/image_io.hpp"
#include "mh2f/metrics.hpp"

namespace fs = std::filesystem;

namespace mh2f {

LossBreakdown train_step(ModelParams<float>& model, const Batch& batch,
                         AdamState<float>& opt, const TrainConfig& cfg) {
  if (!(batch.rainy.shape == batch.clean.shape))
    throw precondition_error("train_step: batch shapes differ");

  Tape<float> tape;
  EmitCtx<float> ctx(tape);
  ctx.train = true;
  ctx.bind(model);
  const int x = tape.leaf(batch.rainy, false, "batch.rainy");
  const int target = tape.leaf(batch.clean, false, "batch.clean");
  const int out = emit_model(ctx, model, x);
  const auto loss = emit_hybrid(tape, out, target, static_cast<float>(cfg.lambda));

  LossBreakdown b;
  b.lambda = cfg.lambda;
  b.l1 = static_cast<double>(tape.val(loss.l1).data[0]);
  b.ssim_loss = static_cast<double>(tape.val(loss.ssim_loss).data[0]);
  b.total = b.l1 + cfg.lambda * b.ssim_loss;
  if (!std::isfinite(b.total)) {
    const int bad = tape.first_non_finite();
    const std::string name =
        bad < 0 ? std::string("loss")
                : (tape.label(bad).empty() ? "tape node " + std::to_string(bad)
                                           : tape.label(bad));
    throw std::runtime_error("aborting: non-finite loss; first non-finite tensor: " + name);
  }

  tape.backward(loss.total);

  std::vector<Tensor<float>*> params;
  for_each_param(model, [&](const std::string&, Tensor<float>& t, int) {
    params.push_back(&t);
  });
  std::vector<Tensor<float>> zero_grads;
  zero_grads.reserve(params.size());
  std::vector<const Tensor<float>*> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int id = ctx.param_order[i];
    if (tape.has_grad(id)) {
      grads[i] = &tape.grad(id);
    } else {
      zero_grads.emplace_back(params[i]->shape);
      grads[i] = &zero_grads.back();
    }
  }
  adam_step(params, grads, opt, cfg.lr, cfg.beta1, cfg.beta2);
  return b;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainLog::to_csv(std::ostream& os) const {
  for (const auto& row : iters)
    os << "iter," << row.iter << "," << fmt(row.l1) << "," << fmt(row.ssim_loss) << ","
       << fmt(row.total) << "\n";
  for (const auto& e : epochs) {
    os << "epoch," << e.epoch << "," << fmt(e.mean_total);
    if (e.has_eval) os << "," << fmt(e.psnr) << "," << fmt(e.ssim);
    os << "\n";
  }
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  to_csv(os);
  return os.str();
}

TensorF derain_image(ModelParams<float>& model, const TensorF& img) {
  const int h = img.shape.h, w = img.shape.w;
  const int th = std::max(8, (h + 3) / 4 * 4);
  const int tw = std::max(8, (w + 3) / 4 * 4);
  if (th == h && tw == w) return mh2f_forward(img, model, /*clamp_output=*/true);
  const TensorF padded = reflect_pad_to(img, th, tw);
  return crop_to(mh2f_forward(padded, model, /*clamp_output=*/true), h, w);
}

std::pair<double, double> evaluate_model(ModelParams<float>& model, const PairIndex& pairs) {
  if (pairs.size() == 0) throw precondition_error("evaluate_model: empty eval set");
  double psum = 0, ssum = 0;
  for (const auto& e : pairs.entries) {
    const TensorF out = derain_image(model, *e.rainy);
    psum += psnr(out, *e.clean);
    ssum += ssim_index(out, *e.clean);
  }
  const double n = static_cast<double>(pairs.size());
  return {psum / n, ssum / n};
}

FitResult fit(const PairIndex& train, const PairIndex* eval_set, const TrainConfig& cfg,
              const Checkpoint* resume, const std::string& out_dir) {
  require_valid_train_config(cfg);
  if (train.size() == 0) throw precondition_error("fit: empty training index");
  const std::size_t per_epoch = batches_per_epoch(train, cfg.batch_size);
  if (per_epoch == 0)
    throw precondition_error("fit: batch_size " + std::to_string(cfg.batch_size) +
                             " exceeds the " + std::to_string(train.size()) +
                             " available pairs (drop-last batching)");

  Checkpoint state;
  if (resume) {
    if (!(resume->train_config.model == cfg.model))
      throw config_error("fit: resume checkpoint was trained with a different model config");
    state = *resume;
    state.train_config = cfg;
  } else {
    state.train_config = cfg;
    state.params = init_model<float>(cfg.model);
    state.opt = make_adam_state(state.params);
  }

  FitResult res;
  Checkpoint best = state;
  bool have_best = false;

  for (std::uint64_t epoch = state.epoch; epoch < static_cast<std::uint64_t>(cfg.epochs);
       ++epoch) {
    const std::uint64_t start = epoch == state.epoch ? state.batch_offset : 0;
    double total_sum = 0;
    std::size_t steps = 0;
    for (std::uint64_t b = start; b < per_epoch; ++b) {
      const Batch batch =
          make_batch(train, cfg.batch_size, cfg.patch_size, cfg.seed, epoch, b);
      const LossBreakdown lb = train_step(state.params, batch, state.opt, cfg);
      state.global_step += 1;
      state.batch_offset = b + 1;
      res.log.iters.push_back({state.global_step, lb.l1, lb.ssim_loss, lb.total});
      total_sum += lb.total;
      ++steps;
    }
    state.epoch = epoch + 1;
    state.batch_offset = 0;

    TrainLog::Epoch row{epoch + 1, steps ? total_sum / static_cast<double>(steps) : 0.0};
    const bool last_epoch = epoch + 1 == static_cast<std::uint64_t>(cfg.epochs);
    if (eval_set &&
        ((epoch + 1) % static_cast<std::uint64_t>(cfg.eval_every) == 0 || last_epoch)) {
      const auto [p, s] = evaluate_model(state.params, *eval_set);
      row.has_eval = true;
      row.psnr = p;
      row.ssim = s;
      if (p > state.best_psnr) {
        state.best_psnr = p;
        best = state;
        have_best = true;
        if (!out_dir.empty())
          save_checkpoint(best, (fs::path(out_dir) / "checkpoint_best.ckpt").string());
      }
    }
    res.log.epochs.push_back(row);
    if (!out_dir.empty() &&
        ((epoch + 1) % static_cast<std::uint64_t>(cfg.eval_every) == 0 || last_epoch))
      save_checkpoint(state, (fs::path(out_dir) / "checkpoint_last.ckpt").string());
  }

  res.final = std::move(state);
  res.best = have_best ? std::move(best) : res.final;
  return res;
}

std::vector<AblationRow> run_ablation(const PairIndex& train, const PairIndex* eval_set,
                                      const TrainConfig& base,
                                      const std::vector<Variant>& variants) {
  if (variants.empty()) throw precondition_error("run_ablation: empty variant list");

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v.name;
    try {
      TrainConfig cfg = base;
      cfg.model = v.model;
      row.params = param_count(cfg.model);
      FitResult r = fit(train, eval_set, cfg);
      const PairIndex& measure = eval_set ? *eval_set : train;
      const auto [p, s] = evaluate_model(r.final.params, measure);
      row.psnr = p;
      row.ssim = s;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  // when the grid varies only in depth, parameter counts must grow with it
  bool only_n_varies = true;
  for (const auto& v : variants) {
    ModelConfig c = v.model;
    c.num_mheb = base.model.num_mheb;
    ModelConfig c0 = variants.front().model;
    c0.num_mheb = base.model.num_mheb;
    if (!(c == c0)) only_n_varies = false;
  }
  if (only_n_varies && variants.size() > 1) {
    for (std::size_t i = 1; i < variants.size(); ++i) {
      if (variants[i].model.num_mheb > variants[i - 1].model.num_mheb &&
          rows[i].params <= rows[i - 1].params)
        throw std::logic_error("ablation: param_count not strictly increasing in num_mheb");
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,param_count,psnr_db,ssim,error\n";
  for (const auto& r : rows)
    os << r.variant << "," << r.params << "," << fmt(r.psnr) << "," << fmt(r.ssim) << ","
       << r.error << "\n";
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %12s %10s %8s\n", "variant", "params", "psnr",
                "ssim");
  os << buf;
  for (const auto& r : rows) {
    if (r.error.empty()) {
      std::snprintf(buf, sizeof(buf), "%-24s %12lld %10.3f %8.4f\n", r.variant.c_str(),
                    r.params, r.psnr, r.ssim);
      os << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "%-24s %12lld     FAILED: %s\n", r.variant.c_str(),
                    r.params, r.error.c_str());
      os << buf;
    }
  }
  return os.str();
}

}  // namespace mh2f

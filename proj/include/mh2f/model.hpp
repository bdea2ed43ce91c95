#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mh2f/autodiff.hpp"
#include "mh2f/config.hpp"
#include "mh2f/errors.hpp"
#include "mh2f/rng.hpp"
#include "mh2f/tensor.hpp"

// The deraining network: a 3x3 head extracts original features L_o, a stack of
// N multi-scale hourglass blocks produces deep features L_e plus the outputs
// of the first N-1 blocks (the hierarchy), the distillation block compresses
// the hierarchy into L_d, and the fusion stage combines (L_o, L_e, L_d) before
// a final 3x3 conv maps back to RGB.

namespace mh2f {

template <typename T>
struct Conv {
  Tensor<T> w;  // (oc, ic, kh, kw)
  Tensor<T> b;  // (1, oc, 1, 1)

  Conv() = default;
  Conv(int oc, int ic, int k) : w({oc, ic, k, k}), b({1, oc, 1, 1}) {}
};

template <typename T>
struct DcrParams {
  std::vector<Conv<T>> dense;  // kDcrDenseLayers convs, 3x3, widths grow
  Conv<T> project;             // 1x1 back to the block width

  DcrParams() = default;
  DcrParams(int channels, int growth) {
    for (int i = 0; i < kDcrDenseLayers; ++i)
      dense.emplace_back(growth, channels + i * growth, 3);
    project = Conv<T>(channels, channels + kDcrDenseLayers * growth, 1);
  }
};

template <typename T>
struct MhebParams {
  std::array<std::vector<DcrParams<T>>, 3> streams;  // full, half, quarter
  Conv<T> merge_half;  // 3x3 after quarter joins half
  Conv<T> merge_full;  // 3x3 after half joins full

  MhebParams() = default;
  MhebParams(int channels, int growth, int units) {
    for (auto& s : streams)
      for (int u = 0; u < units; ++u) s.emplace_back(channels, growth);
    merge_half = Conv<T>(channels, channels, 3);
    merge_full = Conv<T>(channels, channels, 3);
  }
};

template <typename T>
struct ChannelAttnParams {
  Conv<T> fc1;  // 1x1, C -> C/r, shared by the avg and max branches
  Conv<T> fc2;  // 1x1, C/r -> C

  ChannelAttnParams() = default;
  ChannelAttnParams(int channels, int reduction)
      : fc1(channels / reduction, channels, 1), fc2(channels, channels / reduction, 1) {}
};

template <typename T>
struct SpatialAttnParams {
  Conv<T> conv;  // 7x7, 2 -> 1

  SpatialAttnParams() = default;
  explicit SpatialAttnParams(int) : conv(1, 2, 7) {}
};

template <typename T>
struct HadbParams {
  Conv<T> head;  // 1x1, (N-1)C -> C
  ChannelAttnParams<T> ca;
  SpatialAttnParams<T> sa;
  Conv<T> end;  // 1x1, C -> C

  HadbParams() = default;
  HadbParams(int channels, int hierarchy_len, int reduction)
      : head(channels, hierarchy_len * channels, 1),
        ca(channels, reduction),
        sa(channels),
        end(channels, channels, 1) {}
};

template <typename T>
struct RpfParams {
  Conv<T> conv_res;   // 3x3 on R_ed
  Conv<T> conv_proj;  // 3x3 on F_ed
  Conv<T> conv_out;   // 3x3 on L_o - proj

  RpfParams() = default;
  explicit RpfParams(int channels)
      : conv_res(channels, channels, 3),
        conv_proj(channels, channels, 3),
        conv_out(channels, channels, 3) {}
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Conv<T> head;  // 3x3, 3 -> C
  std::vector<MhebParams<T>> mhebs;
  HadbParams<T> hadb;       // when use_hadb
  Conv<T> distill_concat;   // when !use_hadb: 3x3, (N-1)C -> C
  RpfParams<T> rpf;         // fusion_mode == rpf
  Conv<T> fuse;             // fusion_mode add: 3x3 C->C; concat: 1x1 3C->C
  Conv<T> out;              // 3x3, C -> 3
};

// Fixed traversal order: defines initialization, checkpoint layout and the
// optimizer state alignment. Fn(name, tensor, fan_in).
template <typename T, typename Fn>
void visit_conv(const std::string& name, Conv<T>& c, Fn&& fn) {
  const int fan_in = c.w.shape.c * c.w.shape.h * c.w.shape.w;
  fn(name + ".w", c.w, fan_in);
  fn(name + ".b", c.b, fan_in);
}

template <typename T, typename Fn>
void for_each_param(ModelParams<T>& p, Fn&& fn) {
  auto conv = [&](const std::string& name, Conv<T>& c) { visit_conv(name, c, fn); };
  conv("head", p.head);
  for (std::size_t i = 0; i < p.mhebs.size(); ++i) {
    const std::string mb = "mheb" + std::to_string(i);
    for (int s = 0; s < 3; ++s)
      for (std::size_t u = 0; u < p.mhebs[i].streams[s].size(); ++u) {
        const std::string du = mb + ".s" + std::to_string(s) + ".dcr" + std::to_string(u);
        auto& d = p.mhebs[i].streams[s][u];
        for (std::size_t l = 0; l < d.dense.size(); ++l)
          conv(du + ".dense" + std::to_string(l), d.dense[l]);
        conv(du + ".project", d.project);
      }
    conv(mb + ".merge_half", p.mhebs[i].merge_half);
    conv(mb + ".merge_full", p.mhebs[i].merge_full);
  }
  if (p.config.use_hadb) {
    conv("hadb.head", p.hadb.head);
    conv("hadb.ca.fc1", p.hadb.ca.fc1);
    conv("hadb.ca.fc2", p.hadb.ca.fc2);
    conv("hadb.sa.conv", p.hadb.sa.conv);
    conv("hadb.end", p.hadb.end);
  } else {
    conv("distill_concat", p.distill_concat);
  }
  switch (p.config.fusion_mode) {
    case FusionMode::rpf:
      conv("rpf.conv_res", p.rpf.conv_res);
      conv("rpf.conv_proj", p.rpf.conv_proj);
      conv("rpf.conv_out", p.rpf.conv_out);
      break;
    case FusionMode::add:
    case FusionMode::concat:
      conv("fuse", p.fuse);
      break;
  }
  conv("out", p.out);
}

template <typename T, typename Fn>
void for_each_param(const ModelParams<T>& p, Fn&& fn) {
  for_each_param(const_cast<ModelParams<T>&>(p),
                 [&](const std::string& name, Tensor<T>& t, int fan_in) {
                   fn(name, static_cast<const Tensor<T>&>(t), fan_in);
                 });
}

// Allocates all parameter tensors (zero-filled) for a config. Shapes are a
// pure function of the config.
template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
  require_valid_model_config(cfg);
  if (cfg.num_mheb < 2)
    throw config_error(
        "num_mheb must be >= 2: the distillation stage consumes the outputs of the first "
        "N-1 blocks");
  const int C = cfg.base_channels;
  ModelParams<T> p;
  p.config = cfg;
  p.head = Conv<T>(C, 3, 3);
  for (int i = 0; i < cfg.num_mheb; ++i)
    p.mhebs.emplace_back(C, cfg.growth(), cfg.dcr_units_per_stream);
  const int hier = cfg.num_mheb - 1;
  if (cfg.use_hadb) {
    p.hadb = HadbParams<T>(C, hier, cfg.attention_reduction);
  } else {
    p.distill_concat = Conv<T>(C, hier * C, 3);
  }
  switch (cfg.fusion_mode) {
    case FusionMode::rpf:
      p.rpf = RpfParams<T>(C);
      break;
    case FusionMode::add:
      p.fuse = Conv<T>(C, C, 3);
      break;
    case FusionMode::concat:
      p.fuse = Conv<T>(C, 3 * C, 1);
      break;
  }
  p.out = Conv<T>(3, C, 3);
  return p;
}

// Fan-in-scaled uniform initialization, fully determined by cfg.seed.
template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg) {
  ModelParams<T> p = make_params<T>(cfg);
  Rng rng(mix_seed(cfg.seed, 0x6d6832665f696e69ULL));
  for_each_param(p, [&](const std::string&, Tensor<T>& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

template <typename T>
long long param_count(ModelParams<T>& p) {
  long long total = 0;
  for_each_param(p, [&](const std::string&, Tensor<T>& t, int) {
    total += static_cast<long long>(t.numel());
  });
  return total;
}

inline long long param_count(const ModelConfig& cfg) {
  auto p = make_params<float>(cfg);
  return param_count(p);
}

// ---- graph emission ---------------------------------------------------------

// Binds parameter tensors to tape leaves; the same tensor is pushed once.
template <typename T>
struct EmitCtx {
  Tape<T>& tape;
  bool train = false;
  std::unordered_map<const void*, int> ids;
  std::vector<int> param_order;  // leaf ids in for_each_param order

  explicit EmitCtx(Tape<T>& t) : tape(t) {}

  void bind(ModelParams<T>& p) {
    for_each_param(p, [&](const std::string& name, Tensor<T>& t, int) {
      const int id = tape.leaf(t, train, name);
      ids.emplace(&t, id);
      param_order.push_back(id);
    });
  }

  int id(const Tensor<T>& t) const {
    auto it = ids.find(&t);
    if (it == ids.end()) throw precondition_error("parameter tensor not bound to tape");
    return it->second;
  }

  int conv(int x, const Conv<T>& c, int pad) {
    return tape.conv2d(x, id(c.w), id(c.b), pad);
  }
};

template <typename T>
int emit_dcr(EmitCtx<T>& ctx, int x, const DcrParams<T>& p) {
  Tape<T>& t = ctx.tape;
  int cat = x;
  for (const auto& layer : p.dense) {
    int y = t.silu(ctx.conv(cat, layer, 1));
    cat = t.concat_c({cat, y});
  }
  return t.add(x, ctx.conv(cat, p.project, 0));
}

template <typename T>
int emit_mheb(EmitCtx<T>& ctx, int x, const MhebParams<T>& p) {
  Tape<T>& t = ctx.tape;
  const Shape s = t.val(x).shape;
  if (s.h % 4 != 0 || s.w % 4 != 0)
    throw precondition_error("mheb: spatial dims must be divisible by 4, got " + s.str());
  int s1 = x;
  int s2 = t.avg_pool(x, 2);
  int s3 = t.avg_pool(x, 4);
  for (const auto& d : p.streams[0]) s1 = emit_dcr(ctx, s1, d);
  for (const auto& d : p.streams[1]) s2 = emit_dcr(ctx, s2, d);
  for (const auto& d : p.streams[2]) s3 = emit_dcr(ctx, s3, d);
  const int m2 = ctx.conv(t.add(s2, t.nearest_up(s3, 2)), p.merge_half, 1);
  return ctx.conv(t.add(s1, t.nearest_up(m2, 2)), p.merge_full, 1);
}

template <typename T>
struct ShgOut {
  int deep;                    // L_e
  std::vector<int> hierarchy;  // outputs of the first N-1 blocks
};

template <typename T>
ShgOut<T> emit_shg(EmitCtx<T>& ctx, int x, const std::vector<MhebParams<T>>& mhebs) {
  if (mhebs.empty()) throw config_error("shg: needs at least one block");
  ShgOut<T> out;
  int cur = x;
  for (std::size_t i = 0; i < mhebs.size(); ++i) {
    cur = emit_mheb(ctx, cur, mhebs[i]);
    if (i + 1 < mhebs.size()) out.hierarchy.push_back(cur);
  }
  out.deep = cur;
  return out;
}

template <typename T>
int emit_channel_attention(EmitCtx<T>& ctx, int x, const ChannelAttnParams<T>& p) {
  Tape<T>& t = ctx.tape;
  const Shape s = t.val(x).shape;
  if (s.c != p.fc1.w.shape.c)
    throw config_error("channel_attention: input has " + std::to_string(s.c) +
                       " channels, params expect " + std::to_string(p.fc1.w.shape.c));
  auto bottleneck = [&](int v) { return ctx.conv(t.silu(ctx.conv(v, p.fc1, 0)), p.fc2, 0); };
  const int gate =
      t.sigmoid(t.add(bottleneck(t.global_avg_c(x)), bottleneck(t.global_max_c(x))));
  return t.mul_bc_channel(x, gate);
}

template <typename T>
int emit_spatial_attention(EmitCtx<T>& ctx, int x, const SpatialAttnParams<T>& p) {
  Tape<T>& t = ctx.tape;
  const int cat = t.concat_c({t.mean_over_c(x), t.max_over_c(x)});
  const int mask = t.sigmoid(ctx.conv(cat, p.conv, 3));
  return t.mul_bc_spatial(x, mask);
}

template <typename T>
int emit_hadb(EmitCtx<T>& ctx, const std::vector<int>& hierarchy, const HadbParams<T>& p) {
  if (hierarchy.empty()) throw precondition_error("hadb: empty hierarchy");
  Tape<T>& t = ctx.tape;
  int h = ctx.conv(t.concat_c(hierarchy), p.head, 0);
  h = emit_channel_attention(ctx, h, p.ca);
  h = emit_spatial_attention(ctx, h, p.sa);
  return ctx.conv(h, p.end, 0);
}

template <typename T>
int emit_rpf(EmitCtx<T>& ctx, int lo, int le, int ld, const RpfParams<T>& p) {
  Tape<T>& t = ctx.tape;
  const int residual = t.sub(le, ld);
  const int fed = t.add(ctx.conv(residual, p.conv_res, 1), le);
  const int projected = ctx.conv(fed, p.conv_proj, 1);
  return ctx.conv(t.sub(lo, projected), p.conv_out, 1);
}

template <typename T>
int emit_fuse_baseline(EmitCtx<T>& ctx, int lo, int le, int ld, FusionMode mode,
                       const Conv<T>& fuse) {
  Tape<T>& t = ctx.tape;
  if (mode == FusionMode::add) return ctx.conv(t.add(t.add(lo, le), ld), fuse, 1);
  if (mode == FusionMode::concat) return ctx.conv(t.concat_c({lo, le, ld}), fuse, 0);
  throw config_error("fuse_baseline: mode must be add or concat");
}

// Full forward pass; returns the output node (unclamped RGB prediction).
template <typename T>
int emit_model(EmitCtx<T>& ctx, ModelParams<T>& p, int input) {
  Tape<T>& t = ctx.tape;
  const int lo = ctx.conv(input, p.head, 1);
  t.set_label(lo, "L_o");
  ShgOut<T> shg = emit_shg(ctx, lo, p.mhebs);
  t.set_label(shg.deep, "L_e");
  int ld;
  if (p.config.use_hadb) {
    ld = emit_hadb(ctx, shg.hierarchy, p.hadb);
  } else {
    ld = ctx.conv(t.concat_c(shg.hierarchy), p.distill_concat, 1);
  }
  t.set_label(ld, "L_d");
  int fused;
  if (p.config.fusion_mode == FusionMode::rpf)
    fused = emit_rpf(ctx, lo, shg.deep, ld, p.rpf);
  else
    fused = emit_fuse_baseline(ctx, lo, shg.deep, ld, p.config.fusion_mode, p.fuse);
  t.set_label(fused, "fused");
  const int out = ctx.conv(fused, p.out, 1);
  t.set_label(out, "output");
  return out;
}

// ---- standalone forwards (value-only) ----------------------------------------

template <typename T>
Tensor<T> conv_head(const Tensor<T>& image, const Conv<T>& head) {
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  const int w = tape.leaf(head.w), b = tape.leaf(head.b);
  return tape.val(tape.conv2d(tape.leaf(image), w, b, 1));
}

template <typename T>
Tensor<T> dcr_forward(const Tensor<T>& x, const DcrParams<T>& p) {
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  for (const auto& d : p.dense) {
    ctx.ids.emplace(&d.w, tape.leaf(d.w));
    ctx.ids.emplace(&d.b, tape.leaf(d.b));
  }
  ctx.ids.emplace(&p.project.w, tape.leaf(p.project.w));
  ctx.ids.emplace(&p.project.b, tape.leaf(p.project.b));
  return tape.val(emit_dcr(ctx, tape.leaf(x), p));
}

template <typename T>
Tensor<T> downsample(const Tensor<T>& x, int factor) {
  if (factor != 2 && factor != 4)
    throw precondition_error("downsample: factor must be 2 or 4");
  Tape<T> tape;
  return tape.val(tape.avg_pool(tape.leaf(x), factor));
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, int factor) {
  if (factor != 2 && factor != 4)
    throw precondition_error("nearest_upsample: factor must be 2 or 4");
  Tape<T> tape;
  return tape.val(tape.nearest_up(tape.leaf(x), factor));
}

template <typename T>
Tensor<T> mheb_forward(const Tensor<T>& x, const MhebParams<T>& p) {
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  for (const auto& stream : p.streams)
    for (const auto& d : stream) {
      for (const auto& layer : d.dense) {
        ctx.ids.emplace(&layer.w, tape.leaf(layer.w));
        ctx.ids.emplace(&layer.b, tape.leaf(layer.b));
      }
      ctx.ids.emplace(&d.project.w, tape.leaf(d.project.w));
      ctx.ids.emplace(&d.project.b, tape.leaf(d.project.b));
    }
  for (const Conv<T>* c : {&p.merge_half, &p.merge_full}) {
    ctx.ids.emplace(&c->w, tape.leaf(c->w));
    ctx.ids.emplace(&c->b, tape.leaf(c->b));
  }
  return tape.val(emit_mheb(ctx, tape.leaf(x), p));
}

template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> shg_forward(
    const Tensor<T>& lo, const std::vector<MhebParams<T>>& mhebs) {
  if (mhebs.empty()) throw config_error("shg_forward: N must be >= 1");
  std::vector<Tensor<T>> hierarchy;
  Tensor<T> cur = lo;
  for (std::size_t i = 0; i < mhebs.size(); ++i) {
    cur = mheb_forward(cur, mhebs[i]);
    if (i + 1 < mhebs.size()) hierarchy.push_back(cur);
  }
  return {cur, hierarchy};
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttnParams<T>& p) {
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  for (const Conv<T>* c : {&p.fc1, &p.fc2}) {
    ctx.ids.emplace(&c->w, tape.leaf(c->w));
    ctx.ids.emplace(&c->b, tape.leaf(c->b));
  }
  return tape.val(emit_channel_attention(ctx, tape.leaf(x), p));
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const SpatialAttnParams<T>& p) {
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  ctx.ids.emplace(&p.conv.w, tape.leaf(p.conv.w));
  ctx.ids.emplace(&p.conv.b, tape.leaf(p.conv.b));
  return tape.val(emit_spatial_attention(ctx, tape.leaf(x), p));
}

template <typename T>
Tensor<T> hadb_forward(const std::vector<Tensor<T>>& hierarchy, const HadbParams<T>& p) {
  if (hierarchy.empty()) throw precondition_error("hadb_forward: empty hierarchy");
  for (const auto& h : hierarchy)
    if (!(h.shape == hierarchy.front().shape))
      throw precondition_error("hadb_forward: mixed hierarchy shapes " +
                               hierarchy.front().shape.str() + " vs " + h.shape.str());
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  for (const Conv<T>* c : {&p.head, &p.ca.fc1, &p.ca.fc2, &p.sa.conv, &p.end}) {
    ctx.ids.emplace(&c->w, tape.leaf(c->w));
    ctx.ids.emplace(&c->b, tape.leaf(c->b));
  }
  std::vector<int> ids;
  for (const auto& h : hierarchy) ids.push_back(tape.leaf(h));
  return tape.val(emit_hadb(ctx, ids, p));
}

template <typename T>
Tensor<T> rpf_fuse(const Tensor<T>& lo, const Tensor<T>& le, const Tensor<T>& ld,
                   const RpfParams<T>& p) {
  if (!(lo.shape == le.shape) || !(lo.shape == ld.shape))
    throw precondition_error("rpf_fuse: inputs must share a shape");
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  for (const Conv<T>* c : {&p.conv_res, &p.conv_proj, &p.conv_out}) {
    ctx.ids.emplace(&c->w, tape.leaf(c->w));
    ctx.ids.emplace(&c->b, tape.leaf(c->b));
  }
  return tape.val(emit_rpf(ctx, tape.leaf(lo), tape.leaf(le), tape.leaf(ld), p));
}

template <typename T>
Tensor<T> fuse_baseline(const Tensor<T>& lo, const Tensor<T>& le, const Tensor<T>& ld,
                        FusionMode mode, const Conv<T>& fuse) {
  if (!(lo.shape == le.shape) || !(lo.shape == ld.shape))
    throw precondition_error("fuse_baseline: inputs must share a shape");
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  ctx.ids.emplace(&fuse.w, tape.leaf(fuse.w));
  ctx.ids.emplace(&fuse.b, tape.leaf(fuse.b));
  return tape.val(
      emit_fuse_baseline(ctx, tape.leaf(lo), tape.leaf(le), tape.leaf(ld), mode, fuse));
}

// Inference entry point. Clamps to [0,1] unless building a loss on top.
template <typename T>
Tensor<T> mh2f_forward(const Tensor<T>& rainy, ModelParams<T>& params,
                       bool clamp_output = true) {
  validate_model_input(rainy);
  Tape<T> tape;
  EmitCtx<T> ctx(tape);
  ctx.bind(params);
  const int out = emit_model(ctx, params, tape.leaf(rainy));
  Tensor<T> y = tape.val(out);
  return clamp_output ? clamp01(std::move(y)) : y;
}

}  // namespace mh2f

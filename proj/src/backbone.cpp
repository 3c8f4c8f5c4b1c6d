#include "vidswap/backbone.hpp"

#include <cmath>

#include "vidswap/errors.hpp"
#include "vidswap/tensor_types.hpp"

namespace F = torch::nn::functional;

namespace vidswap {

torch::Tensor attend(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  VF_CHECK(q.size(-1) == k.size(-1) && k.size(-2) == v.size(-2), ContractError,
           "attend: incompatible q/k/v shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto w = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
  return torch::matmul(w, v);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t qd, int64_t cd, int64_t h)
    : query_dim(qd), context_dim(cd), heads(h) {
  VF_CHECK(heads >= 1 && query_dim % heads == 0, ConfigError,
           "attention width must be divisible by the head count");
  to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(qd, qd).bias(false)));
  to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(cd, qd).bias(false)));
  to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(cd, qd).bias(false)));
  to_out = register_module("to_out", torch::nn::Linear(qd, qd));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  VF_CHECK(x.size(-1) == query_dim, ContractError, "attention query width mismatch");
  VF_CHECK(context.size(-1) == context_dim, ContractError,
           "attention context width " + std::to_string(context.size(-1)) + " != " +
               std::to_string(context_dim));
  const auto N = x.size(0), Lq = x.size(1), Lk = context.size(1), dh = query_dim / heads;
  auto split = [&](const torch::Tensor& t, int64_t L) {
    return t.view({N, L, heads, dh}).transpose(1, 2);
  };
  auto o = attend(split(to_q(x), Lq), split(to_k(context), Lk), split(to_v(context), Lk));
  return to_out(o.transpose(1, 2).reshape({N, Lq, query_dim}));
}

torch::Tensor cross_attention(MultiHeadAttention& attn, const torch::Tensor& feature_map,
                              const torch::Tensor& tokens) {
  VF_CHECK(feature_map.dim() == 4 && tokens.dim() == 3, ContractError,
           "cross_attention expects [N, C, H, W] and [N, L, D]");
  VF_CHECK(tokens.size(-1) == attn->context_dim, ContractError,
           "cross_attention: token width does not match the context width");
  const auto N = feature_map.size(0), C = feature_map.size(1), H = feature_map.size(2),
             W = feature_map.size(3);
  auto q = feature_map.flatten(2).transpose(1, 2);
  auto out = attn->forward(q, tokens);
  return out.transpose(1, 2).reshape({N, C, H, W});
}

SpatialTransformerImpl::SpatialTransformerImpl(int64_t c, int64_t heads, int64_t context_dim,
                                               bool cross, int64_t groups) {
  norm = register_module("norm", make_group_norm(c, groups));
  proj_in = register_module("proj_in", torch::nn::Linear(c, c));
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
  self_attn = register_module("self_attn", MultiHeadAttention(c, c, heads));
  if (cross) {
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
    cross_attn = register_module("cross_attn", MultiHeadAttention(c, context_dim, heads));
  }
  ln3 = register_module("ln3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
  ff1 = register_module("ff1", torch::nn::Linear(c, 4 * c));
  ff2 = register_module("ff2", torch::nn::Linear(4 * c, c));
  proj_out = register_module("proj_out", torch::nn::Linear(c, c));
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  auto h = proj_in(norm(x).flatten(2).transpose(1, 2));
  auto n1 = ln1(h);
  h = h + self_attn(n1, n1);
  if (cross_attn) {
    VF_CHECK(context.defined(), ContractError, "cross-attention needs context tokens");
    VF_CHECK(context.size(0) == N, ContractError,
             "context batch " + std::to_string(context.size(0)) + " != " + std::to_string(N));
    h = h + cross_attn(ln2(h), context);
  }
  h = h + ff2(F::gelu(ff1(ln3(h))));
  return x + proj_out(h).transpose(1, 2).reshape({N, C, H, W});
}

TemporalAttentionImpl::TemporalAttentionImpl(int64_t channels, int64_t heads,
                                             int64_t max_positions) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  attn = register_module("attn", MultiHeadAttention(channels, channels, heads));
  torch::NoGradGuard ng;
  attn->to_out->weight.zero_();
  attn->to_out->bias.zero_();
  pos = register_buffer(
      "pos", sinusoidal_embedding(torch::arange(max_positions), channels).to(torch::kFloat32));
}

torch::Tensor TemporalAttentionImpl::forward(const torch::Tensor& x, int64_t frames,
                                             const torch::Tensor& motion, int64_t motion_frames) {
  const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  VF_CHECK(frames >= 1 && N % frames == 0, ContractError, "temporal attention: bad frame count");
  const auto B = N / frames;
  auto to_seq = [&](const torch::Tensor& t, int64_t len) {
    return t.view({B, len, C, H, W}).permute({0, 3, 4, 1, 2}).reshape({B * H * W, len, C});
  };
  auto cur = to_seq(x, frames);
  torch::Tensor seq = cur;
  if (motion.defined() && motion_frames > 0) {
    VF_CHECK(motion.size(0) == B * motion_frames && motion.size(1) == C &&
                 motion.size(2) == H && motion.size(3) == W,
             ContractError, "motion features do not match the site: " + shape_string(motion));
    seq = torch::cat({to_seq(motion.to(x.dtype()), motion_frames), cur}, 1);
  }
  const auto L = seq.size(1);
  VF_CHECK(L <= pos.size(0), ContractError, "temporal window exceeds the position table");
  last_kv_length = L;
  auto normed = norm(seq) + pos.slice(0, 0, L).to(x.dtype());
  auto q = normed.slice(1, L - frames, L);
  auto y = cur + attn(q, normed);
  return y.view({B, H, W, frames, C}).permute({0, 3, 4, 1, 2}).reshape({N, C, H, W});
}

void UNetConfig::validate() const {
  VF_CHECK(!channels.empty() && channels.size() == attention.size(), ConfigError,
           "UNet channels and attention flags must have the same length");
  VF_CHECK(in_channels > 0 && out_channels > 0 && heads > 0 && temb_dim > 0, ConfigError,
           "UNet dimensions must be positive");
  for (auto c : channels) {
    VF_CHECK(c > 0 && c % heads == 0, ConfigError, "UNet widths must be divisible by heads");
  }
}

UNetImpl::UNetImpl(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& ch = cfg_.channels;
  const auto L = ch.size();
  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.in_channels, ch[0], 3).padding(1)));
  time1 = register_module("time1", torch::nn::Linear(ch[0], cfg_.temb_dim));
  time2 = register_module("time2", torch::nn::Linear(cfg_.temb_dim, cfg_.temb_dim));
  int64_t prev = ch[0];
  for (size_t l = 0; l < L; ++l) {
    const auto name = std::to_string(l);
    down_res.push_back(register_module("down_res" + name,
                                       ResBlock2d(prev, ch[l], cfg_.temb_dim, cfg_.groups)));
    if (cfg_.attention[l]) {
      down_attn.push_back(register_module(
          "down_attn" + name, SpatialTransformer(ch[l], cfg_.heads, cfg_.context_dim,
                                                 cfg_.cross_attention, cfg_.groups)));
      down_temporal.push_back(
          cfg_.temporal ? register_module("down_temporal" + name,
                                          TemporalAttention(ch[l], cfg_.heads))
                        : TemporalAttention(nullptr));
      site_names_.push_back("down" + name);
    } else {
      down_attn.push_back(nullptr);
      down_temporal.push_back(nullptr);
    }
    if (l + 1 < L) downs.push_back(register_module("down" + name, Downsample2d(ch[l])));
    prev = ch[l];
  }
  mid_res1 = register_module("mid_res1", ResBlock2d(prev, prev, cfg_.temb_dim, cfg_.groups));
  mid_attn = register_module("mid_attn", SpatialTransformer(prev, cfg_.heads, cfg_.context_dim,
                                                            cfg_.cross_attention, cfg_.groups));
  if (cfg_.temporal) mid_temporal = register_module("mid_temporal", TemporalAttention(prev, cfg_.heads));
  site_names_.push_back("mid");
  if (cfg_.reference) return;
  mid_res2 = register_module("mid_res2", ResBlock2d(prev, prev, cfg_.temb_dim, cfg_.groups));
  up_res.resize(L, nullptr);
  ups.resize(L, nullptr);
  for (size_t i = L; i-- > 0;) {
    const auto name = std::to_string(i);
    const int64_t below = (i + 1 == L) ? ch[i] : ch[i + 1];
    up_res[i] = register_module("up_res" + name,
                                ResBlock2d(below + ch[i], ch[i], cfg_.temb_dim, cfg_.groups));
    if (i > 0) ups[i] = register_module("up" + name, Upsample2d(ch[i]));
  }
  norm_out = register_module("norm_out", make_group_norm(ch[0], cfg_.groups));
  conv_out = register_module(
      "conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[0], cfg_.out_channels, 3).padding(1)));
  // Small output head: an untrained predictor starts near zero.
  torch::NoGradGuard ng;
  conv_out->weight.mul_(0.1);
  conv_out->bias.zero_();
}

torch::Tensor UNetImpl::time_embedding(const torch::Tensor& t) {
  auto e = sinusoidal_embedding(t.to(torch::kLong), cfg_.channels[0]).to(torch::kFloat32);
  return time2(torch::silu(time1(e.to(time1->weight.dtype()))));
}

torch::Tensor UNetImpl::run_site(const std::string& name, SpatialTransformer& attn,
                                 TemporalAttention& temporal, const torch::Tensor& h,
                                 const torch::Tensor& context, int64_t frames, DenoiseMode mode,
                                 const MotionFeatureCache* cache, DenoiseTrace* trace,
                                 MotionFeatureCache* capture) {
  auto out = attn(h, cfg_.cross_attention ? context : torch::Tensor());
  if (capture) capture->features[name] = out;
  if (mode == DenoiseMode::video && temporal) {
    VF_CHECK(cache != nullptr && !cache->empty(), ContractError,
             "video mode needs a motion feature cache");
    auto it = cache->features.find(name);
    VF_CHECK(it != cache->features.end(), ContractError, "motion cache lacks site " + name);
    out = temporal(out, frames, it->second, cache->motion_frames);
    if (trace) trace->kv_lengths.push_back(temporal->last_kv_length);
  }
  return out;
}

torch::Tensor UNetImpl::run(const torch::Tensor& x, const torch::Tensor& t,
                            const torch::Tensor& context, int64_t frames, DenoiseMode mode,
                            const MotionFeatureCache* cache, DenoiseTrace* trace,
                            MotionFeatureCache* capture) {
  VF_CHECK(x.dim() == 4 && x.size(1) == cfg_.in_channels, ContractError,
           "UNet expects [N, " + std::to_string(cfg_.in_channels) + ", h, w], got " +
               shape_string(x));
  VF_CHECK(frames >= 1 && x.size(0) % frames == 0, ContractError, "UNet: bad frame count");
  const int64_t factor = int64_t{1} << (cfg_.channels.size() - 1);
  VF_CHECK(x.size(2) % factor == 0 && x.size(3) % factor == 0, ContractError,
           "UNet: latent size not divisible by the level count");
  VF_CHECK(t.numel() == x.size(0), ContractError, "UNet: one timestep per frame required");
  if (mode == DenoiseMode::image) {
    VF_CHECK(frames == 1, ContractError, "image mode requires T = 1");
  }
  auto temb = time_embedding(t);
  auto h = conv_in(x);
  std::vector<torch::Tensor> skips;
  const auto L = cfg_.channels.size();
  for (size_t l = 0; l < L; ++l) {
    h = down_res[l](h, temb);
    if (down_attn[l]) {
      h = run_site("down" + std::to_string(l), down_attn[l], down_temporal[l], h, context, frames,
                   mode, cache, trace, capture);
    }
    skips.push_back(h);
    if (l + 1 < L) h = downs[l](h);
  }
  h = mid_res1(h, temb);
  h = run_site("mid", mid_attn, mid_temporal, h, context, frames, mode, cache, trace, capture);
  if (cfg_.reference) return h;
  h = mid_res2(h, temb);
  for (size_t i = L; i-- > 0;) {
    h = up_res[i](torch::cat({h, skips[i]}, 1), temb);
    if (i > 0) h = ups[i](h);
  }
  return conv_out(torch::silu(norm_out(h)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t,
                                const torch::Tensor& context, int64_t frames, DenoiseMode mode,
                                const MotionFeatureCache* cache, DenoiseTrace* trace) {
  VF_CHECK(!cfg_.reference, ContractError, "reference network has no denoising head");
  return run(x, t, context, frames, mode, cache, trace, nullptr);
}

MotionFeatureCache UNetImpl::extract(const torch::Tensor& x, int64_t frames) {
  MotionFeatureCache cache;
  auto t = torch::zeros({x.size(0)}, torch::kLong);
  run(x, t, torch::Tensor(), frames, DenoiseMode::video, nullptr, nullptr, &cache);
  cache.motion_frames = frames;
  return cache;
}

std::vector<torch::Tensor> UNetImpl::temporal_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& m : down_temporal) {
    if (m) for (auto& p : m->parameters()) out.push_back(p);
  }
  if (mid_temporal) for (auto& p : mid_temporal->parameters()) out.push_back(p);
  return out;
}

std::vector<torch::Tensor> UNetImpl::spatial_parameters() const {
  const auto temporal = temporal_parameters();
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    bool is_temporal = false;
    for (const auto& q : temporal) is_temporal = is_temporal || p.is_same(q);
    if (!is_temporal) out.push_back(p);
  }
  return out;
}

UNetConfig reference_config(const UNetConfig& backbone, int64_t latent_channels) {
  UNetConfig c = backbone;
  c.in_channels = latent_channels;
  c.temporal = false;
  c.cross_attention = false;
  c.reference = true;
  return c;
}

MotionFeatureCache reference_forward(UNet& refnet, const torch::Tensor& motion_latents,
                                     int64_t motion_frames) {
  VF_CHECK(motion_frames >= 1, ContractError,
           "reference_forward needs at least one motion frame (use zero frames)");
  VF_CHECK(motion_latents.size(0) % motion_frames == 0, ContractError,
           "motion latents do not split into clips of M frames");
  return refnet->extract(motion_latents, motion_frames);
}

}  // namespace vidswap

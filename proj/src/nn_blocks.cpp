#include "vidswap/nn_blocks.hpp"

#include <cmath>

#include "vidswap/errors.hpp"

namespace F = torch::nn::functional;

namespace vidswap {

int64_t norm_groups(int64_t channels, int64_t preferred) {
  for (int64_t g = std::min(preferred, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::nn::GroupNorm make_group_norm(int64_t channels, int64_t preferred_groups) {
  return torch::nn::GroupNorm(
      torch::nn::GroupNormOptions(norm_groups(channels, preferred_groups), channels).eps(1e-6));
}

ResBlock2dImpl::ResBlock2dImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim, int64_t groups) {
  norm1 = register_module("norm1", make_group_norm(in_ch, groups));
  conv1 = register_module("conv1",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
  norm2 = register_module("norm2", make_group_norm(out_ch, groups));
  conv2 = register_module("conv2",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
  if (in_ch != out_ch) {
    skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1)));
  }
  if (temb_dim > 0) {
    temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out_ch));
  }
}

torch::Tensor ResBlock2dImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(torch::silu(norm1(x)));
  if (temb_proj && temb.defined()) {
    h = h + temb_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  }
  h = conv2(torch::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

TemporalResBlockImpl::TemporalResBlockImpl(int64_t channels, int64_t groups) {
  norm1 = register_module("norm1", make_group_norm(channels, groups));
  conv1 = register_module("conv1", torch::nn::Conv1d(torch::nn::Conv1dOptions(channels, channels, 3)));
  norm2 = register_module("norm2", make_group_norm(channels, groups));
  conv2 = register_module("conv2", torch::nn::Conv1d(torch::nn::Conv1dOptions(channels, channels, 3)));
  // A fresh block is an identity map.
  torch::NoGradGuard ng;
  conv2->weight.zero_();
  conv2->bias.zero_();
}

namespace {

// [B*T, C, H, W] <-> [B, C, T, H, W] <-> [B*H*W, C, T]
torch::Tensor frames_to_clip(const torch::Tensor& x, int64_t frames) {
  return x.view({x.size(0) / frames, frames, x.size(1), x.size(2), x.size(3)}).permute({0, 2, 1, 3, 4});
}

torch::Tensor clip_to_sequences(const torch::Tensor& c) {
  const auto b = c.size(0), ch = c.size(1), t = c.size(2), h = c.size(3), w = c.size(4);
  return c.permute({0, 3, 4, 1, 2}).reshape({b * h * w, ch, t});
}

torch::Tensor sequences_to_clip(const torch::Tensor& s, int64_t b, int64_t h, int64_t w) {
  return s.view({b, h, w, s.size(1), s.size(2)}).permute({0, 3, 4, 1, 2});
}

}  // namespace

torch::Tensor TemporalResBlockImpl::forward(const torch::Tensor& x, int64_t frames) {
  VF_CHECK(frames >= 2, ContractError, "temporal block needs at least two frames");
  VF_CHECK(x.size(0) % frames == 0, ContractError, "temporal block: bad frame count");
  const auto b = x.size(0) / frames, h = x.size(2), w = x.size(3);
  // Normalisation statistics span the whole clip, not a single pixel's
  // few frames.
  auto pad = F::PadFuncOptions({1, 1}).mode(torch::kReflect);
  auto clip = frames_to_clip(x, frames);
  auto y = conv1(F::pad(clip_to_sequences(torch::silu(norm1(clip))), pad));
  y = sequences_to_clip(y, b, h, w);
  y = conv2(F::pad(clip_to_sequences(torch::silu(norm2(y))), pad));
  auto out = clip + sequences_to_clip(y, b, h, w);
  return out.permute({0, 2, 1, 3, 4}).reshape({b * frames, x.size(1), h, w});
}

Downsample2dImpl::Downsample2dImpl(int64_t channels) {
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).stride(2).padding(1)));
}

torch::Tensor Downsample2dImpl::forward(const torch::Tensor& x) { return conv(x); }

Upsample2dImpl::Upsample2dImpl(int64_t channels) {
  conv = register_module("conv",
                         torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor Upsample2dImpl::forward(const torch::Tensor& x) {
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kNearest));
  return conv(up);
}

torch::Tensor frames_to_sequences(const torch::Tensor& x, int64_t frames) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  VF_CHECK(n % frames == 0, ContractError, "batch not divisible by frame count");
  const auto b = n / frames;
  return x.view({b, frames, c, h, w}).permute({0, 3, 4, 2, 1}).reshape({b * h * w, c, frames});
}

torch::Tensor sequences_to_frames(const torch::Tensor& x, int64_t frames, int64_t height,
                                  int64_t width) {
  const auto c = x.size(1);
  const auto b = x.size(0) / (height * width);
  return x.view({b, height, width, c, frames})
      .permute({0, 4, 3, 1, 2})
      .reshape({b * frames, c, height, width});
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim) {
  const int64_t half = dim / 2;
  auto opts = torch::TensorOptions(torch::kFloat64);
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / std::max<int64_t>(half, 1));
  auto args = positions.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
  return emb;
}

void copy_matching_parameters(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard guard;
  auto sp = src.named_parameters(true);
  for (auto& item : dst.named_parameters(true)) {
    const auto* found = sp.find(item.key());
    VF_CHECK(found != nullptr, ContractError, "source lacks parameter " + item.key());
    item.value().copy_(*found);
  }
  auto sb = src.named_buffers(true);
  for (auto& item : dst.named_buffers(true)) {
    const auto* found = sb.find(item.key());
    VF_CHECK(found != nullptr, ContractError, "source lacks buffer " + item.key());
    item.value().copy_(*found);
  }
}

}  // namespace vidswap

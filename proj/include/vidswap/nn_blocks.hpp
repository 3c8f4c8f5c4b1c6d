#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace vidswap {

/// Largest group count <= preferred that divides channels.
int64_t norm_groups(int64_t channels, int64_t preferred = 8);

torch::nn::GroupNorm make_group_norm(int64_t channels, int64_t preferred_groups = 8);

/// 2D residual block. When temb_dim > 0 a projected time embedding is added
/// after the first convolution.
struct ResBlock2dImpl : torch::nn::Module {
  ResBlock2dImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim = 0, int64_t groups = 8);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock2d);

/// Residual block over the frame axis only: two kernel-3 Conv1d layers with
/// reflection padding in time. Group norms take statistics over the whole
/// clip. The second conv starts at zero, so a fresh block is the identity.
/// Input [B*T, C, H, W].
struct TemporalResBlockImpl : torch::nn::Module {
  TemporalResBlockImpl(int64_t channels, int64_t groups = 8);
  torch::Tensor forward(const torch::Tensor& x, int64_t frames);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv1d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(TemporalResBlock);

struct Downsample2dImpl : torch::nn::Module {
  explicit Downsample2dImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Downsample2d);

struct Upsample2dImpl : torch::nn::Module {
  explicit Upsample2dImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample2d);

/// [B*T, C, H, W] -> [B*H*W, C, T] and back.
torch::Tensor frames_to_sequences(const torch::Tensor& x, int64_t frames);
torch::Tensor sequences_to_frames(const torch::Tensor& x, int64_t frames, int64_t height,
                                  int64_t width);

/// Sinusoidal embedding of integer positions, shape [N, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim);

/// Copies every parameter and buffer of `dst` from the same-named entry of
/// `src`. Throws ContractError if `src` lacks one.
void copy_matching_parameters(const torch::nn::Module& src, torch::nn::Module& dst);

}  // namespace vidswap

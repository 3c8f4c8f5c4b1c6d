#pragma once

#include <torch/torch.h>

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "vidswap/nn_blocks.hpp"
#include "vidswap/tensor_types.hpp"

namespace vidswap {

/// Spatial-Temporal Fusion Module: a 2D residual block followed by a
/// temporal residual block, blended as
///   out = beta * spatial + (1 - beta) * temporal,  beta = sigmoid(beta_raw).
/// Single-frame inputs return the spatial output and never touch the
/// temporal path.
struct STFMBlockImpl : torch::nn::Module {
  STFMBlockImpl(int64_t in_ch, int64_t out_ch, bool temporal, int64_t groups = 8);

  torch::Tensor forward(const torch::Tensor& x, int64_t frames);
  torch::Tensor spatial_forward(const torch::Tensor& x);

  bool has_temporal() const { return static_cast<bool>(temporal_path); }
  /// beta after the sigmoid squash, in [0, 1].
  torch::Tensor beta() const;

  ResBlock2d spatial_path{nullptr};
  TemporalResBlock temporal_path{nullptr};
  torch::Tensor beta_raw;
};
TORCH_MODULE(STFMBlock);

struct VaeConfig {
  std::vector<int64_t> channels{16, 32, 64};  // one entry per 2x downsampling
  int64_t latent_channels = 4;
  int64_t groups = 8;
  bool encoder_temporal = true;
  bool decoder_temporal = true;

  int64_t downsample_factor() const { return int64_t{1} << channels.size(); }
  void validate() const;
};

struct VaeEncoderImpl : torch::nn::Module {
  VaeEncoderImpl(const VaeConfig& cfg, bool temporal);
  /// x: [B*T, 3, H, W] -> moments [B*T, 2*latent, h, w]
  torch::Tensor forward(const torch::Tensor& x, int64_t frames);

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  std::vector<STFMBlock> blocks;
  std::vector<Downsample2d> downs;
  STFMBlock mid{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(VaeEncoder);

struct VaeDecoderImpl : torch::nn::Module {
  VaeDecoderImpl(const VaeConfig& cfg, bool temporal);
  torch::Tensor forward(const torch::Tensor& z, int64_t frames);

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  STFMBlock mid{nullptr};
  std::vector<Upsample2d> ups;
  std::vector<STFMBlock> blocks;
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(VaeDecoder);

struct VaeOutput {
  torch::Tensor recon;   // [B, T, 3, H, W], unclamped
  torch::Tensor mean;    // [B, T, C, h, w]
  torch::Tensor logvar;  // [B, T, C, h, w]
};

/// Hybrid image/video VAE. Clips are [B, T, 3, H, W]; a still image is T = 1.
/// No temporal downsampling: frame count is preserved end to end.
struct VidFaceVAEImpl : torch::nn::Module {
  explicit VidFaceVAEImpl(VaeConfig cfg);

  std::pair<torch::Tensor, torch::Tensor> encode_clips(const torch::Tensor& clips);
  torch::Tensor decode_clips(const torch::Tensor& latents);
  VaeOutput forward(const torch::Tensor& clips, bool sample,
                    std::optional<torch::Generator> gen = std::nullopt);

  /// (mean, logvar) for a single clip.
  std::pair<LatentSeq, LatentSeq> encode(const FrameSeq& frames);
  /// Decoded frames, clamped to [-1, 1].
  FrameSeq decode(const LatentSeq& z);

  std::vector<STFMBlock> stfm_blocks() const;
  /// Squashed beta of every STFM block that has a temporal path, in
  /// encoder-then-decoder order.
  std::vector<double> betas() const;

  const VaeConfig& config() const { return cfg_; }

  VaeEncoder encoder{nullptr};
  VaeDecoder decoder{nullptr};

 private:
  VaeConfig cfg_;
};
TORCH_MODULE(VidFaceVAE);

struct VaeLossWeights {
  double recon = 1.0;
  double perceptual = 0.1;
  double kl = 1e-6;

  void validate() const;
};

/// Feature-space distance between two frame batches [N, 3, H, W]; returns a
/// differentiable scalar.
using PerceptualFn = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

/// Desk-scale perceptual distance: mean absolute difference of Sobel
/// gradients and Laplacian responses over a 3-level average-pool pyramid.
torch::Tensor multiscale_gradient_distance(const torch::Tensor& a, const torch::Tensor& b,
                                           int64_t levels = 3);

/// KL(N(mean, exp(logvar)) || N(0, I)) averaged over entries.
torch::Tensor kl_to_standard_normal(const torch::Tensor& mean, const torch::Tensor& logvar);

struct VaeLossTerms {
  torch::Tensor total, recon, perceptual, kl;
};

VaeLossTerms vae_loss(const torch::Tensor& recon, const torch::Tensor& target,
                      const torch::Tensor& mean, const torch::Tensor& logvar,
                      const VaeLossWeights& weights, const PerceptualFn& perceptual);

}  // namespace vidswap

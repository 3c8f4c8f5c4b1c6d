#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "vidswap/nn_blocks.hpp"

namespace vidswap {

/// softmax(q k^T / sqrt(d)) v over the last two axes.
torch::Tensor attend(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

struct MultiHeadAttentionImpl : torch::nn::Module {
  MultiHeadAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads);
  /// x [N, Lq, query_dim], context [N, Lk, context_dim] -> [N, Lq, query_dim]
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

  int64_t query_dim, context_dim, heads;
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

/// Cross-attention from a feature map [N, C, H, W] to tokens [N, L, D].
torch::Tensor cross_attention(MultiHeadAttention& attn, const torch::Tensor& feature_map,
                              const torch::Tensor& tokens);

/// Spatial self-attention, optional cross-attention and a feed-forward
/// layer over the positions of a feature map, wrapped in a residual.
struct SpatialTransformerImpl : torch::nn::Module {
  SpatialTransformerImpl(int64_t channels, int64_t heads, int64_t context_dim, bool cross,
                         int64_t groups = 8);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context = {});

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Linear proj_in{nullptr}, proj_out{nullptr};
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr}, ln3{nullptr};
  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
};
TORCH_MODULE(SpatialTransformer);

/// Self-attention along the frame axis. Motion features are prepended on
/// the key/value axis (length M + T); queries are the T current frames and
/// only those positions are emitted. The output projection starts at zero
/// so a freshly inserted module is an identity map.
struct TemporalAttentionImpl : torch::nn::Module {
  TemporalAttentionImpl(int64_t channels, int64_t heads, int64_t max_positions = 64);
  /// x [B*T, C, H, W], motion [B*M, C, H, W] or undefined.
  torch::Tensor forward(const torch::Tensor& x, int64_t frames, const torch::Tensor& motion,
                        int64_t motion_frames);

  torch::nn::LayerNorm norm{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::Tensor pos;  // buffer [max_positions, C]
  int64_t last_kv_length = 0;
};
TORCH_MODULE(TemporalAttention);

struct UNetConfig {
  int64_t in_channels = 13;  // 4 noisy latent + 1 mask + 4 render + 4 masked
  int64_t out_channels = 4;
  std::vector<int64_t> channels{32, 64};
  std::vector<bool> attention{true, true};
  int64_t heads = 4;
  int64_t context_dim = 64;
  int64_t temb_dim = 128;
  int64_t groups = 8;
  bool temporal = true;
  bool cross_attention = true;
  /// Feature extractor only: no decoder path, no output head.
  bool reference = false;

  void validate() const;
};

enum class DenoiseMode { image, video };

/// Reference features per self-attention site, each [B*M, C, h, w].
struct MotionFeatureCache {
  std::map<std::string, torch::Tensor> features;
  int64_t motion_frames = 0;
  bool empty() const { return features.empty(); }
};

struct DenoiseTrace {
  std::vector<int64_t> kv_lengths;
};

/// Latent U-Net denoiser. Sites ("down0", "down1", ..., "mid") carry a
/// spatial transformer and, when temporal is on, a temporal attention
/// module. Image mode and video mode share every spatial and
/// cross-attention parameter; image mode never touches temporal modules.
struct UNetImpl : torch::nn::Module {
  explicit UNetImpl(UNetConfig cfg);

  /// x [B*T, in, h, w]; t [B*T] timesteps; context [B*T, L, D].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t,
                        const torch::Tensor& context, int64_t frames, DenoiseMode mode,
                        const MotionFeatureCache* cache = nullptr, DenoiseTrace* trace = nullptr);

  /// Reference mode: runs the encoder half and returns post-transformer
  /// features at each site.
  MotionFeatureCache extract(const torch::Tensor& x, int64_t frames);

  std::vector<std::string> sites() const { return site_names_; }
  std::vector<torch::Tensor> temporal_parameters() const;
  std::vector<torch::Tensor> spatial_parameters() const;
  const UNetConfig& config() const { return cfg_; }

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  torch::nn::Linear time1{nullptr}, time2{nullptr};
  std::vector<ResBlock2d> down_res;
  std::vector<SpatialTransformer> down_attn;
  std::vector<TemporalAttention> down_temporal;
  std::vector<Downsample2d> downs;
  ResBlock2d mid_res1{nullptr}, mid_res2{nullptr};
  SpatialTransformer mid_attn{nullptr};
  TemporalAttention mid_temporal{nullptr};
  std::vector<ResBlock2d> up_res;
  std::vector<Upsample2d> ups;
  torch::nn::GroupNorm norm_out{nullptr};

 private:
  torch::Tensor time_embedding(const torch::Tensor& t);
  torch::Tensor run(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& context,
                    int64_t frames, DenoiseMode mode, const MotionFeatureCache* cache,
                    DenoiseTrace* trace, MotionFeatureCache* capture);
  torch::Tensor run_site(const std::string& name, SpatialTransformer& attn,
                         TemporalAttention& temporal, const torch::Tensor& h,
                         const torch::Tensor& context, int64_t frames, DenoiseMode mode,
                         const MotionFeatureCache* cache, DenoiseTrace* trace,
                         MotionFeatureCache* capture);

  UNetConfig cfg_;
  std::vector<std::string> site_names_;
};
TORCH_MODULE(UNet);

/// The reference network: same spatial architecture, independent weights,
/// fed with motion-frame latents at timestep 0.
UNetConfig reference_config(const UNetConfig& backbone, int64_t latent_channels = 4);

/// Errors if the motion clip is empty (pass zero frames instead).
MotionFeatureCache reference_forward(UNet& refnet, const torch::Tensor& motion_latents,
                                     int64_t motion_frames);

}  // namespace vidswap

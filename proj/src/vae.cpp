#include "vidswap/vae.hpp"

namespace F = torch::nn::functional;

namespace vidswap {

STFMBlockImpl::STFMBlockImpl(int64_t in_ch, int64_t out_ch, bool temporal, int64_t groups) {
  spatial_path = register_module("spatial", ResBlock2d(in_ch, out_ch, 0, groups));
  if (temporal) {
    temporal_path = register_module("temporal", TemporalResBlock(out_ch, groups));
    beta_raw = register_parameter("beta_raw", torch::zeros({1}));
  }
}

torch::Tensor STFMBlockImpl::spatial_forward(const torch::Tensor& x) { return spatial_path(x); }

torch::Tensor STFMBlockImpl::forward(const torch::Tensor& x, int64_t frames) {
  auto spatial = spatial_path(x);
  if (frames == 1 || !temporal_path) return spatial;
  auto temporal = temporal_path(spatial, frames);
  auto b = beta();
  return b * spatial + (1 - b) * temporal;
}

torch::Tensor STFMBlockImpl::beta() const {
  VF_CHECK(beta_raw.defined(), ContractError, "STFM block has no temporal path");
  return torch::sigmoid(beta_raw);
}

void VaeConfig::validate() const {
  VF_CHECK(channels.size() == 3, ConfigError, "VAE needs exactly 3 levels (factor 8)");
  for (auto c : channels) VF_CHECK(c > 0, ConfigError, "VAE channel widths must be positive");
  VF_CHECK(latent_channels > 0, ConfigError, "latent_channels must be positive");
}

VaeEncoderImpl::VaeEncoderImpl(const VaeConfig& cfg, bool temporal) {
  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg.channels[0], 3).padding(1)));
  int64_t prev = cfg.channels[0];
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    const auto ch = cfg.channels[i];
    blocks.push_back(register_module("block" + std::to_string(i),
                                     STFMBlock(prev, ch, temporal, cfg.groups)));
    downs.push_back(register_module("down" + std::to_string(i), Downsample2d(ch)));
    prev = ch;
  }
  mid = register_module("mid", STFMBlock(prev, prev, temporal, cfg.groups));
  norm_out = register_module("norm_out", make_group_norm(prev, cfg.groups));
  conv_out = register_module(
      "conv_out",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(prev, 2 * cfg.latent_channels, 3).padding(1)));
}

torch::Tensor VaeEncoderImpl::forward(const torch::Tensor& x, int64_t frames) {
  auto h = conv_in(x);
  for (size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i](h, frames);
    h = downs[i](h);
  }
  h = mid(h, frames);
  return conv_out(torch::silu(norm_out(h)));
}

VaeDecoderImpl::VaeDecoderImpl(const VaeConfig& cfg, bool temporal) {
  int64_t prev = cfg.channels.back();
  conv_in = register_module(
      "conv_in",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, prev, 3).padding(1)));
  mid = register_module("mid", STFMBlock(prev, prev, temporal, cfg.groups));
  for (size_t k = 0; k < cfg.channels.size(); ++k) {
    const size_t i = cfg.channels.size() - 1 - k;
    const auto ch = cfg.channels[i];
    ups.push_back(register_module("up" + std::to_string(k), Upsample2d(prev)));
    blocks.push_back(register_module("block" + std::to_string(k),
                                     STFMBlock(prev, ch, temporal, cfg.groups)));
    prev = ch;
  }
  norm_out = register_module("norm_out", make_group_norm(prev, cfg.groups));
  conv_out = register_module("conv_out",
                             torch::nn::Conv2d(torch::nn::Conv2dOptions(prev, 3, 3).padding(1)));
}

torch::Tensor VaeDecoderImpl::forward(const torch::Tensor& z, int64_t frames) {
  auto h = mid(conv_in(z), frames);
  for (size_t k = 0; k < blocks.size(); ++k) {
    h = ups[k](h);
    h = blocks[k](h, frames);
  }
  return conv_out(torch::silu(norm_out(h)));
}

VidFaceVAEImpl::VidFaceVAEImpl(VaeConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder = register_module("encoder", VaeEncoder(cfg_, cfg_.encoder_temporal));
  decoder = register_module("decoder", VaeDecoder(cfg_, cfg_.decoder_temporal));
}

std::pair<torch::Tensor, torch::Tensor> VidFaceVAEImpl::encode_clips(const torch::Tensor& clips) {
  VF_CHECK(clips.dim() == 5 && clips.size(2) == 3, ContractError,
           "encode expects [B, T, 3, H, W], got " + shape_string(clips));
  const auto b = clips.size(0), t = clips.size(1), h = clips.size(3), w = clips.size(4);
  const auto f = cfg_.downsample_factor();
  VF_CHECK(h % f == 0 && w % f == 0, ContractError,
           "frame size " + std::to_string(h) + "x" + std::to_string(w) +
               " not divisible by downsampling factor " + std::to_string(f));
  auto moments = encoder(clips.reshape({b * t, 3, h, w}), t);
  auto parts = moments.chunk(2, 1);
  auto mean = parts[0].reshape({b, t, cfg_.latent_channels, h / f, w / f});
  auto logvar = parts[1].clamp(-30.0, 20.0).reshape({b, t, cfg_.latent_channels, h / f, w / f});
  return {mean, logvar};
}

torch::Tensor VidFaceVAEImpl::decode_clips(const torch::Tensor& latents) {
  VF_CHECK(latents.dim() == 5 && latents.size(2) == cfg_.latent_channels, ContractError,
           "decode expects [B, T, C, h, w], got " + shape_string(latents));
  const auto b = latents.size(0), t = latents.size(1), h = latents.size(3), w = latents.size(4);
  auto x = decoder(latents.reshape({b * t, cfg_.latent_channels, h, w}), t);
  return x.reshape({b, t, 3, x.size(2), x.size(3)});
}

VaeOutput VidFaceVAEImpl::forward(const torch::Tensor& clips, bool sample,
                                  std::optional<torch::Generator> gen) {
  auto [mean, logvar] = encode_clips(clips);
  torch::Tensor z = mean;
  if (sample) {
    auto eps = torch::randn(mean.sizes(), gen, mean.options());
    z = mean + torch::exp(0.5 * logvar) * eps;
  }
  return {decode_clips(z), mean, logvar};
}

std::pair<LatentSeq, LatentSeq> VidFaceVAEImpl::encode(const FrameSeq& frames) {
  auto [mean, logvar] = encode_clips(frames.data().unsqueeze(0));
  return {LatentSeq(mean.squeeze(0)), LatentSeq(logvar.squeeze(0))};
}

FrameSeq VidFaceVAEImpl::decode(const LatentSeq& z) {
  VF_CHECK(torch::isfinite(z.data()).all().item<bool>(), ContractError,
           "decode: latent has non-finite entries");
  return FrameSeq(decode_clips(z.data().unsqueeze(0)).squeeze(0).clamp(-1.0, 1.0));
}

std::vector<STFMBlock> VidFaceVAEImpl::stfm_blocks() const {
  std::vector<STFMBlock> out(encoder->blocks.begin(), encoder->blocks.end());
  out.push_back(encoder->mid);
  out.push_back(decoder->mid);
  out.insert(out.end(), decoder->blocks.begin(), decoder->blocks.end());
  return out;
}

std::vector<double> VidFaceVAEImpl::betas() const {
  std::vector<double> out;
  for (const auto& b : stfm_blocks()) {
    if (b->has_temporal()) out.push_back(b->beta().item<double>());
  }
  return out;
}

void VaeLossWeights::validate() const {
  VF_CHECK(recon >= 0 && perceptual >= 0 && kl >= 0, ConfigError,
           "VAE loss weights must be non-negative");
}

namespace {

torch::Tensor depthwise(const torch::Tensor& x, const torch::Tensor& kernel) {
  const auto c = x.size(1);
  auto k = kernel.to(x.options()).view({1, 1, 3, 3}).repeat({c, 1, 1, 1});
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  return F::conv2d(padded, k, F::Conv2dFuncOptions().groups(c));
}

torch::Tensor gradient_features(const torch::Tensor& x) {
  static const auto sobel_x =
      torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, torch::kFloat64) / 8.0;
  static const auto sobel_y =
      torch::tensor({-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0}, torch::kFloat64) / 8.0;
  static const auto laplace =
      torch::tensor({0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0}, torch::kFloat64) / 4.0;
  return torch::cat({depthwise(x, sobel_x), depthwise(x, sobel_y), depthwise(x, laplace)}, 1);
}

}  // namespace

torch::Tensor multiscale_gradient_distance(const torch::Tensor& a, const torch::Tensor& b,
                                           int64_t levels) {
  check_same_shape(a, b, "perceptual distance");
  VF_CHECK(a.dim() == 4, ContractError, "perceptual distance expects [N, C, H, W]");
  auto x = a, y = b;
  auto total = torch::zeros({}, a.options());
  int64_t used = 0;
  for (int64_t l = 0; l < levels; ++l) {
    if (l > 0) {
      if (x.size(2) < 2 || x.size(3) < 2) break;
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
    }
    total = total + (gradient_features(x) - gradient_features(y)).abs().mean();
    ++used;
  }
  return total / static_cast<double>(used);
}

torch::Tensor kl_to_standard_normal(const torch::Tensor& mean, const torch::Tensor& logvar) {
  check_same_shape(mean, logvar, "kl");
  return 0.5 * (mean.pow(2) + torch::exp(logvar) - 1.0 - logvar).mean();
}

VaeLossTerms vae_loss(const torch::Tensor& recon, const torch::Tensor& target,
                      const torch::Tensor& mean, const torch::Tensor& logvar,
                      const VaeLossWeights& weights, const PerceptualFn& perceptual) {
  weights.validate();
  check_same_shape(recon, target, "vae_loss");
  VaeLossTerms t;
  t.recon = (recon - target).abs().mean();
  if (perceptual && weights.perceptual > 0) {
    auto flat_r = recon.reshape({-1, recon.size(-3), recon.size(-2), recon.size(-1)});
    auto flat_t = target.reshape({-1, target.size(-3), target.size(-2), target.size(-1)});
    t.perceptual = perceptual(flat_r, flat_t);
  } else {
    t.perceptual = torch::zeros({}, recon.options());
  }
  t.kl = kl_to_standard_normal(mean, logvar);
  t.total = weights.recon * t.recon + weights.perceptual * t.perceptual + weights.kl * t.kl;
  return t;
}

}  // namespace vidswap

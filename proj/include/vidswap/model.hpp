#pragma once

#include <torch/torch.h>

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidswap/backbone.hpp"
#include "vidswap/conditioning.hpp"
#include "vidswap/diffusion.hpp"
#include "vidswap/vae.hpp"

namespace vidswap {

struct ModelConfig {
  VaeConfig vae;
  UNetConfig unet;
  FaceEncoderConfig face;
  ScheduleConfig schedule;
  MixerWeights mixer;
  MaskConfig mask;
  int64_t frames = 8;         // T
  int64_t motion_frames = 4;  // M
  int64_t image_size = 64;
  uint64_t init_seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
/// FNV-1a over the canonical JSON dump.
uint64_t config_hash(const nlohmann::json& j);

/// Groups named in stage configs.
inline const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> g{"vae", "backbone.spatial", "backbone.temporal", "refnet",
                                          "face_encoder"};
  return g;
}

struct SwapModelImpl : torch::nn::Module {
  explicit SwapModelImpl(ModelConfig cfg);

  std::vector<torch::Tensor> group(const std::string& name) const;
  const ModelConfig& config() const { return cfg_; }

  VidFaceVAE vae{nullptr};
  UNet unet{nullptr};
  UNet refnet{nullptr};
  FaceEncoder face_encoder{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(SwapModel);

/// Latent-space condition: mask pooled to latent resolution plus VAE
/// latents of the render and masked frames.
struct LatentCondition {
  torch::Tensor mask;    // [T, 1, h, w]
  torch::Tensor render;  // [T, 4, h, w]
  torch::Tensor masked;  // [T, 4, h, w]
};

/// VAE mean latents of a clip [T, 3, H, W] -> [T, C, h, w], no grad.
torch::Tensor encode_latents(VidFaceVAE& vae, const torch::Tensor& frames);
LatentCondition encode_condition(VidFaceVAE& vae, const ConditionBundle& bundle);
/// cat(z_t, mask, render, masked) along channels -> 13 channels.
torch::Tensor denoiser_input(const torch::Tensor& z_t, const LatentCondition& c);

struct CheckpointInfo {
  ModelConfig config;
  std::map<std::string, std::string> header;
  int64_t step = 0;
  int stage = 0;
  bool has_optimizer = false;
};

/// Plain-text header (key=value lines, "---" terminator) followed by the
/// serialized weight map and, optionally, optimizer state.
void save_checkpoint(const std::string& path, SwapModel& model, int stage, int64_t step,
                     torch::optim::Optimizer* optimizer = nullptr);
CheckpointInfo read_checkpoint_header(const std::string& path);
/// Builds a model from the stored config and loads its weights.
SwapModel load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr,
                               torch::optim::Optimizer* optimizer = nullptr);
/// Loads weights (and optimizer state) into an existing model.
CheckpointInfo load_checkpoint_into(const std::string& path, SwapModel& model,
                                    torch::optim::Optimizer* optimizer = nullptr);

}  // namespace vidswap

#pragma once

#include <torch/torch.h>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidswap/conditioning.hpp"
#include "vidswap/diffusion.hpp"
#include "vidswap/model.hpp"
#include "vidswap/vae.hpp"

namespace vidswap {

enum class Modality { image, video };
std::string to_string(Modality m);

enum class ModalityPolicy { image_only, hybrid };

struct StageConfig {
  int stage = 1;
  double learning_rate = 5e-6;
  int64_t batch_size = 32;
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  ModalityPolicy policy = ModalityPolicy::image_only;
  double p_video = 0.0;
  VaeLossWeights vae_weights;
  double weight_decay = 0.01;
  double zero_motion_prob = 0.25;

  bool trains(const std::string& group) const;
};

/// Defaults for stage 1 (VAE), 2 (image backbone) and 3 (temporal).
/// Throws ConfigError for any other stage.
StageConfig make_stage(int stage);

struct HybridBatch {
  Modality modality = Modality::image;
  std::vector<int64_t> indices;  // into the pool of that modality
  uint64_t noise_seed = 0;
  bool fell_back = false;
};

/// Homogeneous batches: each batch draws its modality with probability
/// p_video, then samples examples from that pool. Batch k depends only on
/// (seed, k), so a resumed run sees the same stream.
class HybridSampler {
 public:
  HybridSampler(int64_t image_pool, int64_t video_pool, double p_video, int64_t batch_size,
                uint64_t seed);
  HybridBatch batch(int64_t k) const;

 private:
  int64_t image_pool_, video_pool_;
  double p_video_;
  int64_t batch_size_;
  uint64_t seed_;
};

/// Pixel-space training unit. Image examples have T = 1 and no motion.
struct TrainingExample {
  std::string key;
  Modality modality = Modality::image;
  FrameSeq source;      // identity donor, one frame
  FrameSeq target;      // reconstruction target, T frames
  FrameSeq decoupling;  // same attributes as target, other identity
  FrameSeq motion;      // M frames preceding the target (video only)
  std::string source_tag = "source";
  std::string attribute_tag = "decoupling";
};

/// Everything the frozen VAE and providers produce for one example.
struct PreparedExample {
  std::string key;
  Modality modality = Modality::image;
  torch::Tensor z0;             // [T, C, h, w]
  LatentCondition cond;
  FaceFeatures features;
  torch::Tensor motion_latent;  // [M, C, h, w] (video)
};

PreparedExample prepare_example(SwapModel& model, const TrainingExample& ex,
                                const ConditionProviders& providers, const MaskConfig& mask);

struct StepReport {
  double loss = 0;
  Modality modality = Modality::image;
  std::map<std::string, double> grad_norms;  // per parameter group
  std::vector<std::pair<std::string, std::string>> provenance;
  std::vector<bool> zero_motion;
  std::vector<int64_t> timesteps;
};

/// One optimizer over the trainable groups of a stage. Frozen groups have
/// requires_grad off and no optimizer state.
class Trainer {
 public:
  Trainer(SwapModel model, StageConfig stage, uint64_t seed);

  /// Stage 2/3 diffusion step over prepared examples of one modality.
  StepReport diffusion_step(const std::vector<const PreparedExample*>& batch, Modality modality,
                            uint64_t noise_seed);
  /// Stage 1 VAE step over clips [B, T, 3, H, W].
  StepReport vae_step(const torch::Tensor& clips, uint64_t noise_seed);

  /// Loss of a diffusion batch without updating anything.
  double diffusion_loss(const std::vector<const PreparedExample*>& batch, Modality modality,
                        uint64_t noise_seed);

  void save(const std::string& path);
  void resume(const std::string& path);

  SwapModel& model() { return model_; }
  const StageConfig& stage() const { return stage_; }
  torch::optim::AdamW& optimizer() { return *optimizer_; }
  int64_t steps_done() const { return steps_; }
  const NoiseSchedule& schedule() const { return sched_; }
  /// Number of tensors with optimizer state.
  int64_t optimizer_state_count() const;
  std::vector<torch::Tensor> trainable_parameters() const;

 private:
  torch::Tensor diffusion_forward(const std::vector<const PreparedExample*>& batch,
                                  Modality modality, uint64_t noise_seed, StepReport* report);

  SwapModel model_;
  StageConfig stage_;
  NoiseSchedule sched_;
  uint64_t seed_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int64_t steps_ = 0;
  torch::Tensor zero_motion_;
};

}  // namespace vidswap

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vidswap/aidt.hpp"
#include "vidswap/desk_providers.hpp"
#include "vidswap/evaluation.hpp"
#include "vidswap/inference.hpp"
#include "vidswap/media.hpp"
#include "vidswap/trainer.hpp"

// Runners shared by the command line and the protocol tests.

namespace vidswap {

ConditionProviders desk_condition_providers(int64_t crop_size = 48);

/// Renders a clip from per-frame synthetic parameters.
FrameSeq render_clip(const std::vector<synth::FaceParams>& params, int64_t size);

/// `count` clips of random identities (ids from `identity_base`).
std::vector<FrameSeq> synthetic_clips(int64_t count, int64_t length, int64_t size, uint64_t seed,
                                      uint64_t identity_base = 5000);

struct RunConfig {
  int64_t steps = 100;
  uint64_t seed = 0;
  int64_t log_every = 10;
};

using StepCallback = std::function<void(int64_t step, const StepReport&)>;

/// Stage 2/3 loop: HybridSampler batches over the prepared pools.
std::vector<StepReport> run_diffusion(Trainer& trainer, const std::vector<PreparedExample>& images,
                                      const std::vector<PreparedExample>& videos,
                                      const RunConfig& cfg, const StepCallback& on_step = {});

/// Stage 1 loop over still images (T = 1) and clips of equal length.
std::vector<StepReport> run_vae(Trainer& trainer, const std::vector<FrameSeq>& images,
                                const std::vector<FrameSeq>& clips, const RunConfig& cfg,
                                const StepCallback& on_step = {});

struct ReconstructionScores {
  double l1 = 0, ssim = 0, psnr = 0, lpips = 0;
};

/// Deterministic (posterior mean) reconstruction of each clip.
ReconstructionScores reconstruction_scores(VidFaceVAE& vae, const std::vector<FrameSeq>& clips);

struct VaeAblationConfig {
  int64_t train_clips = 16;
  int64_t heldout_clips = 8;
  int64_t clip_length = 8;
  int64_t image_size = 64;
  int64_t steps = 150;
  int64_t batch = 2;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
  ModelConfig model;
};

struct VaeAblationRow {
  std::string name;
  bool encoder_temporal = false, decoder_temporal = false;
  ReconstructionScores scores;
};

/// 2D/2D, 2D/(2+1)D and (2+1)D/(2+1)D VAEs trained with the same data,
/// seed and step budget, scored on held-out clips.
std::vector<VaeAblationRow> ablate_vae(const VaeAblationConfig& cfg);

struct MixerAblationRow {
  double w_tex = 0, w_attr = 0;
  double identity_similarity = 0;  // mean cosine to the source
  double pose_error = 0, expr_error = 0;
};

std::vector<MixerAblationRow> ablate_mixer(SwapModel& model,
                                           const std::vector<FrameSeq>& sources,
                                           const std::vector<FrameSeq>& targets,
                                           const std::vector<double>& grid,
                                           const ConditionProviders& providers, int64_t steps,
                                           uint64_t seed);

/// bench/sources/sNNN.png, bench/targets/vNNN/*.png and bench/manifest.jsonl
/// with one {"video", "source", "target"} record per pair. Source i and
/// target i show different people; a swap of video i should carry source
/// i's identity.
void write_benchmark(MediaStore& store, int64_t count, int64_t length, int64_t size, uint64_t seed);

struct BenchmarkEntry {
  std::string video, source, target;
};

std::vector<BenchmarkEntry> parse_benchmark_manifest(const std::string& jsonl);

/// Table columns FVD_32, FVD_128, top1, top5, pose, expr plus skip counts.
/// `pred` holds <video>/<frame>.png; `ref` holds the manifest's paths.
std::map<std::string, double> evaluate_benchmark(const MediaStore& pred, const MediaStore& ref,
                                                 const std::vector<BenchmarkEntry>& entries,
                                                 const ConditionProviders& providers);

}  // namespace vidswap

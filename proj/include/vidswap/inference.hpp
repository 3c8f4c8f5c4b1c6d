#pragma once

#include <functional>
#include <vector>

#include "vidswap/conditioning.hpp"
#include "vidswap/diffusion.hpp"
#include "vidswap/model.hpp"

namespace vidswap {

struct ClipWindow {
  int64_t start = 0;
  int64_t valid = 0;  // real frames; the rest repeat the last real frame
};

/// Consecutive T-frame windows covering `length` frames.
std::vector<ClipWindow> plan_clip_windows(int64_t length, int64_t clip_frames);

/// Frames [start, start + T) with indices past the end clamped to the last
/// frame.
FrameSeq window_frames(const FrameSeq& video, const ClipWindow& w, int64_t clip_frames);

/// alpha = min(1, d / (feather + 1)) inside the mask, d = Euclidean
/// distance to the nearest pixel outside it; alpha = 0 outside. The ramp
/// runs inward, so nothing beyond the mask changes. Shape [T, 1, H, W],
/// float64.
torch::Tensor feather_alpha(const torch::Tensor& mask, int64_t feather);

/// alpha * generated + (1 - alpha) * target; pixels with alpha = 0 are
/// copied from the target unchanged.
FrameSeq composite(const FrameSeq& generated, const FrameSeq& target, const torch::Tensor& mask,
                   int64_t feather);

struct SwapOptions {
  int64_t steps = 32;
  uint64_t seed = 0;
  int64_t feather = 3;
  std::optional<MixerWeights> mixer;  // defaults to the model's
};

struct SwapHooks {
  std::function<void(int64_t clip, const ClipWindow&, const FrameSeq& motion)> on_clip_start;
  std::function<void(int64_t clip, const FrameSeq& decoded)> on_decoded;
  std::function<void(int64_t clip, int64_t t)> on_model_call;
};

/// Clip-chained swap. The first clip sees zero motion frames; clip k sees
/// the last M decoded frames of clip k - 1. A one-frame target runs in
/// image mode.
FrameSeq swap_video(const FrameSeq& source_image, const FrameSeq& target, SwapModel& model,
                    const NoiseSchedule& sched, const ConditionProviders& providers,
                    const SwapOptions& opts, const SwapHooks* hooks = nullptr);

}  // namespace vidswap

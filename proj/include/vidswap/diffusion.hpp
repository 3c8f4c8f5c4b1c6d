#pragma once

#include <functional>
#include <vector>

#include "vidswap/tensor_types.hpp"

namespace vidswap {

/// Variance schedule shared by training and DDIM sampling.
struct NoiseSchedule {
  int64_t num_steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// alpha_bar at t; t == -1 means "before the first step" and yields 1.
  double alpha_bar(int64_t t) const;
};

struct ScheduleConfig {
  int64_t num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

/// Linear beta schedule. Throws ConfigError for num_steps < 1 or a beta
/// range outside 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int64_t num_steps, double beta_start, double beta_end);
inline NoiseSchedule make_schedule(const ScheduleConfig& c) {
  return make_schedule(c.num_steps, c.beta_start, c.beta_end);
}

/// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps
LatentSeq add_noise(const LatentSeq& z0, const LatentSeq& eps, int64_t t,
                    const NoiseSchedule& sched);

/// Per-sample variant for batched training: z0/eps are [B, ...] and t holds
/// one timestep per leading index.
torch::Tensor add_noise_batched(const torch::Tensor& z0, const torch::Tensor& eps,
                                const std::vector<int64_t>& t, const NoiseSchedule& sched);

/// Mean squared error over every entry.
torch::Tensor denoise_loss(const torch::Tensor& pred_eps, const torch::Tensor& true_eps);
double denoise_loss(const LatentSeq& pred_eps, const LatentSeq& true_eps);

/// Deterministic (eta = 0) DDIM update from t to t_prev. t_prev = -1 returns
/// the clean-latent estimate; t_prev = t is a no-op.
LatentSeq ddim_step(const LatentSeq& z_t, const LatentSeq& pred_eps, int64_t t,
                    int64_t t_prev, const NoiseSchedule& sched);

/// Evenly spaced subsequence of `steps` timesteps, ascending, first = 0 and
/// last = num_steps - 1.
std::vector<int64_t> ddim_timesteps(const NoiseSchedule& sched, int64_t steps);

using EpsPredictor = std::function<LatentSeq(const LatentSeq& z_t, int64_t t)>;

LatentSeq ddim_sample(const EpsPredictor& model, const LatentSeq& z_T,
                      const NoiseSchedule& sched, int64_t num_inference_steps);

/// Conditioned form; `model(z_t, t, cond)` must return the predicted noise.
template <class Model, class Cond>
LatentSeq ddim_sample(Model&& model, const LatentSeq& z_T, const Cond& cond,
                      const NoiseSchedule& sched, int64_t num_inference_steps) {
  return ddim_sample(
      EpsPredictor([&](const LatentSeq& z, int64_t t) { return model(z, t, cond); }),
      z_T, sched, num_inference_steps);
}

}  // namespace vidswap

#include "vidswap/diffusion.hpp"

#include <cmath>

namespace vidswap {

double NoiseSchedule::alpha_bar(int64_t t) const {
  if (t == -1) return 1.0;
  VF_CHECK(t >= 0 && t < num_steps, ContractError,
           "timestep " + std::to_string(t) + " outside schedule of " +
               std::to_string(num_steps) + " steps");
  return alpha_bars[static_cast<size_t>(t)];
}

NoiseSchedule make_schedule(int64_t num_steps, double beta_start, double beta_end) {
  VF_CHECK(num_steps >= 1, ConfigError, "num_steps must be >= 1");
  VF_CHECK(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ConfigError,
           "beta range must satisfy 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.num_steps = num_steps;
  s.betas.resize(static_cast<size_t>(num_steps));
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (int64_t i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[i] = beta;
    s.alphas[i] = 1.0 - beta;
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

LatentSeq add_noise(const LatentSeq& z0, const LatentSeq& eps, int64_t t,
                    const NoiseSchedule& sched) {
  check_same_shape(z0.data(), eps.data(), "add_noise");
  const double ab = sched.alpha_bar(t);
  VF_CHECK(t >= 0, ContractError, "add_noise needs t >= 0");
  return LatentSeq(std::sqrt(ab) * z0.data() + std::sqrt(1.0 - ab) * eps.data());
}

torch::Tensor add_noise_batched(const torch::Tensor& z0, const torch::Tensor& eps,
                                const std::vector<int64_t>& t, const NoiseSchedule& sched) {
  check_same_shape(z0, eps, "add_noise_batched");
  VF_CHECK(static_cast<int64_t>(t.size()) == z0.size(0), ContractError,
           "one timestep per batch element required");
  std::vector<double> a(t.size()), b(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    VF_CHECK(t[i] >= 0, ContractError, "add_noise needs t >= 0");
    const double ab = sched.alpha_bar(t[i]);
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  std::vector<int64_t> bshape(static_cast<size_t>(z0.dim()), 1);
  bshape[0] = z0.size(0);
  auto opts = torch::TensorOptions(torch::kFloat64);
  auto ta = torch::tensor(a, opts).view(bshape).to(z0.scalar_type());
  auto tb = torch::tensor(b, opts).view(bshape).to(z0.scalar_type());
  return ta * z0 + tb * eps;
}

torch::Tensor denoise_loss(const torch::Tensor& pred_eps, const torch::Tensor& true_eps) {
  check_same_shape(pred_eps, true_eps, "denoise_loss");
  VF_CHECK(pred_eps.numel() > 0, ContractError, "denoise_loss of empty input");
  return (pred_eps - true_eps).pow(2).mean();
}

double denoise_loss(const LatentSeq& pred_eps, const LatentSeq& true_eps) {
  return denoise_loss(pred_eps.data(), true_eps.data()).item<double>();
}

LatentSeq ddim_step(const LatentSeq& z_t, const LatentSeq& pred_eps, int64_t t,
                    int64_t t_prev, const NoiseSchedule& sched) {
  check_same_shape(z_t.data(), pred_eps.data(), "ddim_step");
  VF_CHECK(t >= 0 && t < sched.num_steps, ContractError, "ddim_step: t out of range");
  VF_CHECK(t_prev == -1 || (t_prev >= 0 && t_prev <= t), ContractError,
           "ddim_step: need t_prev < t or t_prev = -1");
  if (t_prev == t) return z_t;
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  auto z0_hat = (z_t.data() - std::sqrt(1.0 - ab_t) * pred_eps.data()) / std::sqrt(ab_t);
  if (t_prev == -1) return LatentSeq(z0_hat);
  return LatentSeq(std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * pred_eps.data());
}

std::vector<int64_t> ddim_timesteps(const NoiseSchedule& sched, int64_t steps) {
  VF_CHECK(steps >= 1 && steps <= sched.num_steps, ContractError,
           "num_inference_steps must lie in [1, num_steps]");
  std::vector<int64_t> ts(static_cast<size_t>(steps));
  if (steps == 1) {
    ts[0] = sched.num_steps - 1;
    return ts;
  }
  const double span = static_cast<double>(sched.num_steps - 1);
  for (int64_t i = 0; i < steps; ++i) {
    ts[i] = static_cast<int64_t>(std::llround(span * i / (steps - 1)));
  }
  return ts;
}

LatentSeq ddim_sample(const EpsPredictor& model, const LatentSeq& z_T,
                      const NoiseSchedule& sched, int64_t num_inference_steps) {
  const auto ts = ddim_timesteps(sched, num_inference_steps);
  LatentSeq z = z_T;
  for (auto i = static_cast<int64_t>(ts.size()) - 1; i >= 0; --i) {
    const int64_t t = ts[i];
    const int64_t t_prev = i > 0 ? ts[i - 1] : -1;
    LatentSeq eps = model(z, t);
    VF_CHECK(eps.data().sizes() == z.data().sizes(), ContractError,
             "denoiser output shape " + shape_string(eps.data()) +
                 " does not match latent " + shape_string(z.data()));
    z = ddim_step(z, eps, t, t_prev, sched);
  }
  return z;
}

}  // namespace vidswap

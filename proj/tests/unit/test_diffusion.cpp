#include <doctest.h>
#include <torch/torch.h>

#include "vidswap/diffusion.hpp"
#include "vidswap/random.hpp"

using namespace vidswap;

TEST_SUITE("diffusion_core") {

TEST_CASE("single-step schedule") {
  const auto s = make_schedule(1, 0.5, 0.5);
  REQUIRE(s.betas.size() == 1);
  CHECK(s.betas[0] == doctest::Approx(0.5));
  CHECK(s.alpha_bars[0] == doctest::Approx(0.5));
}

TEST_CASE("two-step schedule by hand") {
  const auto s = make_schedule(2, 0.1, 0.3);
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(s.alpha_bars[1] == doctest::Approx(0.63).epsilon(1e-12));
  CHECK(s.alpha_bar(-1) == 1.0);
}

TEST_CASE("1000-step schedule against a cumulative product loop") {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  double p = 1;
  for (int k = 0; k < 1000; ++k) p *= 1.0 - (1e-4 + (0.02 - 1e-4) * k / 999.0);
  CHECK(std::abs(s.alpha_bars[999] - p) <= 1e-10);
  CHECK(s.betas.front() == doctest::Approx(1e-4));
  CHECK(s.betas.back() == doctest::Approx(0.02));
}

TEST_CASE("invalid schedules are configuration errors") {
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ConfigError);
}

// Schedules whose alpha_bar at t is (nearly) 1 or 0.
NoiseSchedule limit_schedule(double abar) {
  NoiseSchedule s;
  s.num_steps = 1;
  s.betas = {1 - abar};
  s.alphas = {abar};
  s.alpha_bars = {abar};
  return s;
}

TEST_CASE("add_noise limits and closed form") {
  auto z0 = LatentSeq(torch::randn({2, 4, 3, 3}, torch::kFloat64));
  auto eps = LatentSeq(torch::randn({2, 4, 3, 3}, torch::kFloat64));
  CHECK(torch::equal(add_noise(z0, eps, 0, limit_schedule(1.0)).data(), z0.data()));
  CHECK(torch::allclose(add_noise(z0, eps, 0, limit_schedule(0.0)).data(), eps.data()));
  auto ones = LatentSeq(torch::ones({1, 4, 2, 2}, torch::kFloat64));
  auto zeros = LatentSeq(torch::zeros({1, 4, 2, 2}, torch::kFloat64));
  CHECK(torch::allclose(add_noise(ones, zeros, 0, limit_schedule(0.25)).data(),
                        0.5 * torch::ones({1, 4, 2, 2}, torch::kFloat64)));
}

TEST_CASE("denoise loss") {
  auto a = torch::randn({3, 4, 5, 5}, torch::kFloat64);
  CHECK(denoise_loss(LatentSeq(a), LatentSeq(a)) == 0.0);
  CHECK(denoise_loss(LatentSeq(a + 1), LatentSeq(a)) == doctest::Approx(1.0).epsilon(1e-12));
  auto b = torch::randn({3, 4, 5, 5}, torch::kFloat64);
  auto fa = a.flatten(), fb = b.flatten();
  double s = 0;
  for (int64_t i = 0; i < fa.numel(); ++i) {
    const double d = fa[i].item<double>() - fb[i].item<double>();
    s += d * d;
  }
  CHECK(std::abs(denoise_loss(LatentSeq(a), LatentSeq(b)) - s / static_cast<double>(fa.numel())) <= 1e-10);
}

TEST_CASE("ddim step") {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  auto z0 = LatentSeq(torch::randn({2, 4, 4, 4}, torch::kFloat64));
  auto eps = LatentSeq(torch::randn({2, 4, 4, 4}, torch::kFloat64));
  auto zt = add_noise(z0, eps, 600, sched);
  SUBCASE("full jump with the true noise recovers z0") {
    CHECK((ddim_step(zt, eps, 600, -1, sched).data() - z0.data()).abs().max().item<double>() <= 1e-6);
  }
  SUBCASE("zero noise prediction rescales") {
    auto zero = LatentSeq(torch::zeros_like(eps.data()));
    auto expect = zt.data() * std::sqrt(sched.alpha_bar(200) / sched.alpha_bar(600));
    CHECK(torch::allclose(ddim_step(zt, zero, 600, 200, sched).data(), expect, 1e-12, 1e-12));
  }
  SUBCASE("t_prev == t is a no-op") {
    CHECK(torch::equal(ddim_step(zt, eps, 600, 600, sched).data(), zt.data()));
  }
}

TEST_CASE("ddim timesteps") {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  const auto ts = ddim_timesteps(sched, 32);
  REQUIRE(ts.size() == 32);
  CHECK(ts.front() == 0);
  CHECK(ts.back() == 999);
  for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
  CHECK_THROWS(ddim_timesteps(sched, 0));
  CHECK_THROWS(ddim_timesteps(sched, 1001));
}

TEST_CASE("ddim sampling with an oracle predictor") {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  auto gen = make_generator(4);
  auto z0 = LatentSeq(torch::randn({2, 4, 4, 4}, gen).to(torch::kFloat64));
  auto eps = LatentSeq(torch::randn({2, 4, 4, 4}, gen).to(torch::kFloat64));
  auto zT = add_noise(z0, eps, 999, sched);
  int calls = 0;
  EpsPredictor oracle = [&](const LatentSeq&, int64_t) {
    ++calls;
    return eps;
  };
  auto full = ddim_sample(oracle, zT, sched, 1000);
  CHECK((full.data() - z0.data()).abs().max().item<double>() <= 1e-5);
  CHECK(calls == 1000);

  calls = 0;
  auto a = ddim_sample(oracle, zT, sched, 32);
  CHECK(calls == 32);
  auto b = ddim_sample(oracle, zT, sched, 32);
  CHECK(torch::equal(a.data(), b.data()));
}

TEST_CASE("conditioned sampling forwards the condition") {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  auto zT = LatentSeq(torch::randn({1, 4, 2, 2}, torch::kFloat64));
  int seen = 0;
  auto model = [&](const LatentSeq& z, int64_t, int cond) {
    seen = cond;
    return LatentSeq(torch::zeros_like(z.data()));
  };
  ddim_sample(model, zT, 7, sched, 4);
  CHECK(seen == 7);
}

}  // TEST_SUITE

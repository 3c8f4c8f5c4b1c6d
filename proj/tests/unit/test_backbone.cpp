#include <doctest.h>
#include <torch/torch.h>

#include "vidswap/backbone.hpp"
#include "vidswap/errors.hpp"

using namespace vidswap;

namespace {

torch::Tensor loop_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  const int64_t lq = q.size(0), lk = k.size(0), d = q.size(1), dv = v.size(1);
  auto out = torch::zeros({lq, dv}, torch::kFloat64);
  for (int64_t i = 0; i < lq; ++i) {
    std::vector<double> s(static_cast<size_t>(lk));
    double mx = -1e300;
    for (int64_t j = 0; j < lk; ++j) {
      double dot = 0;
      for (int64_t c = 0; c < d; ++c) dot += q[i][c].item<double>() * k[j][c].item<double>();
      s[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[static_cast<size_t>(j)]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (int64_t j = 0; j < lk; ++j) {
      for (int64_t c = 0; c < dv; ++c) {
        out[i][c] += s[static_cast<size_t>(j)] / z * v[j][c].item<double>();
      }
    }
  }
  return out;
}

struct Toy {
  UNetConfig cfg;
  UNet unet{nullptr}, ref{nullptr};
  Toy() {
    torch::manual_seed(5);
    unet = UNet(cfg);
    ref = UNet(reference_config(cfg));
    // Give the temporal out-projections weight so video mode differs from image mode.
    torch::NoGradGuard ng;
    for (auto& p : unet->temporal_parameters()) p.normal_(0, 0.05);
  }
};

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("attention with a single key returns its value") {
  auto q = torch::randn({5, 8}, torch::kFloat64);
  auto k = torch::randn({1, 8}, torch::kFloat64);
  auto v = torch::randn({1, 3}, torch::kFloat64);
  auto out = attend(q, k, v);
  for (int64_t i = 0; i < 5; ++i) CHECK(torch::allclose(out[i], v[0]));
}

TEST_CASE("duplicated keys leave attention unchanged") {
  auto q = torch::randn({4, 8}, torch::kFloat64);
  auto k = torch::randn({1, 8}, torch::kFloat64);
  auto v = torch::randn({1, 3}, torch::kFloat64);
  CHECK(torch::allclose(attend(q, torch::cat({k, k}), torch::cat({v, v})), attend(q, k, v)));
}

TEST_CASE("attention against a softmax loop") {
  auto q = torch::randn({3, 4}, torch::kFloat64);
  auto k = torch::randn({5, 4}, torch::kFloat64);
  auto v = torch::randn({5, 2}, torch::kFloat64);
  CHECK((attend(q, k, v) - loop_attention(q, k, v)).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("duplicated context tokens leave cross-attention unchanged") {
  MultiHeadAttention attn(16, 8, 2);
  attn->to(torch::kFloat64);
  torch::NoGradGuard ng;
  auto fmap = torch::randn({2, 16, 3, 3}, torch::kFloat64);
  auto tokens = torch::randn({2, 5, 8}, torch::kFloat64);
  auto once = cross_attention(attn, fmap, tokens);
  auto twice = cross_attention(attn, fmap, torch::cat({tokens, tokens}, 1));
  CHECK((once - twice).abs().max().item<double>() <= 1e-12);

  // direct single-head oracle on the projected tensors
  MultiHeadAttention one(16, 8, 1);
  one->to(torch::kFloat64);
  auto x = fmap.flatten(2).transpose(1, 2);
  auto q = one->to_q->forward(x)[0], k = one->to_k->forward(tokens)[0], v = one->to_v->forward(tokens)[0];
  auto expect = one->to_out->forward(loop_attention(q, k, v));
  auto got = one->forward(x, tokens)[0];
  CHECK((expect - got).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("reference cache from zero motion frames") {
  Toy toy;
  torch::NoGradGuard ng;
  auto cache = reference_forward(toy.ref, torch::zeros({4, 4, 8, 8}), 4);
  CHECK(cache.features.size() == 3);
  CHECK(cache.motion_frames == 4);
  for (const auto& [name, f] : cache.features) {
    CHECK(f.size(0) == 4);
    CHECK(torch::isfinite(f).all().item<bool>());
  }
  auto again = reference_forward(toy.ref, torch::zeros({4, 4, 8, 8}), 4);
  for (const auto& [name, f] : cache.features) CHECK(torch::equal(f, again.features.at(name)));
  CHECK_THROWS_AS(reference_forward(toy.ref, torch::zeros({0, 4, 8, 8}), 0), ContractError);
}

TEST_CASE("temporal attention sees M + T positions") {
  Toy toy;
  torch::NoGradGuard ng;
  auto motion = torch::randn({4, 4, 8, 8});
  auto cache = reference_forward(toy.ref, motion, 4);
  auto x = torch::randn({8, 13, 8, 8});
  auto t = torch::full({8}, 500, torch::kLong);
  auto ctx = torch::randn({8, 46, 64});
  DenoiseTrace trace;
  auto out = toy.unet->forward(x, t, ctx, 8, DenoiseMode::video, &cache, &trace);
  CHECK(out.sizes() == torch::IntArrayRef{8, 4, 8, 8});
  REQUIRE(trace.kv_lengths.size() == 3);
  for (auto L : trace.kv_lengths) CHECK(L == 12);
}

TEST_CASE("image mode equals a backbone without temporal layers") {
  Toy toy;
  UNetConfig flat = toy.cfg;
  flat.temporal = false;
  UNet plain(flat);
  copy_matching_parameters(*toy.unet, *plain);
  torch::NoGradGuard ng;
  auto x = torch::randn({3, 13, 8, 8});
  auto t = torch::tensor({1, 10, 900}, torch::kLong);
  auto ctx = torch::randn({3, 46, 64});
  CHECK(torch::equal(toy.unet->forward(x, t, ctx, 1, DenoiseMode::image),
                     plain->forward(x, t, ctx, 1, DenoiseMode::image)));
}

TEST_CASE("video mode without a cache is a contract error") {
  Toy toy;
  torch::NoGradGuard ng;
  auto x = torch::randn({8, 13, 8, 8});
  auto t = torch::zeros({8}, torch::kLong);
  auto ctx = torch::randn({8, 46, 64});
  CHECK_THROWS_AS(toy.unet->forward(x, t, ctx, 8, DenoiseMode::video), ContractError);
  CHECK_THROWS_AS(toy.unet->forward(x, t, ctx, 8, DenoiseMode::image), ContractError);
}

TEST_CASE("fresh temporal modules are identity maps") {
  TemporalAttention ta(32, 4);
  torch::NoGradGuard ng;
  auto x = torch::randn({8, 32, 4, 4});
  CHECK(torch::equal(ta->forward(x, 8, torch::randn({4, 32, 4, 4}), 4), x));
  CHECK(ta->last_kv_length == 12);
}

TEST_CASE("spatial and temporal parameter groups partition the backbone") {
  Toy toy;
  const auto all = toy.unet->parameters().size();
  CHECK(toy.unet->spatial_parameters().size() + toy.unet->temporal_parameters().size() == all);
  CHECK(!toy.unet->temporal_parameters().empty());
}

TEST_CASE("bad configurations are rejected") {
  UNetConfig c;
  c.channels = {30, 64};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(UNetConfig{}.in_channels == 13);
}

}  // TEST_SUITE

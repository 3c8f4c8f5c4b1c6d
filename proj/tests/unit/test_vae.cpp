#include <doctest.h>
#include <torch/torch.h>

#include <limits>

#include "vidswap/vae.hpp"

using namespace vidswap;

TEST_SUITE("vidfacevae") {

TEST_CASE("stfm blend endpoints") {
  torch::manual_seed(1);
  STFMBlock blk(8, 8, true, 4);
  torch::NoGradGuard ng;
  for (auto& p : blk->temporal_path->parameters()) p.normal_(0, 0.2);
  auto x = torch::randn({8, 8, 5, 5});
  auto spatial = blk->spatial_forward(x);
  auto temporal = blk->temporal_path->forward(spatial, 4);
  blk->beta_raw.fill_(std::numeric_limits<float>::infinity());
  CHECK(torch::equal(blk->forward(x, 4), spatial));
  blk->beta_raw.fill_(-std::numeric_limits<float>::infinity());
  CHECK(torch::equal(blk->forward(x, 4), temporal));
  blk->beta_raw.fill_(0.7);
  const double b = 1.0 / (1.0 + std::exp(-0.7));
  CHECK(torch::allclose(blk->forward(x, 4), b * spatial + (1 - b) * temporal, 1e-5, 1e-6));
  CHECK(blk->beta().item<double>() == doctest::Approx(b).epsilon(1e-6));
}

TEST_CASE("stfm single frame bypasses the temporal path for any beta") {
  STFMBlock blk(8, 16, true, 4);
  torch::NoGradGuard ng;
  auto x = torch::randn({3, 8, 6, 6});
  for (double raw : {-5.0, 0.0, 5.0}) {
    blk->beta_raw.fill_(raw);
    CHECK(torch::equal(blk->forward(x, 1), blk->spatial_forward(x)));
  }
}

TEST_CASE("temporal block starts as the identity") {
  TemporalResBlock blk(16, 4);
  torch::NoGradGuard ng;
  auto x = torch::randn({8, 16, 4, 4});
  CHECK(torch::equal(blk->forward(x, 4), x));
}

TEST_CASE("temporal block is stable on near-static clips") {
  torch::manual_seed(3);
  TemporalResBlock blk(16, 4);
  torch::NoGradGuard ng;
  for (auto& p : blk->parameters()) p.normal_(0, 0.2);
  auto still = torch::randn({1, 16, 4, 4}).expand({8, 16, 4, 4}).contiguous();
  auto jitter = still + 1e-4 * torch::randn({8, 16, 4, 4});
  CHECK((blk->forward(jitter, 8) - blk->forward(still, 8)).abs().max().item<double>() < 1e-2);
}

TEST_CASE("encoder shapes across frame counts") {
  VidFaceVAE vae(VaeConfig{});
  torch::NoGradGuard ng;
  for (int64_t T : {1, 2, 4, 8}) {
    auto [mean, logvar] = vae->encode(FrameSeq(torch::rand({T, 3, 64, 64}) * 2 - 1));
    CHECK(mean.data().sizes() == torch::IntArrayRef{T, 4, 8, 8});
    CHECK(logvar.data().sizes() == torch::IntArrayRef{T, 4, 8, 8});
  }
}

TEST_CASE("full-resolution clip keeps a 64x64 latent grid") {
  VidFaceVAE vae(VaeConfig{});
  torch::NoGradGuard ng;
  auto [mean, logvar] = vae->encode(FrameSeq(torch::zeros({8, 3, 512, 512})));
  CHECK(mean.data().sizes() == torch::IntArrayRef{8, 4, 64, 64});
}

TEST_CASE("decoder shapes") {
  VidFaceVAE vae(VaeConfig{});
  torch::NoGradGuard ng;
  auto out = vae->decode(LatentSeq(torch::randn({8, 4, 8, 8})));
  CHECK(out.data().sizes() == torch::IntArrayRef{8, 3, 64, 64});
  CHECK(out.data().abs().max().item<double>() <= 1.0);
}

TEST_CASE("single-frame decode equals frame-wise 2D decode") {
  VaeConfig flat;
  flat.encoder_temporal = flat.decoder_temporal = false;
  VidFaceVAE full(VaeConfig{}), spatial(flat);
  copy_matching_parameters(*full, *spatial);
  torch::NoGradGuard ng;
  for (auto& b : full->stfm_blocks()) {
    if (b->has_temporal()) b->beta_raw.fill_(-2.0);
  }
  auto z = torch::randn({1, 4, 8, 8});
  CHECK(torch::equal(full->decode(LatentSeq(z)).data(), spatial->decode(LatentSeq(z)).data()));
}

TEST_CASE("betas start at one half") {
  VidFaceVAE vae(VaeConfig{});
  const auto b = vae->betas();
  CHECK(!b.empty());
  for (double v : b) CHECK(v == doctest::Approx(0.5));
  VaeConfig flat;
  flat.encoder_temporal = flat.decoder_temporal = false;
  CHECK(VidFaceVAE(flat)->betas().empty());
}

TEST_CASE("vae loss terms") {
  auto target = torch::rand({2, 3, 3, 16, 16}) * 2 - 1;
  auto zeros = torch::zeros({2, 3, 4, 2, 2});
  VaeLossWeights w;
  auto perfect = vae_loss(target, target, zeros, zeros, w,
                          [](const torch::Tensor& a, const torch::Tensor& b) { return multiscale_gradient_distance(a, b); });
  CHECK(perfect.total.item<double>() == doctest::Approx(0.0));
  auto off = vae_loss(target + 0.5, target, zeros, zeros, w, {});
  CHECK(w.recon * off.recon.item<double>() == doctest::Approx(0.5 * w.recon).epsilon(1e-6));
  CHECK(off.total.item<double>() == doctest::Approx(0.5 * w.recon).epsilon(1e-6));
}

TEST_CASE("kl against a scalar loop") {
  auto mean = torch::randn({2, 3, 4}, torch::kFloat64);
  auto logvar = torch::randn({2, 3, 4}, torch::kFloat64) * 0.5;
  auto fm = mean.flatten(), fl = logvar.flatten();
  double s = 0;
  for (int64_t i = 0; i < fm.numel(); ++i) {
    const double mu = fm[i].item<double>(), lv = fl[i].item<double>();
    s += 0.5 * (mu * mu + std::exp(lv) - 1 - lv);
  }
  s /= static_cast<double>(fm.numel());
  CHECK(std::abs(kl_to_standard_normal(mean, logvar).item<double>() - s) <= 1e-8);
}

TEST_CASE("loss weights are validated") {
  VaeLossWeights w;
  w.kl = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  VaeConfig c;
  c.channels.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stage-1 loss weights") {
  VaeLossWeights w;
  CHECK(w.recon == 1.0);
  CHECK(w.perceptual == 0.1);
  CHECK(w.kl == 1e-6);
}

}  // TEST_SUITE

#include <doctest.h>
#include <torch/torch.h>

#include <filesystem>
#include <set>

#include "vidswap/aidt.hpp"
#include "vidswap/pipeline.hpp"
#include "vidswap/trainer.hpp"

using namespace vidswap;

namespace {

struct Fixture {
  MemoryStore corpus_store, aidt_store;
  SwapModel model{ModelConfig{}};
  std::vector<PreparedExample> images, videos;

  Fixture() {
    const auto prov = desk_condition_providers();
    SyntheticCorpusConfig cc;
    cc.identities = 4;
    cc.images_per_identity = 2;
    cc.clips = 2;
    cc.clip_length = 14;
    cc.seed = 2;
    const auto corpus = generate_corpus(cc, corpus_store, *prov.detector, *prov.embeddings.identity,
                                        prov.embeddings.crop_size);
    SyntheticSwapper sw(prov.embeddings.identity, prov.embeddings.crop_size);
    const auto build = build_aidt(corpus, sw, AidtConfig{}, aidt_store);
    for (const auto& t : build.triplets) {
      auto p = prepare_example(model, to_training_example(t, corpus_store, aidt_store), prov,
                               model->config().mask);
      (t.modality == Modality::image ? images : videos).push_back(std::move(p));
    }
  }

  static std::vector<const PreparedExample*> ptrs(const std::vector<PreparedExample>& v) {
    std::vector<const PreparedExample*> out;
    for (const auto& e : v) out.push_back(&e);
    return out;
  }
};

std::set<const void*> addresses(const std::vector<torch::Tensor>& ps) {
  std::set<const void*> s;
  for (const auto& p : ps) s.insert(p.unsafeGetTensorImpl());
  return s;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("stage defaults") {
  const auto s1 = make_stage(1), s2 = make_stage(2), s3 = make_stage(3);
  CHECK(s1.learning_rate == 5e-6);
  CHECK(s1.batch_size == 32);
  CHECK(s2.learning_rate == 1e-5);
  CHECK(s3.learning_rate == 1e-5);
  CHECK(s2.batch_size == 32);
  CHECK(s1.trains("vae"));
  CHECK(!s2.trains("vae"));
  CHECK(!s2.trains("backbone.temporal"));
  CHECK(!s2.trains("refnet"));
  CHECK(s3.trains("backbone.temporal"));
  CHECK(s3.trains("refnet"));
  CHECK(!s3.trains("vae"));
  CHECK(s3.p_video == 0.5);
  CHECK_THROWS_AS(make_stage(4), ConfigError);
}

TEST_CASE("stage 1 optimises the VAE only") {
  SwapModel model{ModelConfig{}};
  Trainer tr(model, make_stage(1), 1);
  CHECK(addresses(tr.trainable_parameters()) == addresses(model->group("vae")));
  const auto opt = addresses(tr.trainable_parameters());
  for (const auto& p : model->group("backbone.spatial")) CHECK(opt.count(p.unsafeGetTensorImpl()) == 0);
  auto clips = torch::stack({synthetic_clips(1, 2, 64, 1).front().data()});
  const auto r = tr.vae_step(clips, 3);
  CHECK(std::isfinite(r.loss));
  CHECK(r.grad_norms.at("vae") > 0);
  CHECK(tr.optimizer_state_count() == static_cast<int64_t>(model->group("vae").size()));
}

TEST_CASE("stage 2 leaves temporal gradients at zero") {
  Fixture f;
  auto s = make_stage(2);
  s.batch_size = 2;
  Trainer tr(f.model, s, 1);
  const auto r = tr.diffusion_step(Fixture::ptrs(f.images), Modality::image, 5);
  CHECK(r.grad_norms.at("backbone.temporal") == 0.0);
  CHECK(r.grad_norms.at("backbone.spatial") > 0.0);
  for (const auto& p : f.model->group("backbone.temporal")) {
    CHECK((!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0));
    CHECK(!p.requires_grad());
  }
  CHECK_THROWS_AS(tr.diffusion_step(Fixture::ptrs(f.videos), Modality::video, 5), ContractError);
}

TEST_CASE("stage 3 reaches the temporal modules on video batches") {
  Fixture f;
  auto s = make_stage(3);
  s.batch_size = 2;
  Trainer tr(f.model, s, 1);
  const auto r = tr.diffusion_step(Fixture::ptrs(f.videos), Modality::video, 5);
  CHECK(r.grad_norms.at("backbone.temporal") > 0.0);
  CHECK(r.modality == Modality::video);
  // Reference features enter through temporal attention, whose output
  // projection is zero until the first update.
  CHECK(r.grad_norms.at("refnet") == 0.0);
  const auto r2 = tr.diffusion_step(Fixture::ptrs(f.videos), Modality::video, 6);
  CHECK(r2.grad_norms.at("refnet") > 0.0);
}

TEST_CASE("hybrid sampler") {
  SUBCASE("boundaries") {
    HybridSampler img(10, 10, 0.0, 4, 1), vid(10, 10, 1.0, 4, 1);
    for (int k = 0; k < 200; ++k) {
      CHECK(img.batch(k).modality == Modality::image);
      CHECK(vid.batch(k).modality == Modality::video);
    }
  }
  SUBCASE("mixing fraction") {
    HybridSampler s(10, 10, 0.5, 4, 7);
    int64_t video = 0;
    for (int k = 0; k < 10000; ++k) video += s.batch(k).modality == Modality::video;
    CHECK(video >= 4800);
    CHECK(video <= 5200);
  }
  SUBCASE("batches depend only on seed and index") {
    HybridSampler a(10, 5, 0.5, 3, 9), b(10, 5, 0.5, 3, 9);
    CHECK(a.batch(17).indices == b.batch(17).indices);
    CHECK(a.batch(17).noise_seed == b.batch(17).noise_seed);
  }
  SUBCASE("empty pool falls back") {
    HybridSampler s(10, 0, 1.0, 2, 1);
    const auto b = s.batch(0);
    CHECK(b.modality == Modality::image);
    CHECK(b.fell_back);
  }
}

TEST_CASE("training is deterministic and starts near unit loss") {
  Fixture f;
  auto s = make_stage(2);
  s.batch_size = 4;
  std::vector<double> a, b;
  for (auto* out : {&a, &b}) {
    SwapModel m{ModelConfig{}};
    Trainer tr(m, s, 4);
    for (const auto& r : run_diffusion(tr, f.images, {}, {2, 4, 0})) out->push_back(r.loss);
  }
  CHECK(a == b);
  CHECK(a[0] >= 0.7);
  CHECK(a[0] <= 1.3);
}

TEST_CASE("provenance follows the triplet roles") {
  Fixture f;
  auto s = make_stage(2);
  s.batch_size = 1;
  Trainer tr(f.model, s, 1);
  const auto r = tr.diffusion_step({&f.images[0]}, Modality::image, 1);
  REQUIRE(r.provenance.size() == 1);
  // identity from the source still, attributes from the decoupling face
  CHECK(r.provenance[0].first.rfind("images/", 0) == 0);
  CHECK(r.provenance[0].second.rfind("decoupling/", 0) == 0);
}

TEST_CASE("checkpoint resume continues the step count") {
  Fixture f;
  auto s = make_stage(2);
  s.batch_size = 2;
  const auto path = (std::filesystem::temp_directory_path() / "vidswap_trainer.ckpt").string();
  double expected = 0;
  {
    Trainer tr(f.model, s, 1);
    run_diffusion(tr, f.images, {}, {2, 1, 0});
    tr.save(path);
    expected = tr.diffusion_loss(Fixture::ptrs(f.images), Modality::image, 99);
  }
  SwapModel fresh{ModelConfig{}};
  Trainer tr(fresh, s, 1);
  tr.resume(path);
  CHECK(tr.steps_done() == 2);
  CHECK(tr.diffusion_loss(Fixture::ptrs(f.images), Modality::image, 99) == expected);
  const auto info = read_checkpoint_header(path);
  CHECK(info.stage == 2);
  CHECK(info.has_optimizer);
  std::filesystem::remove(path);
}

}  // TEST_SUITE

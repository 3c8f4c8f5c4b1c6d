#include <doctest.h>
#include <torch/torch.h>

#include "vidswap/inference.hpp"
#include "vidswap/pipeline.hpp"

using namespace vidswap;

namespace {

struct SwapRig {
  ModelConfig mc;
  SwapModel model{mc};
  NoiseSchedule sched = make_schedule(mc.schedule);
  ConditionProviders prov = desk_condition_providers();
  FrameSeq source;
  SwapRig() {
    model->eval();
    Rng r(1);
    source = FrameSeq(synth::render_face(synth::random_still(synth::make_identity(77), r, 64, 64), 64, 64)
                          .image.unsqueeze(0));
  }
};

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("clip windows") {
  const auto one = plan_clip_windows(8, 8);
  REQUIRE(one.size() == 1);
  CHECK(one[0].start == 0);
  CHECK(one[0].valid == 8);
  const auto w = plan_clip_windows(20, 8);
  REQUIRE(w.size() == 3);
  CHECK(w[0].start == 0);
  CHECK(w[1].start == 8);
  CHECK(w[2].start == 16);
  CHECK(w[2].valid == 4);
  auto video = FrameSeq(torch::arange(20, torch::kFloat32).view({20, 1, 1, 1}).expand({20, 3, 2, 2}).contiguous());
  const auto last = window_frames(video, w[2], 8);
  CHECK(last.frame_count() == 8);
  CHECK(last.data()[3][0][0][0].item<float>() == 19.0f);
  CHECK(last.data()[7][0][0][0].item<float>() == 19.0f);
}

TEST_CASE("feather") {
  auto mask = torch::zeros({1, 1, 24, 24});
  mask.slice(2, 5, 19).slice(3, 4, 20).fill_(1);
  SUBCASE("zero feather is a hard paste") {
    CHECK(torch::equal(feather_alpha(mask, 0).to(torch::kFloat32), mask));
    auto gen = FrameSeq(torch::ones({1, 3, 24, 24}));
    auto tgt = FrameSeq(-torch::ones({1, 3, 24, 24}));
    auto out = composite(gen, tgt, mask, 0).data();
    CHECK(torch::equal(out, torch::where(mask.expand({1, 3, 24, 24}) > 0, gen.data(), tgt.data())));
  }
  SUBCASE("empty mask returns the target") {
    auto tgt = FrameSeq(torch::rand({1, 3, 24, 24}));
    auto out = composite(FrameSeq(torch::rand({1, 3, 24, 24})), tgt, torch::zeros({1, 1, 24, 24}), 3);
    CHECK(torch::equal(out.data(), tgt.data()));
  }
  SUBCASE("ramp matches a distance oracle") {
    const int64_t f = 3;
    auto a = feather_alpha(mask, f).to(torch::kFloat32);
    auto plane = mask[0][0];
    auto m = plane.accessor<float, 2>();
    auto got = a[0][0];
    auto acc = got.accessor<float, 2>();
    double worst = 0;
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 24; ++x) {
        double expect = 0;
        if (m[y][x] > 0) {
          double d = 1e9;
          for (int v = 0; v < 24; ++v) {
            for (int u = 0; u < 24; ++u) {
              if (m[v][u] == 0) d = std::min(d, std::hypot(double(u - x), double(v - y)));
            }
          }
          expect = std::min(1.0, d / (f + 1));
        }
        worst = std::max(worst, std::abs(expect - acc[y][x]));
      }
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("single-window swap sees zero motion") {
  SwapRig rig;
  const auto target = synthetic_clips(1, 8, 64, 3).front();
  int clips = 0;
  bool zero_motion = false;
  int64_t model_calls = 0;
  SwapHooks hooks;
  hooks.on_clip_start = [&](int64_t, const ClipWindow&, const FrameSeq& m) {
    ++clips;
    zero_motion = m.frame_count() == 4 && m.data().abs().max().item<double>() == 0.0;
  };
  hooks.on_model_call = [&](int64_t, int64_t) { ++model_calls; };
  SwapOptions opts;
  CHECK(opts.steps == 32);
  const auto out = swap_video(rig.source, target, rig.model, rig.sched, rig.prov, opts, &hooks);
  CHECK(clips == 1);
  CHECK(zero_motion);
  CHECK(model_calls == 32);
  CHECK(out.frame_count() == 8);
}

TEST_CASE("twenty frames chain three clips") {
  SwapRig rig;
  const auto target = synthetic_clips(1, 20, 64, 4).front();
  std::vector<ClipWindow> windows;
  std::vector<FrameSeq> motions, decoded;
  SwapHooks hooks;
  hooks.on_clip_start = [&](int64_t, const ClipWindow& w, const FrameSeq& m) {
    windows.push_back(w);
    motions.push_back(FrameSeq(m.data().clone()));
  };
  hooks.on_decoded = [&](int64_t, const FrameSeq& d) { decoded.push_back(FrameSeq(d.data().clone())); };
  SwapOptions opts;
  opts.steps = 2;
  swap_video(rig.source, target, rig.model, rig.sched, rig.prov, opts, &hooks);
  REQUIRE(windows.size() == 3);
  CHECK(windows[2].valid == 4);
  CHECK(torch::equal(motions[1].data(), decoded[0].data().slice(0, 4, 8)));
  CHECK(torch::equal(motions[2].data(), decoded[1].data().slice(0, 4, 8)));
}

TEST_CASE("output length equals input length") {
  SwapRig rig;
  const auto long_clip = synthetic_clips(1, 32, 64, 5).front();
  SwapOptions opts;
  opts.steps = 1;
  for (int64_t n = 1; n <= 32; ++n) {
    const auto out = swap_video(rig.source, long_clip.slice(0, n), rig.model, rig.sched, rig.prov, opts);
    CHECK(out.frame_count() == n);
  }
}

}  // TEST_SUITE

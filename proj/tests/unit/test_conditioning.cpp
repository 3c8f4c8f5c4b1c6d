#include <doctest.h>
#include <torch/torch.h>

#include "vidswap/conditioning.hpp"
#include "vidswap/desk_providers.hpp"
#include "vidswap/synthetic_face.hpp"

using namespace vidswap;

namespace {

class FixedDetector : public FaceDetector {
 public:
  explicit FixedDetector(std::vector<FaceBox> boxes) : boxes_(std::move(boxes)) {}
  std::optional<FaceBox> detect(const torch::Tensor& frame) const override {
    // frame index is encoded in pixel (0, 0) of channel 0
    const auto i = static_cast<size_t>(std::lround(frame[0][0][0].item<double>() * 10));
    if (i >= boxes_.size()) return std::nullopt;
    return boxes_[i];
  }

 private:
  std::vector<FaceBox> boxes_;
};

FrameSeq indexed_frames(int64_t n, int64_t size = 32) {
  auto x = torch::zeros({n, 3, size, size});
  for (int64_t i = 0; i < n; ++i) x[i][0][0][0] = static_cast<float>(i) / 10.0f;
  return FrameSeq(x);
}

class SpyRenderer : public FaceRenderer3D {
 public:
  FaceCoefficients fit(const torch::Tensor&, const FaceBox& box) const override {
    FaceCoefficients c;
    c.cx = box.center().x;
    c.cy = box.center().y;
    c.texture = {0.3, -0.2, 0.1};
    return c;
  }
  torch::Tensor render(const FaceCoefficients& c, int64_t h, int64_t w) const override {
    seen_texture.push_back(c.texture);
    return torch::zeros({3, h, w});
  }
  mutable std::vector<std::vector<double>> seen_texture;
};

torch::Tensor face_image(uint64_t id, uint64_t seed) {
  Rng r(seed);
  return synth::render_face(synth::random_still(synth::make_identity(id), r, 64, 64), 64, 64).image;
}

}  // namespace

TEST_SUITE("conditioning") {

TEST_CASE("mask covers the detected box exactly") {
  FixedDetector det({FaceBox{8, 8, 24, 24}});
  MaskConfig cfg;
  cfg.margin = 0;
  const auto m = build_mask(indexed_frames(1), det, cfg);
  auto expect = torch::zeros({1, 1, 32, 32});
  expect.slice(2, 8, 24).slice(3, 8, 24).fill_(1);
  CHECK(torch::equal(m.mask, expect));
}

TEST_CASE("margin grows the box and clips to the frame") {
  FixedDetector det({FaceBox{8, 8, 24, 24}, FaceBox{0, 2, 30, 31}});
  MaskConfig cfg;
  cfg.margin = 4;
  cfg.smooth_window = 1;
  const auto m = build_mask(indexed_frames(2), det, cfg);
  CHECK(m.boxes[0] == FaceBox{4, 4, 28, 28});
  CHECK(m.boxes[1] == FaceBox{0, 0, 32, 32});
  CHECK(m.mask[0].sum().item<double>() == 24 * 24);
}

TEST_CASE("smoothing matches a 3-tap moving average") {
  std::vector<FaceBox> boxes{{10, 10, 20, 20}, {12, 9, 22, 21}, {9, 11, 19, 19}, {13, 10, 23, 20}, {11, 12, 21, 22}};
  const auto s = smooth_boxes(boxes, 3);
  REQUIRE(s.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    const size_t lo = i == 0 ? 0 : i - 1, hi = std::min<size_t>(4, i + 1);
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    for (size_t k = lo; k <= hi; ++k) {
      x0 += boxes[k].x0;
      y0 += boxes[k].y0;
      x1 += boxes[k].x1;
      y1 += boxes[k].y1;
    }
    const double n = static_cast<double>(hi - lo + 1);
    CHECK(s[i].x0 == doctest::Approx(x0 / n));
    CHECK(s[i].y0 == doctest::Approx(y0 / n));
    CHECK(s[i].x1 == doctest::Approx(x1 / n));
    CHECK(s[i].y1 == doctest::Approx(y1 / n));
  }
}

TEST_CASE("missing detection names the frame") {
  FixedDetector det({FaceBox{8, 8, 24, 24}});
  try {
    detect_boxes(indexed_frames(3), det);
    FAIL("expected DetectionError");
  } catch (const DetectionError& e) {
    CHECK(e.frame_index() == 1);
  }
}

TEST_CASE("frontal render is symmetric and yaw renders mirror") {
  EllipsoidRenderer r;
  FaceCoefficients c;
  c.cx = 32;
  c.cy = 32;
  c.half_width = 14;
  c.half_height = 17;
  auto front = r.render(c, 64, 64);
  CHECK(torch::equal(front, front.flip({2})));
  c.pose.yaw = 30;
  auto left = r.render(c, 64, 64);
  c.pose.yaw = -30;
  auto right = r.render(c, 64, 64);
  CHECK((left - right.flip({2})).abs().max().item<double>() <= 1e-6);
  CHECK(!torch::equal(left, right));
}

TEST_CASE("condition renders receive a zero texture component") {
  FixedDetector det({FaceBox{8, 8, 24, 24}, FaceBox{8, 8, 24, 24}});
  SpyRenderer spy;
  render_condition(indexed_frames(2), {FaceBox{8, 8, 24, 24}, FaceBox{8, 8, 24, 24}}, spy);
  REQUIRE(spy.seen_texture.size() == 2);
  for (const auto& t : spy.seen_texture) {
    for (double v : t) CHECK(v == 0.0);
  }
}

TEST_CASE("masked frames zero the face region") {
  auto target = FrameSeq(torch::ones({2, 3, 8, 8}));
  auto mask = torch::zeros({2, 1, 8, 8});
  mask.slice(2, 2, 4).fill_(1);
  auto out = mask_frames(target, mask).data();
  CHECK(out.slice(2, 2, 4).abs().sum().item<double>() == 0.0);
  CHECK(torch::equal(out.slice(2, 4, 8), target.data().slice(2, 4, 8)));
}

TEST_CASE("providers are deterministic and identity vectors are unit norm") {
  const auto p = make_desk_providers(48);
  const auto img = face_image(1, 1);
  ChromaFaceDetector det;
  const auto box = det.detect(img);
  REQUIRE(box.has_value());
  const auto crop = crop_face(img, *box, p.crop_size);
  CHECK(torch::equal(p.identity->embed(crop), p.identity->embed(crop)));
  CHECK(torch::equal(p.texture->tokens(crop), p.texture->tokens(crop)));
  CHECK(torch::equal(p.attribute->tokens(crop), p.attribute->tokens(crop)));
  CHECK(p.identity->embed(crop).norm().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  const auto f1 = encode_faces(img, FrameSeq(img.unsqueeze(0)), {*box}, det, p);
  const auto f2 = encode_faces(img, FrameSeq(img.unsqueeze(0)), {*box}, det, p);
  CHECK(torch::equal(f1.identity, f2.identity));
  CHECK(torch::equal(f1.texture, f2.texture));
  CHECK(torch::equal(f1.attributes, f2.attributes));
}

TEST_CASE("distinct identities have dissimilar identity vectors") {
  const auto p = make_desk_providers(48);
  ChromaFaceDetector det;
  auto embed = [&](uint64_t id) {
    const auto img = face_image(id, 3);
    return p.identity->embed(crop_face(img, *det.detect(img), p.crop_size));
  };
  CHECK(torch::dot(embed(11), embed(12)).item<double>() < 0.5);
  CHECK(torch::dot(embed(21), embed(37)).item<double>() < 0.5);
}

TEST_CASE("mixer weights") {
  auto id = torch::randn({2, 4, 8}), tex = torch::randn({2, 21, 8}), attr = torch::randn({2, 21, 8});
  SUBCASE("identity only") {
    auto out = mix(id, tex, attr, {1.0, 0.0, 0.0});
    CHECK(out.size(1) == 46);
    CHECK(torch::equal(out.slice(1, 0, 4), id));
    CHECK(out.slice(1, 4, 46).abs().sum().item<double>() == 0.0);
  }
  SUBCASE("defaults") {
    MixerWeights w;
    CHECK(w.w_id == 1.0);
    CHECK(w.w_tex == 0.6);
    CHECK(w.w_attr == 0.6);
    CHECK_NOTHROW(w.validate());
  }
  SUBCASE("linearity in the texture weight") {
    auto a = mix(id, tex, attr, {1.0, 0.3, 0.6});
    auto b = mix(id, tex, attr, {1.0, 0.6, 0.6});
    CHECK(torch::allclose(b.slice(1, 4, 25), 2 * a.slice(1, 4, 25)));
    CHECK(torch::equal(a.slice(1, 25, 46), b.slice(1, 25, 46)));
  }
  SUBCASE("negative weights rejected") {
    CHECK_THROWS_AS((MixerWeights{1.0, -0.1, 0.6}.validate()), ConfigError);
  }
}

TEST_CASE("face encoder token shapes") {
  FaceEncoder enc(FaceEncoderConfig{});
  auto t = enc->forward(torch::randn({2, 256}), torch::randn({2, 21, 6}), torch::randn({2, 3, 21, 6}));
  CHECK(t.id.sizes() == torch::IntArrayRef{6, 4, 64});
  CHECK(t.tex.sizes() == torch::IntArrayRef{6, 21, 64});
  CHECK(t.attr.sizes() == torch::IntArrayRef{6, 21, 64});
  CHECK_NOTHROW(enc->check_providers(make_desk_providers()));
  FaceEncoderConfig small;
  small.id_dim = 16;
  CHECK_THROWS_AS(FaceEncoder(small)->check_providers(make_desk_providers()), ConfigError);
}

}  // TEST_SUITE

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vidswap/geometry.hpp"
#include "vidswap/random.hpp"

// Procedural face world used at desk scale: every image carries known
// identity, gender, pose, expression and landmarks, so dataset filters,
// providers and metrics can be checked against ground truth.

namespace vidswap::synth {

struct Grating {
  double fx = 0, fy = 0, phase = 0, amplitude = 0;
};

struct IdentityCode {
  uint64_t id = 0;
  int gender = 0;
  std::array<double, 3> skin{0.8, 0.53, 0.34};
  std::array<Grating, 6> gratings{};

  double aspect() const { return gender == 0 ? 1.26 : 1.14; }
};

IdentityCode make_identity(uint64_t id, std::optional<int> gender = std::nullopt);

struct FaceParams {
  IdentityCode identity;
  Pose pose;
  Expression expression;
  double cx = 32, cy = 32;
  double half_width = 14;
  uint64_t background_seed = 0;

  double half_height() const { return half_width * identity.aspect(); }
};

struct ProjectedPoint {
  Point2 p;
  double depth = 0;
};

/// Projects a face-local anchor (unit-sphere coordinates) to the image.
ProjectedPoint project_anchor(double x, double y, double z, const Pose& pose, double cx,
                              double cy, double half_width, double half_height);

/// 3D anchors for the five landmarks under a given expression.
std::array<std::array<double, 3>, 5> landmark_anchors(const Expression& e);

Landmarks face_landmarks(const FaceParams& p);

struct RenderedFace {
  torch::Tensor image;  // [3, H, W] in [-1, 1]
  Landmarks landmarks;
  FaceBox box;          // extents of face pixels
};

RenderedFace render_face(const FaceParams& p, int64_t height, int64_t width);

/// Random still-image parameters for an identity.
FaceParams random_still(const IdentityCode& id, Rng& rng, int64_t height, int64_t width);

/// Smoothly varying parameters for a clip of `length` frames.
std::vector<FaceParams> random_clip(const IdentityCode& id, int64_t length, Rng& rng,
                                    int64_t height, int64_t width);

}  // namespace vidswap::synth

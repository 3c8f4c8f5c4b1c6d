#pragma once

#include <optional>

#include "vidswap/providers.hpp"

// Desk-scale provider implementations. They operate on pixels only and are
// tuned to the procedural faces of synthetic_face.hpp: grey backgrounds,
// skin-chroma faces, dark eyes and a dark red mouth.

namespace vidswap {

/// Face = pixels whose red-minus-blue chroma exceeds a threshold.
class ChromaFaceDetector : public FaceDetector {
 public:
  explicit ChromaFaceDetector(double chroma_threshold = 0.15, int64_t min_pixels = 12)
      : threshold_(chroma_threshold), min_pixels_(min_pixels) {}
  std::optional<FaceBox> detect(const torch::Tensor& frame) const override;

 private:
  double threshold_;
  int64_t min_pixels_;
};

/// Identity descriptor: skin luminance resampled in the face's own ellipse
/// frame (moments of the skin mask plus the eye line), smooth shading
/// regressed out, dark features masked.
class TextureIdentityProvider : public IdentityProvider {
 public:
  explicit TextureIdentityProvider(int64_t grid = 16) : grid_(grid) {}
  int64_t dim() const override { return grid_ * grid_; }
  torch::Tensor embed(const torch::Tensor& crop) const override;

 private:
  int64_t grid_;
};

/// Patch-token pyramid (1x1, 2x2, 4x4 patches). Colour statistics for the
/// texture stream, luminance-structure statistics for the attribute stream.
class PatchTokenProvider : public TokenProvider {
 public:
  enum class Kind { colour, structure };
  explicit PatchTokenProvider(Kind kind) : kind_(kind) {}
  int64_t token_count() const override { return 21; }
  int64_t token_dim() const override { return 6; }
  torch::Tensor tokens(const torch::Tensor& crop) const override;

 private:
  Kind kind_;
};

EmbeddingProviders make_desk_providers(int64_t crop_size = 48);

struct FaceGeometry {
  FaceBox box;
  double cx = 0, cy = 0, half_width = 0, half_height = 0;
  Pose pose;
  Expression expression;
  Landmarks landmarks;
};

/// Recovers pose and expression from the eye and mouth blobs inside a box.
class LandmarkGeometryEstimator {
 public:
  std::optional<FaceGeometry> estimate(const torch::Tensor& frame, const FaceBox& box) const;
};

/// Texture-free shaded ellipsoid. Brightness follows the angle between the
/// surface normal and the face's forward direction; eyes and mouth are
/// carved in as darker regions.
class EllipsoidRenderer : public FaceRenderer3D {
 public:
  FaceCoefficients fit(const torch::Tensor& frame, const FaceBox& box) const override;
  torch::Tensor render(const FaceCoefficients& coeffs, int64_t height,
                       int64_t width) const override;

 private:
  LandmarkGeometryEstimator estimator_;
};

/// Pose (yaw, pitch, roll) or expression (mouth_open, smile) read from
/// pixels via detector + landmark estimator.
class EstimatedAttributeProvider : public AttributeProvider {
 public:
  enum class Kind { pose, expression };
  EstimatedAttributeProvider(std::shared_ptr<const FaceDetector> detector, Kind kind)
      : detector_(std::move(detector)), kind_(kind) {}
  std::optional<std::vector<double>> measure(const torch::Tensor& frame) const override;

 private:
  std::shared_ptr<const FaceDetector> detector_;
  Kind kind_;
  LandmarkGeometryEstimator estimator_;
};

}  // namespace vidswap

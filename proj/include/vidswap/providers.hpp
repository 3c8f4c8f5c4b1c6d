#pragma once

#include <torch/torch.h>

#include <memory>
#include <optional>
#include <vector>

#include "vidswap/geometry.hpp"

// Pluggable provider contracts. Frames are [3, H, W] tensors in [-1, 1].
// Desk-scale implementations live in desk_providers.hpp; production
// backends (SCRFD, ArcFace, DINO, a 3DMM fitter, HopeNet) slot in behind
// the same signatures.

namespace vidswap {

class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  /// One box for the single face in the frame, or nullopt.
  virtual std::optional<FaceBox> detect(const torch::Tensor& frame) const = 0;
  virtual bool reentrant() const { return true; }
};

class IdentityProvider {
 public:
  virtual ~IdentityProvider() = default;
  virtual int64_t dim() const = 0;
  /// Unit-norm identity vector [dim] for a square face crop.
  virtual torch::Tensor embed(const torch::Tensor& crop) const = 0;
  virtual bool reentrant() const { return true; }
};

class TokenProvider {
 public:
  virtual ~TokenProvider() = default;
  virtual int64_t token_count() const = 0;
  virtual int64_t token_dim() const = 0;
  /// Token sequence [token_count, token_dim] for a square face crop.
  virtual torch::Tensor tokens(const torch::Tensor& crop) const = 0;
  virtual bool reentrant() const { return true; }
};

/// Face-model coefficients in the spirit of a 3DMM fit: geometry, pose,
/// expression and a texture (albedo) component.
struct FaceCoefficients {
  double cx = 0, cy = 0;
  double half_width = 1, half_height = 1;
  Pose pose;
  Expression expression;
  std::vector<double> texture;  // albedo offsets (RGB)
};

class FaceRenderer3D {
 public:
  virtual ~FaceRenderer3D() = default;
  /// Fits coefficients to the face inside `box`. Throws ProviderError.
  virtual FaceCoefficients fit(const torch::Tensor& frame, const FaceBox& box) const = 0;
  /// Renders [3, H, W] in [-1, 1], zero outside the face.
  virtual torch::Tensor render(const FaceCoefficients& coeffs, int64_t height,
                               int64_t width) const = 0;
  virtual bool reentrant() const { return true; }
};

/// Per-frame attribute vector (pose angles or expression coefficients).
class AttributeProvider {
 public:
  virtual ~AttributeProvider() = default;
  virtual std::optional<std::vector<double>> measure(const torch::Tensor& frame) const = 0;
};

struct EmbeddingProviders {
  std::shared_ptr<const IdentityProvider> identity;
  std::shared_ptr<const TokenProvider> texture;
  std::shared_ptr<const TokenProvider> attribute;
  int64_t crop_size = 32;
};

/// Square window centred on `box` (side = longer box edge, zero outside the
/// frame), resized to size x size bilinearly.
torch::Tensor crop_face(const torch::Tensor& frame, const FaceBox& box, int64_t size);

}  // namespace vidswap

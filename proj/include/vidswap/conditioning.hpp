#pragma once

#include <torch/torch.h>

#include <memory>
#include <string>
#include <vector>

#include "vidswap/geometry.hpp"
#include "vidswap/providers.hpp"
#include "vidswap/tensor_types.hpp"

namespace vidswap {

struct MaskConfig {
  int64_t margin = 4;
  int64_t smooth_window = 3;
};

/// One box per frame. Throws DetectionError naming the first failing frame.
std::vector<FaceBox> detect_boxes(const FrameSeq& frames, const FaceDetector& detector);

/// Centred moving average of box coordinates; the window is truncated at the
/// clip ends.
std::vector<BoxF> smooth_boxes(const std::vector<FaceBox>& boxes, int64_t window = 3);

/// Rounds, grows by `margin` on every side and clips to the image.
FaceBox dilate_box(const BoxF& box, int64_t margin, int64_t width, int64_t height);

struct FaceMask {
  torch::Tensor mask;             // [T, 1, H, W], values in {0, 1}
  std::vector<FaceBox> raw_boxes;
  std::vector<FaceBox> boxes;     // smoothed and dilated
};

FaceMask build_mask(const FrameSeq& frames, const FaceDetector& detector,
                    const MaskConfig& cfg = {});
FaceMask mask_from_boxes(const std::vector<FaceBox>& raw_boxes, int64_t height, int64_t width,
                         const MaskConfig& cfg = {});

/// Texture-free render per frame, aligned to the frame. The texture
/// coefficients are zeroed before rendering.
FrameSeq render_condition(const FrameSeq& frames, const std::vector<FaceBox>& boxes,
                          const FaceRenderer3D& renderer);

/// target * (1 - mask)
FrameSeq mask_frames(const FrameSeq& target, const torch::Tensor& mask);

struct MixerWeights {
  double w_id = 1.0;
  double w_tex = 0.6;
  double w_attr = 0.6;

  void validate() const;
};

/// Raw provider outputs. Identity and texture come from the identity face;
/// attribute tokens come from each frame of the attribute face.
struct FaceFeatures {
  torch::Tensor identity;     // [id_dim]
  torch::Tensor texture;      // [Lt, Dt]
  torch::Tensor attributes;   // [T, La, Da]
  std::string identity_face;  // provenance tags
  std::string attribute_face;
};

/// identity_face: the still whose identity is transferred.
/// attribute_faces: the frames whose pose and expression are kept.
FaceFeatures encode_faces(const torch::Tensor& identity_face, const FrameSeq& attribute_faces,
                          const std::vector<FaceBox>& attribute_boxes,
                          const FaceDetector& detector, const EmbeddingProviders& providers,
                          std::string identity_tag = "identity_face",
                          std::string attribute_tag = "attribute_face");

struct FaceEncoderConfig {
  int64_t id_dim = 256;
  int64_t texture_tokens = 21;
  int64_t texture_dim = 6;
  int64_t attribute_tokens = 21;
  int64_t attribute_dim = 6;
  int64_t context_dim = 64;
  int64_t id_tokens = 4;
};

struct FaceTokens {
  torch::Tensor id, tex, attr;  // [N, L*, context_dim]
};

/// Three projection nets that map provider outputs to the backbone's
/// context width.
struct FaceEncoderImpl : torch::nn::Module {
  explicit FaceEncoderImpl(FaceEncoderConfig cfg);

  /// identity [B, id_dim], texture [B, Lt, Dt], attributes [B, T, La, Da]
  /// -> per-frame tokens with N = B * T.
  FaceTokens forward(const torch::Tensor& identity, const torch::Tensor& texture,
                     const torch::Tensor& attributes);
  /// Checks provider dimensions against the projections; ConfigError if not.
  void check_providers(const EmbeddingProviders& providers) const;

  const FaceEncoderConfig& config() const { return cfg_; }

  torch::nn::Linear id_proj{nullptr}, tex_proj{nullptr}, attr_proj{nullptr};
  torch::Tensor tex_pos, attr_pos;

 private:
  FaceEncoderConfig cfg_;
};
TORCH_MODULE(FaceEncoder);

/// Weighted concatenation along the token axis: (w_id*id, w_tex*tex, w_attr*attr).
torch::Tensor mix(const torch::Tensor& id_tokens, const torch::Tensor& tex_tokens,
                  const torch::Tensor& attr_tokens, const MixerWeights& w);

struct ConditionBundle {
  FaceFeatures features;
  torch::Tensor tokens;     // [T, L, D] once a face encoder has run
  torch::Tensor face_mask;  // [T, 1, H, W]
  FrameSeq render_frames;
  FrameSeq masked_frames;
  FrameSeq motion_frames;   // [M, 3, H, W]; zeros for the first clip
  std::vector<FaceBox> boxes;

  int64_t frame_count() const { return face_mask.size(0); }
};

struct ConditionProviders {
  std::shared_ptr<const FaceDetector> detector;
  std::shared_ptr<const FaceRenderer3D> renderer;
  EmbeddingProviders embeddings;
};

/// Builds the pixel-space bundle. `attribute_frames` defaults to the target
/// itself (inference); training passes the decoupling face.
ConditionBundle build_condition(const FrameSeq& identity_image, const FrameSeq& target,
                                const FrameSeq& motion_frames, const ConditionProviders& p,
                                const MaskConfig& mask_cfg = {},
                                const FrameSeq* attribute_frames = nullptr,
                                std::string identity_tag = "identity_face",
                                std::string attribute_tag = "attribute_face");

/// Runs the face encoder and mixer, filling bundle.tokens.
void attach_tokens(ConditionBundle& bundle, FaceEncoder& encoder, const MixerWeights& w);

}  // namespace vidswap

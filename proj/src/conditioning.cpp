#include "vidswap/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "vidswap/errors.hpp"
#include "vidswap/nn_blocks.hpp"

namespace vidswap {

std::vector<FaceBox> detect_boxes(const FrameSeq& frames, const FaceDetector& detector) {
  std::vector<FaceBox> out;
  out.reserve(static_cast<size_t>(frames.frame_count()));
  for (int64_t t = 0; t < frames.frame_count(); ++t) {
    auto box = detector.detect(frames.data()[t]);
    if (!box || box->area() == 0) throw DetectionError(t);
    out.push_back(*box);
  }
  return out;
}

std::vector<BoxF> smooth_boxes(const std::vector<FaceBox>& boxes, int64_t window) {
  VF_CHECK(window >= 1 && window % 2 == 1, ConfigError, "smoothing window must be odd");
  const auto n = static_cast<int64_t>(boxes.size());
  const int64_t half = window / 2;
  std::vector<BoxF> out(boxes.size());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t lo = std::max<int64_t>(0, i - half), hi = std::min(n - 1, i + half);
    BoxF b;
    for (int64_t k = lo; k <= hi; ++k) {
      const auto& s = boxes[static_cast<size_t>(k)];
      b.x0 += s.x0;
      b.y0 += s.y0;
      b.x1 += s.x1;
      b.y1 += s.y1;
    }
    const double c = static_cast<double>(hi - lo + 1);
    out[static_cast<size_t>(i)] = {b.x0 / c, b.y0 / c, b.x1 / c, b.y1 / c};
  }
  return out;
}

FaceBox dilate_box(const BoxF& b, int64_t margin, int64_t width, int64_t height) {
  VF_CHECK(margin >= 0, ConfigError, "mask margin must be non-negative");
  FaceBox r{static_cast<int64_t>(std::llround(b.x0)) - margin,
            static_cast<int64_t>(std::llround(b.y0)) - margin,
            static_cast<int64_t>(std::llround(b.x1)) + margin,
            static_cast<int64_t>(std::llround(b.y1)) + margin};
  return r.clipped(width, height);
}

FaceMask mask_from_boxes(const std::vector<FaceBox>& raw_boxes, int64_t height, int64_t width,
                         const MaskConfig& cfg) {
  FaceMask m;
  m.raw_boxes = raw_boxes;
  const auto smoothed = smooth_boxes(raw_boxes, cfg.smooth_window);
  m.mask = torch::zeros({static_cast<int64_t>(raw_boxes.size()), 1, height, width});
  for (size_t t = 0; t < smoothed.size(); ++t) {
    const auto b = dilate_box(smoothed[t], cfg.margin, width, height);
    m.boxes.push_back(b);
    if (b.area() > 0) {
      m.mask[static_cast<int64_t>(t)]
          .slice(1, b.y0, b.y1)
          .slice(2, b.x0, b.x1)
          .fill_(1.0);
    }
  }
  return m;
}

FaceMask build_mask(const FrameSeq& frames, const FaceDetector& detector, const MaskConfig& cfg) {
  return mask_from_boxes(detect_boxes(frames, detector), frames.height(), frames.width(), cfg);
}

FrameSeq render_condition(const FrameSeq& frames, const std::vector<FaceBox>& boxes,
                          const FaceRenderer3D& renderer) {
  VF_CHECK(static_cast<int64_t>(boxes.size()) == frames.frame_count(), ContractError,
           "render_condition: one box per frame required");
  std::vector<torch::Tensor> out;
  for (int64_t t = 0; t < frames.frame_count(); ++t) {
    auto coeffs = renderer.fit(frames.data()[t], boxes[static_cast<size_t>(t)]);
    std::fill(coeffs.texture.begin(), coeffs.texture.end(), 0.0);
    out.push_back(renderer.render(coeffs, frames.height(), frames.width()));
  }
  return FrameSeq(torch::stack(out).to(frames.data().dtype()));
}

FrameSeq mask_frames(const FrameSeq& target, const torch::Tensor& mask) {
  VF_CHECK(mask.size(0) == target.frame_count() && mask.size(2) == target.height() &&
               mask.size(3) == target.width(),
           ContractError, "mask_frames: mask does not match frames");
  return FrameSeq(target.data() * (1 - mask.to(target.data().dtype())));
}

void MixerWeights::validate() const {
  for (double w : {w_id, w_tex, w_attr}) {
    VF_CHECK(w >= 0.0 && w <= 1.5, ConfigError, "mixer weights must lie in [0, 1.5]");
  }
}

FaceFeatures encode_faces(const torch::Tensor& identity_face, const FrameSeq& attribute_faces,
                          const std::vector<FaceBox>& attribute_boxes,
                          const FaceDetector& detector, const EmbeddingProviders& providers,
                          std::string identity_tag, std::string attribute_tag) {
  VF_CHECK(providers.identity && providers.texture && providers.attribute, ConfigError,
           "embedding providers incomplete");
  VF_CHECK(static_cast<int64_t>(attribute_boxes.size()) == attribute_faces.frame_count(),
           ContractError, "encode_faces: one box per attribute frame required");
  auto id_box = detector.detect(identity_face);
  if (!id_box) throw DetectionError(0);
  const auto crop = crop_face(identity_face, *id_box, providers.crop_size);
  FaceFeatures f;
  f.identity = providers.identity->embed(crop);
  VF_CHECK(f.identity.numel() == providers.identity->dim(), ConfigError,
           "identity provider returned the wrong dimension");
  f.texture = providers.texture->tokens(crop);
  std::vector<torch::Tensor> attrs;
  for (int64_t t = 0; t < attribute_faces.frame_count(); ++t) {
    attrs.push_back(providers.attribute->tokens(crop_face(
        attribute_faces.data()[t], attribute_boxes[static_cast<size_t>(t)], providers.crop_size)));
  }
  f.attributes = torch::stack(attrs);
  f.identity_face = std::move(identity_tag);
  f.attribute_face = std::move(attribute_tag);
  return f;
}

FaceEncoderImpl::FaceEncoderImpl(FaceEncoderConfig cfg) : cfg_(cfg) {
  VF_CHECK(cfg_.id_dim > 0 && cfg_.context_dim > 0 && cfg_.id_tokens > 0, ConfigError,
           "face encoder dimensions must be positive");
  id_proj = register_module("id_proj", torch::nn::Linear(cfg_.id_dim, cfg_.id_tokens * cfg_.context_dim));
  tex_proj = register_module("tex_proj", torch::nn::Linear(cfg_.texture_dim, cfg_.context_dim));
  attr_proj = register_module("attr_proj", torch::nn::Linear(cfg_.attribute_dim, cfg_.context_dim));
  // Token position codes: the pyramid tokens are otherwise indistinguishable.
  tex_pos = register_parameter("tex_pos", 0.02 * torch::randn({cfg_.texture_tokens, cfg_.context_dim}));
  attr_pos = register_parameter("attr_pos", 0.02 * torch::randn({cfg_.attribute_tokens, cfg_.context_dim}));
}

void FaceEncoderImpl::check_providers(const EmbeddingProviders& p) const {
  VF_CHECK(p.identity && p.identity->dim() == cfg_.id_dim, ConfigError,
           "identity provider dimension does not match the face encoder");
  VF_CHECK(p.texture && p.texture->token_dim() == cfg_.texture_dim &&
               p.texture->token_count() == cfg_.texture_tokens,
           ConfigError, "texture provider shape does not match the face encoder");
  VF_CHECK(p.attribute && p.attribute->token_dim() == cfg_.attribute_dim &&
               p.attribute->token_count() == cfg_.attribute_tokens,
           ConfigError, "attribute provider shape does not match the face encoder");
}

FaceTokens FaceEncoderImpl::forward(const torch::Tensor& identity, const torch::Tensor& texture,
                                    const torch::Tensor& attributes) {
  VF_CHECK(identity.dim() == 2 && identity.size(1) == cfg_.id_dim, ConfigError,
           "identity features have the wrong width: " + shape_string(identity));
  VF_CHECK(texture.dim() == 3 && texture.size(2) == cfg_.texture_dim, ConfigError,
           "texture tokens have the wrong width: " + shape_string(texture));
  VF_CHECK(attributes.dim() == 4 && attributes.size(3) == cfg_.attribute_dim, ConfigError,
           "attribute tokens have the wrong width: " + shape_string(attributes));
  const auto B = identity.size(0), T = attributes.size(1);
  VF_CHECK(texture.size(0) == B && attributes.size(0) == B, ContractError,
           "face feature batch sizes differ");
  const auto D = cfg_.context_dim;
  auto id = id_proj(identity).view({B, cfg_.id_tokens, D});
  VF_CHECK(texture.size(1) == cfg_.texture_tokens && attributes.size(2) == cfg_.attribute_tokens,
           ConfigError, "face feature token counts do not match the face encoder");
  auto tex = tex_proj(texture) + tex_pos;
  auto attr = attr_proj(attributes) + attr_pos;
  FaceTokens out;
  out.id = id.unsqueeze(1).expand({B, T, cfg_.id_tokens, D}).reshape({B * T, cfg_.id_tokens, D});
  out.tex = tex.unsqueeze(1).expand({B, T, tex.size(1), D}).reshape({B * T, tex.size(1), D});
  out.attr = attr.reshape({B * T, attr.size(2), D});
  return out;
}

torch::Tensor mix(const torch::Tensor& id_tokens, const torch::Tensor& tex_tokens,
                  const torch::Tensor& attr_tokens, const MixerWeights& w) {
  w.validate();
  const auto D = id_tokens.size(-1);
  VF_CHECK(tex_tokens.size(-1) == D && attr_tokens.size(-1) == D, ContractError,
           "mix: token widths differ");
  VF_CHECK(id_tokens.dim() == tex_tokens.dim() && id_tokens.dim() == attr_tokens.dim(),
           ContractError, "mix: token ranks differ");
  return torch::cat({id_tokens * w.w_id, tex_tokens * w.w_tex, attr_tokens * w.w_attr}, -2);
}

ConditionBundle build_condition(const FrameSeq& identity_image, const FrameSeq& target,
                                const FrameSeq& motion_frames, const ConditionProviders& p,
                                const MaskConfig& mask_cfg, const FrameSeq* attribute_frames,
                                std::string identity_tag, std::string attribute_tag) {
  VF_CHECK(p.detector && p.renderer, ConfigError, "condition providers incomplete");
  VF_CHECK(identity_image.frame_count() == 1, ContractError, "identity image must be one frame");
  ConditionBundle b;
  auto fm = build_mask(target, *p.detector, mask_cfg);
  b.face_mask = fm.mask;
  b.boxes = fm.boxes;
  b.render_frames = render_condition(target, fm.raw_boxes, *p.renderer);
  b.masked_frames = mask_frames(target, fm.mask);
  b.motion_frames = motion_frames;
  const FrameSeq& attr = attribute_frames ? *attribute_frames : target;
  VF_CHECK(attr.frame_count() == target.frame_count(), ContractError,
           "attribute frames must match the target length");
  const auto attr_boxes = attribute_frames ? detect_boxes(attr, *p.detector) : fm.raw_boxes;
  b.features = encode_faces(identity_image.data()[0], attr, attr_boxes, *p.detector,
                            p.embeddings, std::move(identity_tag), std::move(attribute_tag));
  return b;
}

void attach_tokens(ConditionBundle& bundle, FaceEncoder& encoder, const MixerWeights& w) {
  auto toks = encoder->forward(bundle.features.identity.unsqueeze(0),
                               bundle.features.texture.unsqueeze(0),
                               bundle.features.attributes.unsqueeze(0));
  bundle.tokens = mix(toks.id, toks.tex, toks.attr, w);
}

}  // namespace vidswap

#include "vidswap/desk_providers.hpp"

#include <algorithm>
#include <cmath>

#include "vidswap/errors.hpp"
#include "vidswap/synthetic_face.hpp"

namespace F = torch::nn::functional;

namespace vidswap {

namespace {

constexpr double kDeg = M_PI / 180.0;

torch::Tensor to_unit(const torch::Tensor& frame) {
  return ((frame.to(torch::kFloat64) + 1.0) * 0.5).clamp(0.0, 1.0);
}

torch::Tensor luminance(const torch::Tensor& unit) {
  return 0.299 * unit[0] + 0.587 * unit[1] + 0.114 * unit[2];
}

double bilinear(const torch::TensorAccessor<double, 2>& img, int64_t h, int64_t w, double x,
                double y) {
  x = std::clamp(x - 0.5, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y - 0.5, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<int64_t>(std::floor(x)), y0 = static_cast<int64_t>(std::floor(y));
  const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img[y0][x0] + fx * img[y0][x1]) +
         fy * ((1 - fx) * img[y1][x0] + fx * img[y1][x1]);
}

}  // namespace

torch::Tensor crop_face(const torch::Tensor& frame, const FaceBox& box, int64_t size) {
  VF_CHECK(frame.dim() == 3 && frame.size(0) == 3, ContractError, "crop_face expects [3, H, W]");
  const auto b = box.clipped(frame.size(2), frame.size(1));
  VF_CHECK(b.area() > 0, ContractError, "crop_face: empty box");
  // Square window around the box centre; area outside the frame is zero.
  const int64_t side = std::max(b.width(), b.height());
  const int64_t x0 = b.x0 - (side - b.width()) / 2, y0 = b.y0 - (side - b.height()) / 2;
  auto padded = F::pad(frame.unsqueeze(0), F::PadFuncOptions({side, side, side, side}));
  auto patch = padded.slice(2, y0 + side, y0 + 2 * side).slice(3, x0 + side, x0 + 2 * side);
  return F::interpolate(patch, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{size, size})
                                   .mode(torch::kBilinear)
                                   .align_corners(false))
      .squeeze(0);
}

std::optional<FaceBox> ChromaFaceDetector::detect(const torch::Tensor& frame) const {
  VF_CHECK(frame.dim() == 3 && frame.size(0) == 3, ContractError, "detector expects [3, H, W]");
  auto unit = to_unit(frame);
  auto face = (unit[0] - unit[2]) > threshold_;
  if (face.sum().item<int64_t>() < min_pixels_) return std::nullopt;
  // Rows/columns need two face pixels, which drops isolated speckle.
  auto rows = torch::nonzero(face.sum(1) >= 2).flatten();
  auto cols = torch::nonzero(face.sum(0) >= 2).flatten();
  if (rows.numel() == 0 || cols.numel() == 0) return std::nullopt;
  return FaceBox{cols.min().item<int64_t>(), rows.min().item<int64_t>(),
                 cols.max().item<int64_t>() + 1, rows.max().item<int64_t>() + 1};
}

torch::Tensor TextureIdentityProvider::embed(const torch::Tensor& crop) const {
  VF_CHECK(crop.dim() == 3 && crop.size(0) == 3, ContractError, "identity expects [3, S, S]");
  auto unit = to_unit(crop).contiguous();
  const auto h = unit.size(1), w = unit.size(2);
  auto lum_t = luminance(unit).contiguous();
  auto lum = lum_t.accessor<double, 2>();
  auto px = unit.accessor<double, 3>();

  // Face pixels give the ellipse: for a filled disc under a linear map M the
  // second moment is M M^T / 4.
  double n = 0, mx = 0, my = 0, sxx = 0, sxy = 0, syy = 0;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      if (px[0][i][j] - px[2][i][j] <= 0.15) continue;
      const double x = 2.0 * (j + 0.5) / w - 1.0, y = 2.0 * (i + 0.5) / h - 1.0;
      n += 1;
      mx += x;
      my += y;
      sxx += x * x;
      sxy += x * y;
      syy += y * y;
    }
  }
  // Major axis of the skin ellipse is the face's vertical axis.
  double ea = 1, eb = 1, ct = 1, st = 0;
  if (n >= 16) {
    mx /= n;
    my /= n;
    const double cxx = sxx / n - mx * mx, cxy = sxy / n - mx * my, cyy = syy / n - my * my;
    const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
    const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
    const double l_major = 0.5 * tr + disc, l_minor = std::max(0.5 * tr - disc, 1e-9);
    // Eigenvector of the major eigenvalue, oriented downward.
    double vx = cxy, vy = l_major - cxx;
    if (std::abs(vx) + std::abs(vy) < 1e-12) vx = 0, vy = 1;
    const double vn = std::hypot(vx, vy);
    vx /= vn;
    vy /= vn;
    if (vy < 0) vx = -vx, vy = -vy;
    ea = 2 * std::sqrt(l_minor);
    eb = 2 * std::sqrt(l_major);
    // Face frame: u along (vy, -vx), v along (vx, vy).
    ct = vy;
    st = -vx;
  } else {
    mx = my = 0;
  }

  // Dark features (eyes, mouth) and their surroundings are excluded.
  auto dark = (lum_t < 0.3).to(torch::kFloat64).unsqueeze(0).unsqueeze(0);
  dark = F::max_pool2d(dark, F::MaxPool2dFuncOptions(3).stride(1).padding(1)).squeeze();
  auto dark_acc = dark.accessor<double, 2>();

  const int64_t g = grid_;
  std::vector<double> vals, basis;
  std::vector<bool> valid;
  constexpr int kBasis = 7;
  for (int64_t i = 0; i < g; ++i) {
    for (int64_t j = 0; j < g; ++j) {
      const double u = -0.8 + 1.6 * (j + 0.5) / g, v = -0.8 + 1.6 * (i + 0.5) / g;
      const double r2 = u * u + v * v;
      bool ok = r2 <= 0.64;
      const double x = mx + ea * u * ct - eb * v * st, y = my + ea * u * st + eb * v * ct;
      const double sx = (x + 1) * 0.5 * w, sy = (y + 1) * 0.5 * h;
      double val = 0;
      if (ok) {
        const auto xi = std::clamp<int64_t>(static_cast<int64_t>(sx), 0, w - 1);
        const auto yi = std::clamp<int64_t>(static_cast<int64_t>(sy), 0, h - 1);
        ok = dark_acc[yi][xi] < 0.5;
        val = bilinear(lum, h, w, sx, sy);
      }
      vals.push_back(val);
      valid.push_back(ok);
      const double wz = std::sqrt(std::max(0.0, 1.0 - r2));
      for (double b : {1.0, u, v, u * u, u * v, v * v, wz}) basis.push_back(b);
    }
  }
  // Remove smooth shading by least squares over the valid samples.
  const auto count = static_cast<int64_t>(vals.size());
  auto A = torch::tensor(basis, torch::kFloat64).view({count, kBasis});
  auto y = torch::tensor(vals, torch::kFloat64);
  std::vector<double> mask_v(valid.begin(), valid.end());
  auto m = torch::tensor(mask_v, torch::kFloat64);
  torch::Tensor out;
  if (m.sum().item<double>() > 2 * kBasis) {
    auto Am = A * m.unsqueeze(1);
    auto coef = torch::linalg_solve(Am.t().mm(A) + 1e-9 * torch::eye(kBasis, torch::kFloat64),
                                    Am.t().mv(y));
    out = (y - A.mv(coef)) * m;
  } else {
    out = torch::zeros_like(y);
  }
  const double norm = out.norm().item<double>();
  if (norm < 1e-12) {
    out = torch::zeros_like(out);
    out[0] = 1.0;
    return out.to(torch::kFloat32);
  }
  return (out / norm).to(torch::kFloat32);
}

torch::Tensor PatchTokenProvider::tokens(const torch::Tensor& crop) const {
  VF_CHECK(crop.dim() == 3 && crop.size(0) == 3, ContractError, "tokens expect [3, S, S]");
  auto unit = to_unit(crop).unsqueeze(0);
  torch::Tensor feats;
  if (kind_ == Kind::colour) {
    feats = unit;
  } else {
    auto lum = luminance(unit[0]).unsqueeze(0).unsqueeze(0);
    auto padded = F::pad(lum, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto gx = (padded.slice(3, 2, lum.size(3) + 2).slice(2, 1, lum.size(2) + 1) -
               padded.slice(3, 0, lum.size(3)).slice(2, 1, lum.size(2) + 1)) * 0.5;
    auto gy = (padded.slice(2, 2, lum.size(2) + 2).slice(3, 1, lum.size(3) + 1) -
               padded.slice(2, 0, lum.size(2)).slice(3, 1, lum.size(3) + 1)) * 0.5;
    auto darkness = (lum < 0.22).to(torch::kFloat64);
    feats = torch::cat({darkness, gx, gy, gx.abs(), gy.abs(), lum}, 1);
  }
  std::vector<torch::Tensor> toks;
  for (int64_t cells : {1, 2, 4}) {
    auto pooled = F::adaptive_avg_pool2d(feats, F::AdaptiveAvgPool2dFuncOptions({cells, cells}));
    torch::Tensor tok;
    if (kind_ == Kind::colour) {
      auto sq = F::adaptive_avg_pool2d(feats.pow(2), F::AdaptiveAvgPool2dFuncOptions({cells, cells}));
      auto sd = (sq - pooled.pow(2)).clamp_min(0.0).sqrt();
      tok = torch::cat({pooled, sd}, 1);
    } else {
      tok = pooled;
    }
    toks.push_back(tok.flatten(2).squeeze(0).transpose(0, 1));
  }
  return torch::cat(toks, 0).to(torch::kFloat32);
}

EmbeddingProviders make_desk_providers(int64_t crop_size) {
  EmbeddingProviders p;
  p.identity = std::make_shared<TextureIdentityProvider>();
  p.texture = std::make_shared<PatchTokenProvider>(PatchTokenProvider::Kind::colour);
  p.attribute = std::make_shared<PatchTokenProvider>(PatchTokenProvider::Kind::structure);
  p.crop_size = crop_size;
  return p;
}

namespace {

struct Blob {
  std::vector<Point2> pts;
  Point2 centroid() const {
    Point2 c;
    for (const auto& p : pts) {
      c.x += p.x;
      c.y += p.y;
    }
    c.x /= pts.size();
    c.y /= pts.size();
    return c;
  }
};

}  // namespace

std::optional<FaceGeometry> LandmarkGeometryEstimator::estimate(const torch::Tensor& frame,
                                                                const FaceBox& box_in) const {
  const auto h = frame.size(1), w = frame.size(2);
  const auto box = box_in.clipped(w, h);
  if (box.width() < 6 || box.height() < 6) return std::nullopt;
  auto unit = to_unit(frame).contiguous();
  auto acc = unit.accessor<double, 3>();
  const Point2 c = box.center();
  const double ex = 0.5 * box.width(), ey = 0.5 * box.height();

  Blob eyes, mouth;
  for (int64_t i = box.y0; i < box.y1; ++i) {
    for (int64_t j = box.x0; j < box.x1; ++j) {
      const double px = j + 0.5, py = i + 0.5;
      const double u = (px - c.x) / ex, v = (py - c.y) / ey;
      if (u * u + v * v > 0.92) continue;
      const double r = acc[0][i][j], g = acc[1][i][j], b = acc[2][i][j];
      const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
      if (lum >= 0.2) continue;
      if (r - g > 0.15) {
        mouth.pts.push_back({px, py});
      } else if (py < c.y) {
        eyes.pts.push_back({px, py});
      }
    }
  }
  if (eyes.pts.size() < 2 || mouth.pts.size() < 2) return std::nullopt;

  // Two-means on x splits the eye pixels into left and right.
  double lx = 1e9, rx = -1e9;
  for (const auto& p : eyes.pts) {
    lx = std::min(lx, p.x);
    rx = std::max(rx, p.x);
  }
  Blob left, right;
  for (int iter = 0; iter < 10; ++iter) {
    left.pts.clear();
    right.pts.clear();
    for (const auto& p : eyes.pts) (std::abs(p.x - lx) <= std::abs(p.x - rx) ? left : right).pts.push_back(p);
    if (left.pts.empty() || right.pts.empty()) return std::nullopt;
    lx = left.centroid().x;
    rx = right.centroid().x;
  }
  const Point2 le = left.centroid(), re = right.centroid();

  FaceGeometry geo;
  geo.box = box;
  geo.cx = c.x;
  geo.cy = c.y;
  const double roll = std::atan2(re.y - le.y, re.x - le.x);
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cos2 = cr * cr - sr * sr;
  double a2 = ex * ex, b2 = ey * ey;
  if (std::abs(cos2) > 0.2) {
    const double na = (ex * ex * cr * cr - ey * ey * sr * sr) / cos2;
    const double nb = (ey * ey * cr * cr - ex * ex * sr * sr) / cos2;
    if (na > 0 && nb > 0) {
      a2 = na;
      b2 = nb;
    }
  }
  const double a = std::sqrt(a2), b = std::sqrt(b2);
  geo.half_width = a;
  geo.half_height = b;

  auto unroll = [&](const Point2& p) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    return Point2{(dx * cr + dy * sr) / a, (-dx * sr + dy * cr) / b};
  };
  const Point2 mid = unroll({0.5 * (le.x + re.x), 0.5 * (le.y + re.y)});
  const double yaw = std::asin(std::clamp(mid.x / 0.89, -0.99, 0.99));
  // Solve  -0.26 cos(p) - 0.89 cos(yaw) sin(p) = mid.y  for the pitch.
  const double z1 = 0.89 * std::cos(yaw);
  double lo = -60 * kDeg, hi = 60 * kDeg;
  for (int it = 0; it < 60; ++it) {
    const double m = 0.5 * (lo + hi);
    const double f = -0.26 * std::cos(m) - z1 * std::sin(m) - mid.y;
    (f > 0 ? lo : hi) = m;
  }
  const double pitch = 0.5 * (lo + hi);
  geo.pose = {yaw / kDeg, pitch / kDeg, roll / kDeg};

  double umin = 1e9, umax = -1e9, vmin = 1e9, vmax = -1e9;
  Point2 mc{0, 0};
  for (const auto& p : mouth.pts) {
    mc.x += p.x;
    mc.y += p.y;
    const double dx = p.x, dy = p.y;
    const double mu = dx * cr + dy * sr, mv = -dx * sr + dy * cr;
    umin = std::min(umin, mu);
    umax = std::max(umax, mu);
    vmin = std::min(vmin, mv);
    vmax = std::max(vmax, mv);
  }
  mc.x /= mouth.pts.size();
  mc.y /= mouth.pts.size();
  const double mw = 0.5 * (umax - umin + 1.0), mh = 0.5 * (vmax - vmin + 1.0);
  geo.expression.mouth_open = std::clamp((mh / b - 0.035) / 0.11, 0.0, 1.0);
  geo.expression.smile =
      std::clamp((mw / (0.28 * a * std::max(std::cos(yaw), 0.2)) - 1.0) / 0.3, -1.0, 1.0);

  const auto anchors = synth::landmark_anchors(geo.expression);
  geo.landmarks[0] = le;
  geo.landmarks[1] = re;
  geo.landmarks[2] =
      synth::project_anchor(anchors[2][0], anchors[2][1], anchors[2][2], geo.pose, c.x, c.y, a, b).p;
  geo.landmarks[3] = {mc.x - mw * cr, mc.y - mw * sr};
  geo.landmarks[4] = {mc.x + mw * cr, mc.y + mw * sr};
  return geo;
}

FaceCoefficients EllipsoidRenderer::fit(const torch::Tensor& frame, const FaceBox& box) const {
  auto geo = estimator_.estimate(frame, box);
  if (!geo) throw ProviderError("3D fit failed: facial features not found");
  FaceCoefficients c;
  c.cx = geo->cx;
  c.cy = geo->cy;
  c.half_width = geo->half_width;
  c.half_height = geo->half_height;
  c.pose = geo->pose;
  c.expression = geo->expression;
  const auto b = box.clipped(frame.size(2), frame.size(1));
  auto patch = to_unit(frame).slice(1, b.y0, b.y1).slice(2, b.x0, b.x1);
  auto mean = patch.mean({1, 2});
  c.texture = {mean[0].item<double>() - 0.5, mean[1].item<double>() - 0.5,
               mean[2].item<double>() - 0.5};
  return c;
}

torch::Tensor EllipsoidRenderer::render(const FaceCoefficients& k, int64_t height,
                                        int64_t width) const {
  const double a = k.half_width, b = k.half_height;
  const double roll = k.pose.roll * kDeg;
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double yaw = k.pose.yaw * kDeg, pitch = k.pose.pitch * kDeg;
  const double fx = std::sin(yaw), fy = -std::cos(yaw) * std::sin(pitch),
               fz = std::cos(yaw) * std::cos(pitch);
  std::array<double, 3> albedo{1.0, 1.0, 1.0};
  for (size_t i = 0; i < 3 && i < k.texture.size(); ++i) albedo[i] = 1.0 + 2.0 * k.texture[i];

  const auto anchors = synth::landmark_anchors(k.expression);
  std::array<synth::ProjectedPoint, 5> lm;
  for (size_t i = 0; i < 5; ++i) {
    lm[i] = synth::project_anchor(anchors[i][0], anchors[i][1], anchors[i][2], k.pose, k.cx, k.cy, a, b);
  }
  const double eye_r = 0.09 * a;
  const Point2 mc{0.5 * (lm[3].p.x + lm[4].p.x), 0.5 * (lm[3].p.y + lm[4].p.y)};
  const double mw = std::max(0.5 * distance(lm[3].p, lm[4].p), 0.5);
  const double mh = (0.035 + 0.11 * k.expression.mouth_open) * b;
  const double mang = std::atan2(lm[4].p.y - lm[3].p.y, lm[4].p.x - lm[3].p.x);
  const double mca = std::cos(mang), msa = std::sin(mang);

  auto out = torch::zeros({3, height, width}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int64_t i = 0; i < height; ++i) {
    for (int64_t j = 0; j < width; ++j) {
      const double px = j + 0.5, py = i + 0.5;
      const double dx = px - k.cx, dy = py - k.cy;
      const double u = (dx * cr + dy * sr) / a, v = (-dx * sr + dy * cr) / b;
      const double r2 = u * u + v * v;
      if (r2 > 1.0) continue;
      const double w = std::sqrt(1.0 - r2);
      // Normal in the unrolled frame; the forward vector is unrolled too.
      double intensity = 0.25 + 0.75 * std::max(0.0, u * fx + v * fy + w * fz);
      for (int e = 0; e < 2; ++e) {
        if (lm[e].depth > 0.15 && distance({px, py}, lm[e].p) <= eye_r) intensity *= 0.3;
      }
      const double mdx = px - mc.x, mdy = py - mc.y;
      const double mu = (mdx * mca + mdy * msa) / mw, mv = (-mdx * msa + mdy * mca) / mh;
      if (mu * mu + mv * mv <= 1.0) intensity *= 0.2;
      for (int ch = 0; ch < 3; ++ch) {
        acc[ch][i][j] = static_cast<float>(2.0 * std::clamp(intensity * albedo[ch], 0.0, 1.0) - 1.0);
      }
    }
  }
  return out;
}

std::optional<std::vector<double>> EstimatedAttributeProvider::measure(
    const torch::Tensor& frame) const {
  auto box = detector_->detect(frame);
  if (!box) return std::nullopt;
  auto geo = estimator_.estimate(frame, *box);
  if (!geo) return std::nullopt;
  return kind_ == Kind::pose ? geo->pose.as_vector() : geo->expression.as_vector();
}

}  // namespace vidswap

#include <algorithm>
#include <cmath>

#include "vidswap/aidt.hpp"
#include "vidswap/log.hpp"

namespace vidswap {

OccluderShape occluder_shape_from_string(const std::string& s) {
  if (s == "rectangle") return OccluderShape::rectangle;
  if (s == "ellipse") return OccluderShape::ellipse;
  if (s == "polygon") return OccluderShape::polygon;
  if (s == "texture-patch" || s == "texture_patch") return OccluderShape::texture_patch;
  throw ConfigError("unknown occluder shape '" + s + "'");
}

void OccluderSpec::validate() const {
  VF_CHECK(coverage == 0.0 || (coverage >= 0.05 && coverage <= 0.40), ConfigError,
           "occluder coverage must be 0 or in [0.05, 0.40]");
  VF_CHECK(max_step > 0, ConfigError, "occluder max_step must be positive");
  VF_CHECK(jitter >= 0 && jitter < max_step, ConfigError, "occluder jitter must be in [0, max_step)");
}

namespace {

struct Shape {
  OccluderShape kind;
  double rx = 1, ry = 1, ca = 1, sa = 0;
  std::vector<double> radii;  // polygon vertex radii at equal angles
  std::array<double, 3> colour{};
  double stripe = 3;

  // Unit-frame coordinates of a pixel offset at scale s.
  std::pair<double, double> local(double dx, double dy, double s) const {
    return {(dx * ca + dy * sa) / (s * rx), (-dx * sa + dy * ca) / (s * ry)};
  }

  bool contains(double lx, double ly) const {
    switch (kind) {
      case OccluderShape::rectangle:
      case OccluderShape::texture_patch:
        return std::abs(lx) <= 1 && std::abs(ly) <= 1;
      case OccluderShape::ellipse:
        return lx * lx + ly * ly <= 1;
      case OccluderShape::polygon: {
        const size_t n = radii.size();
        bool in = false;
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
          const double ai = 2 * M_PI * static_cast<double>(i) / static_cast<double>(n);
          const double aj = 2 * M_PI * static_cast<double>(j) / static_cast<double>(n);
          const double xi = radii[i] * std::cos(ai), yi = radii[i] * std::sin(ai);
          const double xj = radii[j] * std::cos(aj), yj = radii[j] * std::sin(aj);
          if ((yi > ly) != (yj > ly) && lx < (xj - xi) * (ly - yi) / (yj - yi) + xi) in = !in;
        }
        return in;
      }
    }
    return false;
  }

  std::array<double, 3> shade(double lx, double ly) const {
    if (kind != OccluderShape::texture_patch) return colour;
    const double m = 0.7 + 0.3 * std::sin(2 * M_PI * stripe * (lx + 0.5 * ly));
    return {colour[0] * m, colour[1] * m, colour[2] * m};
  }
};

Shape make_shape(OccluderShape kind, Rng& r) {
  Shape s;
  s.kind = kind;
  const double aspect = r.uniform(0.6, 1.6);
  s.rx = std::sqrt(aspect);
  s.ry = 1.0 / s.rx;
  const double ang = r.uniform(0, M_PI);
  s.ca = std::cos(ang);
  s.sa = std::sin(ang);
  const int64_t n = 5 + r.index(4);
  for (int64_t i = 0; i < n; ++i) s.radii.push_back(r.uniform(0.6, 1.0));
  // Blue at least red, so the occluder never reads as skin.
  const double red = r.uniform(0.05, 0.45);
  s.colour = {red, r.uniform(0.05, 0.9), r.uniform(std::max(red, 0.3), 0.95)};
  s.stripe = r.uniform(2, 4);
  return s;
}

int64_t covered(const Shape& sh, const Point2& c, double s, const FaceBox& b) {
  int64_t n = 0;
  for (int64_t i = b.y0; i < b.y1; ++i) {
    for (int64_t j = b.x0; j < b.x1; ++j) {
      const auto [lx, ly] = sh.local(j + 0.5 - c.x, i + 0.5 - c.y, s);
      n += sh.contains(lx, ly);
    }
  }
  return n;
}

}  // namespace

OcclusionResult apply_occlusion(const FrameSeq& frames, const std::vector<FaceBox>& boxes,
                                const OccluderSpec& spec, uint64_t seed) {
  spec.validate();
  const int64_t T = frames.frame_count(), H = frames.height(), W = frames.width();
  VF_CHECK(static_cast<int64_t>(boxes.size()) == T, ContractError, "one box per frame required");
  OcclusionResult res;
  res.mask = torch::zeros({T, 1, H, W}, torch::kFloat32);
  res.coverage.assign(static_cast<size_t>(T), 0.0);
  std::vector<FaceBox> clipped;
  for (const auto& b : boxes) {
    clipped.push_back(b.clipped(W, H));
    VF_CHECK(clipped.back().area() > 0, ContractError, "occlusion needs non-empty face boxes");
  }
  if (spec.coverage == 0.0) {
    res.frames = FrameSeq(frames.data().clone());
    for (const auto& b : clipped) res.trajectory.push_back(b.center());
    return res;
  }

  Rng r(derive_seed(seed, 0x0C));
  const Shape shape = make_shape(spec.shape, r);

  // Trajectory: linear drift plus bounded jitter, reflected to stay inside
  // the inner part of the current box, each step capped at max_step.
  auto inner = [](const FaceBox& b) {
    const double mx = 0.2 * b.width(), my = 0.2 * b.height();
    return std::array<double, 4>{b.x0 + mx, b.y0 + my, b.x1 - mx, b.y1 - my};
  };
  const auto& b0 = clipped.front();
  Point2 pos{b0.center().x + r.uniform(-0.2, 0.2) * b0.width(),
             b0.center().y + r.uniform(-0.2, 0.2) * b0.height()};
  const double heading = r.uniform(0, 2 * M_PI);
  const double speed = r.uniform(0.2, 0.5) * (spec.max_step - spec.jitter);
  Point2 vel{speed * std::cos(heading), speed * std::sin(heading)};
  for (int64_t t = 0; t < T; ++t) {
    if (t > 0) {
      const auto in = inner(clipped[static_cast<size_t>(t)]);
      Point2 prop{pos.x + vel.x + spec.jitter * r.uniform(-1, 1) / std::sqrt(2.0),
                  pos.y + vel.y + spec.jitter * r.uniform(-1, 1) / std::sqrt(2.0)};
      if (prop.x < in[0] || prop.x > in[2]) vel.x = -vel.x;
      if (prop.y < in[1] || prop.y > in[3]) vel.y = -vel.y;
      if (prop.x < in[0]) prop.x = 2 * in[0] - prop.x;
      if (prop.x > in[2]) prop.x = 2 * in[2] - prop.x;
      if (prop.y < in[1]) prop.y = 2 * in[1] - prop.y;
      if (prop.y > in[3]) prop.y = 2 * in[3] - prop.y;
      prop.x = std::clamp(prop.x, std::min(in[0], in[2]), std::max(in[0], in[2]));
      prop.y = std::clamp(prop.y, std::min(in[1], in[3]), std::max(in[1], in[3]));
      double dx = prop.x - pos.x, dy = prop.y - pos.y;
      const double d = std::hypot(dx, dy);
      if (d > spec.max_step) {
        dx *= spec.max_step / d;
        dy *= spec.max_step / d;
      }
      pos = {pos.x + dx, pos.y + dy};
    }
    res.trajectory.push_back(pos);
  }

  auto out = frames.data().clone();
  auto acc = out.accessor<float, 4>();
  auto macc = res.mask.accessor<float, 4>();
  VF_CHECK(out.scalar_type() == torch::kFloat32, ContractError, "occlusion expects float32 frames");
  for (int64_t t = 0; t < T; ++t) {
    const auto& b = clipped[static_cast<size_t>(t)];
    const auto c = res.trajectory[static_cast<size_t>(t)];
    const double area = static_cast<double>(b.area());
    const double want = spec.coverage * area;
    // Coverage grows with scale; bisect for the closest pixel count.
    double lo = 0, hi = 2.0 * std::hypot(static_cast<double>(W), static_cast<double>(H));
    double best_s = hi;
    int64_t best_n = covered(shape, c, hi, b);
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      const int64_t n = covered(shape, c, mid, b);
      if (std::abs(static_cast<double>(n) - want) < std::abs(static_cast<double>(best_n) - want)) {
        best_n = n;
        best_s = mid;
      }
      if (static_cast<double>(n) < want) lo = mid; else hi = mid;
    }
    const double cov = static_cast<double>(best_n) / area;
    if (cov < 0.5 * spec.coverage || cov > 1.5 * spec.coverage) {
      res.clamped = true;
      log_warn("occlusion.coverage_clamped",
               {{"frame", t}, {"target", spec.coverage}, {"achieved", cov}, {"box_area", b.area()}});
    }
    res.coverage[static_cast<size_t>(t)] = cov;
    for (int64_t i = 0; i < H; ++i) {
      for (int64_t j = 0; j < W; ++j) {
        const auto [lx, ly] = shape.local(j + 0.5 - c.x, i + 0.5 - c.y, best_s);
        if (!shape.contains(lx, ly)) continue;
        macc[t][0][i][j] = 1.0f;
        const auto col = shape.shade(lx, ly);
        for (int k = 0; k < 3; ++k) {
          acc[t][k][i][j] = static_cast<float>(2.0 * std::clamp(col[static_cast<size_t>(k)], 0.0, 1.0) - 1.0);
        }
      }
    }
  }
  res.frames = FrameSeq(out);
  return res;
}

}  // namespace vidswap

#include "vidswap/synthetic_face.hpp"

#include <algorithm>
#include <cmath>

namespace vidswap::synth {

namespace {

constexpr double kDeg = M_PI / 180.0;
constexpr std::array<double, 3> kEyeColor{0.08, 0.04, 0.03};
constexpr std::array<double, 3> kMouthColor{0.28, 0.04, 0.04};

struct Background {
  double kx, ky, p1, p2, base, tilt;

  explicit Background(uint64_t seed) {
    Rng r(derive_seed(seed, 0xB6));
    kx = r.uniform(0.5, 1.5);
    ky = r.uniform(0.5, 1.5);
    p1 = r.uniform(0, 2 * M_PI);
    p2 = r.uniform(0, 2 * M_PI);
    base = r.uniform(0.35, 0.65);
    tilt = r.uniform(-0.15, 0.15);
  }

  double at(double x, double y, int64_t w, int64_t h) const {
    return std::clamp(base + 0.15 * std::sin(2 * M_PI * kx * x / w + p1) *
                                 std::cos(2 * M_PI * ky * y / h + p2) +
                          tilt * (x / w - 0.5),
                      0.0, 1.0);
  }
};

}  // namespace

IdentityCode make_identity(uint64_t id, std::optional<int> gender) {
  Rng r(derive_seed(id, 0x1D));
  IdentityCode c;
  c.id = id;
  const int g = static_cast<int>(r.index(2));
  c.gender = gender.value_or(g);
  c.skin = {r.uniform(0.72, 0.88), r.uniform(0.48, 0.58), r.uniform(0.30, 0.38)};
  for (auto& gr : c.gratings) {
    const double f = r.uniform(1.0, 2.6), ang = r.uniform(0, M_PI);
    gr.fx = f * std::cos(ang);
    gr.fy = f * std::sin(ang);
    gr.phase = r.uniform(0, 2 * M_PI);
    gr.amplitude = r.uniform(0.03, 0.045);
  }
  return c;
}

ProjectedPoint project_anchor(double x, double y, double z, const Pose& pose, double cx,
                              double cy, double half_width, double half_height) {
  const double yaw = pose.yaw * kDeg, pitch = pose.pitch * kDeg, roll = pose.roll * kDeg;
  const double x1 = x * std::cos(yaw) + z * std::sin(yaw);
  const double z1 = -x * std::sin(yaw) + z * std::cos(yaw);
  const double y2 = y * std::cos(pitch) - z1 * std::sin(pitch);
  const double z2 = y * std::sin(pitch) + z1 * std::cos(pitch);
  const double lx = half_width * x1, ly = half_height * y2;
  return {{cx + lx * std::cos(roll) - ly * std::sin(roll),
           cy + lx * std::sin(roll) + ly * std::cos(roll)},
          z2};
}

std::array<std::array<double, 3>, 5> landmark_anchors(const Expression& e) {
  const double mx = 0.28 * (1.0 + 0.3 * e.smile);
  const double my = 0.46 - 0.04 * e.smile;
  return {{{-0.36, -0.26, 0.89}, {0.36, -0.26, 0.89}, {0.0, 0.08, 1.0}, {-mx, my, 0.84}, {mx, my, 0.84}}};
}

Landmarks face_landmarks(const FaceParams& p) {
  Landmarks out;
  const auto anchors = landmark_anchors(p.expression);
  for (size_t i = 0; i < anchors.size(); ++i) {
    out[i] = project_anchor(anchors[i][0], anchors[i][1], anchors[i][2], p.pose, p.cx, p.cy,
                            p.half_width, p.half_height())
                 .p;
  }
  return out;
}

RenderedFace render_face(const FaceParams& p, int64_t height, int64_t width) {
  RenderedFace out;
  out.landmarks = face_landmarks(p);
  const auto anchors = landmark_anchors(p.expression);
  std::array<double, 2> eye_depth{};
  for (int i = 0; i < 2; ++i) {
    eye_depth[i] = project_anchor(anchors[i][0], anchors[i][1], anchors[i][2], p.pose, p.cx,
                                  p.cy, p.half_width, p.half_height())
                       .depth;
  }
  const double a = p.half_width, b = p.half_height();
  const double roll = p.pose.roll * kDeg;
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double eye_r = 0.09 * a;
  const Point2 ml = out.landmarks[3], mr = out.landmarks[4];
  const Point2 mc{0.5 * (ml.x + mr.x), 0.5 * (ml.y + mr.y)};
  const double mw = std::max(0.5 * distance(ml, mr), 0.5);
  const double mh = (0.035 + 0.11 * p.expression.mouth_open) * b;
  const double mang = std::atan2(mr.y - ml.y, mr.x - ml.x);
  const double mca = std::cos(mang), msa = std::sin(mang);
  const double lx0 = -0.3, ly0 = -0.5, lz0 = 1.0;
  const double ln = std::sqrt(lx0 * lx0 + ly0 * ly0 + lz0 * lz0);

  const Background bg(p.background_seed);
  auto img = torch::empty({3, height, width}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  int64_t bx0 = width, by0 = height, bx1 = 0, by1 = 0;
  for (int64_t i = 0; i < height; ++i) {
    for (int64_t j = 0; j < width; ++j) {
      const double px = j + 0.5, py = i + 0.5;
      std::array<double, 3> c;
      const double g = bg.at(px, py, width, height);
      c = {g, g, g};
      const double dx = px - p.cx, dy = py - p.cy;
      const double u = (dx * cr + dy * sr) / a, v = (-dx * sr + dy * cr) / b;
      const double r2 = u * u + v * v;
      if (r2 <= 1.0) {
        bx0 = std::min(bx0, j);
        by0 = std::min(by0, i);
        bx1 = std::max(bx1, j + 1);
        by1 = std::max(by1, i + 1);
        const double w = std::sqrt(1.0 - r2);
        const double ndotl = (u * lx0 + v * ly0 + w * lz0) / ln;
        const double shade = 0.85 + 0.15 * std::max(0.0, ndotl);
        double tex = 0;
        for (const auto& gr : p.identity.gratings) {
          tex += gr.amplitude * std::cos(2 * M_PI * (gr.fx * u + gr.fy * v) + gr.phase);
        }
        for (int k = 0; k < 3; ++k) c[k] = p.identity.skin[k] * shade + tex;
        for (int e = 0; e < 2; ++e) {
          if (eye_depth[e] > 0.15 &&
              distance({px, py}, out.landmarks[e]) <= eye_r) {
            c = {kEyeColor[0], kEyeColor[1], kEyeColor[2]};
          }
        }
        const double mdx = px - mc.x, mdy = py - mc.y;
        const double mu = (mdx * mca + mdy * msa) / mw, mv = (-mdx * msa + mdy * mca) / mh;
        if (mu * mu + mv * mv <= 1.0) c = {kMouthColor[0], kMouthColor[1], kMouthColor[2]};
      }
      for (int k = 0; k < 3; ++k) acc[k][i][j] = static_cast<float>(2.0 * std::clamp(c[k], 0.0, 1.0) - 1.0);
    }
  }
  out.image = img;
  out.box = bx1 > bx0 ? FaceBox{bx0, by0, bx1, by1} : FaceBox{};
  return out;
}

FaceParams random_still(const IdentityCode& id, Rng& rng, int64_t height, int64_t width) {
  FaceParams p;
  p.identity = id;
  p.pose = {rng.uniform(-35, 35), rng.uniform(-15, 15), rng.uniform(-8, 8)};
  p.expression = {rng.uniform(0, 1), rng.uniform(-1, 1)};
  p.half_width = 0.22 * width * rng.uniform(0.95, 1.05);
  p.cx = 0.5 * width + rng.uniform(-0.05, 0.05) * width;
  p.cy = 0.5 * height + rng.uniform(-0.04, 0.04) * height;
  p.background_seed = rng.next();
  return p;
}

std::vector<FaceParams> random_clip(const IdentityCode& id, int64_t length, Rng& rng,
                                    int64_t height, int64_t width) {
  FaceParams base = random_still(id, rng, height, width);
  base.pose = {rng.uniform(-20, 20), rng.uniform(-8, 8), rng.uniform(-4, 4)};
  const double ay = rng.uniform(5, 15), ap = rng.uniform(2, 6), ar = rng.uniform(1, 3);
  const double wy = rng.uniform(0.1, 0.3), wp = rng.uniform(0.1, 0.3), wr = rng.uniform(0.05, 0.2);
  const double wo = rng.uniform(0.15, 0.4), ws = rng.uniform(0.05, 0.2);
  const double py = rng.uniform(0, 2 * M_PI), pp = rng.uniform(0, 2 * M_PI);
  const double po = rng.uniform(0, 2 * M_PI), ps = rng.uniform(0, 2 * M_PI);
  const double vx = rng.uniform(-0.25, 0.25), vy = rng.uniform(-0.15, 0.15);
  std::vector<FaceParams> out;
  out.reserve(static_cast<size_t>(length));
  for (int64_t t = 0; t < length; ++t) {
    FaceParams p = base;
    p.pose.yaw = base.pose.yaw + ay * std::sin(wy * t + py);
    p.pose.pitch = base.pose.pitch + ap * std::sin(wp * t + pp);
    p.pose.roll = base.pose.roll + ar * std::sin(wr * t);
    p.expression.mouth_open = 0.5 + 0.45 * std::sin(wo * t + po);
    p.expression.smile = 0.8 * std::sin(ws * t + ps);
    p.cx = std::clamp(base.cx + vx * t, 0.4 * width, 0.6 * width);
    p.cy = std::clamp(base.cy + vy * t, 0.42 * height, 0.58 * height);
    out.push_back(p);
  }
  return out;
}

}  // namespace vidswap::synth

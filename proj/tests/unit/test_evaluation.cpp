#include <doctest.h>
#include <torch/torch.h>

#include <algorithm>
#include <map>

#include "vidswap/evaluation.hpp"
#include "vidswap/random.hpp"

using namespace vidswap;

namespace {

double ssim_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  const int C = static_cast<int>(a.size(0)), H = static_cast<int>(a.size(1)), W = static_cast<int>(a.size(2));
  std::vector<double> g(11);
  for (int i = 0; i < 11; ++i) g[static_cast<size_t>(i)] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double sw = 0, mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int dy = -5; dy <= 5; ++dy) {
          for (int dx = -5; dx <= 5; ++dx) {
            const int v = y + dy, u = x + dx;
            if (v < 0 || v >= H || u < 0 || u >= W) continue;
            const double w = g[static_cast<size_t>(dy + 5)] * g[static_cast<size_t>(dx + 5)];
            const double p = a[c][v][u].item<double>(), q = b[c][v][u].item<double>();
            sw += w;
            mx += w * p;
            my += w * q;
            xx += w * p * p;
            yy += w * q * q;
            xy += w * p * q;
          }
        }
        mx /= sw;
        my /= sw;
        const double vx = xx / sw - mx * mx, vy = yy / sw - my * my, cxy = xy / sw - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
  }
  return total / (C * H * W);
}

// Attribute vectors looked up from an index stored in pixel (0, 0).
class TableProvider : public AttributeProvider {
 public:
  explicit TableProvider(std::map<int, std::vector<double>> t) : table_(std::move(t)) {}
  std::optional<std::vector<double>> measure(const torch::Tensor& frame) const override {
    const int i = static_cast<int>(std::lround(frame[0][0][0].item<double>() * 100));
    auto it = table_.find(i);
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<int, std::vector<double>> table_;
};

FrameSeq indexed(const std::vector<int>& idx) {
  auto x = torch::zeros({static_cast<int64_t>(idx.size()), 3, 4, 4});
  for (size_t i = 0; i < idx.size(); ++i) x[static_cast<int64_t>(i)][0][0][0] = idx[i] / 100.0f;
  return FrameSeq(x);
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("identical inputs") {
  auto a = FrameSeq(torch::rand({2, 3, 16, 16}) * 2 - 1);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  CHECK(psnr(a, a) == 100.0);
  CHECK(psnr(a, a, 60.0) == 60.0);
}

TEST_CASE("uniform offset gives 20 dB") {
  auto a = torch::rand({1, 3, 8, 8}, torch::kFloat64) * 0.9;
  CHECK(std::abs(psnr(a, a + 0.1) - 20.0) <= 1e-9);
}

TEST_CASE("ssim against a direct formula") {
  auto gen = make_generator(8);
  auto a = torch::rand({3, 8, 8}, gen, torch::kFloat64);
  auto b = torch::rand({3, 8, 8}, gen, torch::kFloat64);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-6);
  auto c = (a + 0.05 * torch::randn({3, 8, 8}, gen, torch::kFloat64)).clamp(0, 1);
  CHECK(std::abs(ssim(a, c) - ssim_oracle(a, c)) <= 1e-6);
}

TEST_CASE("perceptual stand-in") {
  auto a = FrameSeq(torch::rand({2, 3, 16, 16}) * 2 - 1);
  CHECK(perceptual_distance(a, a) == 0.0);
  CHECK(perceptual_distance(a, FrameSeq(a.data().flip({3}))) > 0.0);
}

TEST_CASE("frechet video distance") {
  auto gen = make_generator(3);
  std::vector<FrameSeq> x, y;
  for (int i = 0; i < 12; ++i) {
    x.push_back(FrameSeq(torch::rand({8, 3, 16, 16}, gen) * 2 - 1));
    y.push_back(FrameSeq(torch::rand({8, 3, 16, 16}, gen) * 1.5 - 0.5));
  }
  RandomProjectionExtractor ex(8);
  CHECK(std::abs(fvd(x, x, ex, 8)) <= 1e-6);
  const double xy = fvd(x, y, ex, 8), yx = fvd(y, x, ex, 8);
  CHECK(xy > 0);
  CHECK(std::abs(xy - yx) <= 1e-8);
  CHECK(fvd(x, y, ex, 32) >= 0);

  Eigen::MatrixXd a(10000, 1), b(10000, 1);
  Rng r(12);
  for (int i = 0; i < 10000; ++i) {
    a(i, 0) = r.normal();
    b(i, 0) = 1 + r.normal();
  }
  CHECK(std::abs(frechet_distance(a, b) - 1.0) <= 0.05);
}

TEST_CASE("retrieval") {
  std::vector<Eigen::VectorXd> src;
  for (int i = 0; i < 6; ++i) src.push_back(Eigen::VectorXd::Unit(6, i));
  SUBCASE("perfect and adversarial") {
    std::vector<std::vector<Eigen::VectorXd>> good, bad;
    for (int i = 0; i < 6; ++i) {
      good.push_back({src[static_cast<size_t>(i)]});
      bad.push_back({src[static_cast<size_t>((i + 3) % 6)]});
    }
    CHECK(id_retrieval_from_embeddings(good, src).top1 == 100.0);
    CHECK(id_retrieval_from_embeddings(bad, src).top1 == 0.0);
  }
  SUBCASE("ten videos against an exhaustive ranking") {
    Rng r(5);
    auto rnd = [&] { return Eigen::VectorXd(Eigen::VectorXd::NullaryExpr(6, [&] { return r.normal(); })); };
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Eigen::VectorXd> sources;
      std::vector<std::vector<Eigen::VectorXd>> vids;
      for (int i = 0; i < 10; ++i) sources.push_back(rnd());
      for (int i = 0; i < 10; ++i) vids.push_back({rnd(), rnd(), rnd()});
      int top1 = 0, top5 = 0;
      for (int v = 0; v < 10; ++v) {
        std::vector<double> score(10);
        for (int s = 0; s < 10; ++s) {
          double sum = 0;
          for (const auto& f : vids[static_cast<size_t>(v)]) {
            sum += f.dot(sources[static_cast<size_t>(s)]) / (f.norm() * sources[static_cast<size_t>(s)].norm());
          }
          score[static_cast<size_t>(s)] = sum / 3;
        }
        int rank = 0;
        for (int s = 0; s < 10; ++s) {
          const double a = score[static_cast<size_t>(s)], b = score[static_cast<size_t>(v)];
          rank += a > b || (a == b && s < v);
        }
        top1 += rank < 1;
        top5 += rank < 5;
      }
      const auto res = id_retrieval_from_embeddings(vids, sources);
      CHECK(res.top1 == doctest::Approx(top1 * 10.0));
      CHECK(res.top5 == doctest::Approx(top5 * 10.0));
      CHECK(res.top5 >= res.top1);
    }
  }
}

TEST_CASE("attribute error") {
  std::map<int, std::vector<double>> pose, expr;
  Rng r(4);
  for (int i = 0; i < 6; ++i) {
    pose[i] = {r.uniform(-30, 30), r.uniform(-10, 10), r.uniform(-5, 5)};
    expr[i] = {r.uniform(0, 1), r.uniform(-1, 1)};
    pose[50 + i] = {pose[i][0] + 5, pose[i][1], pose[i][2]};
    expr[50 + i] = expr[i];
    pose[80 + i] = {r.uniform(-30, 30), r.uniform(-10, 10), r.uniform(-5, 5)};
    expr[80 + i] = {r.uniform(0, 1), r.uniform(-1, 1)};
  }
  TableProvider P(pose), E(expr);
  const auto target = indexed({0, 1, 2, 3, 4, 5});
  SUBCASE("identity") {
    const auto e = attribute_error(target, target, P, E);
    CHECK(e.pose_l2 == 0.0);
    CHECK(e.expr_l2 == 0.0);
    CHECK(e.counted_frames == 6);
  }
  SUBCASE("constant yaw offset") {
    const auto e = attribute_error(indexed({50, 51, 52, 53, 54, 55}), target, P, E);
    CHECK(e.pose_l2 == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(e.expr_l2 == 0.0);
  }
  SUBCASE("random instance against a loop") {
    const auto e = attribute_error(indexed({80, 81, 82, 83, 84, 85}), target, P, E);
    double p = 0, q = 0;
    for (int i = 0; i < 6; ++i) {
      double dp = 0, dq = 0;
      for (int k = 0; k < 3; ++k) dp += std::pow(pose[80 + i][static_cast<size_t>(k)] - pose[i][static_cast<size_t>(k)], 2);
      for (int k = 0; k < 2; ++k) dq += std::pow(expr[80 + i][static_cast<size_t>(k)] - expr[i][static_cast<size_t>(k)], 2);
      p += std::sqrt(dp);
      q += std::sqrt(dq);
    }
    CHECK(std::abs(e.pose_l2 - p / 6) <= 1e-10);
    CHECK(std::abs(e.expr_l2 - q / 6) <= 1e-10);
  }
  SUBCASE("unmeasurable frames are skipped and counted") {
    const auto e = attribute_error(indexed({50, 99, 52, 53, 54, 55}), target, P, E);
    CHECK(e.skipped_frames == 1);
    CHECK(e.counted_frames == 5);
    CHECK(e.pose_l2 == doctest::Approx(5.0));
  }
}

}  // TEST_SUITE

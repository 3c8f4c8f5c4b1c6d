#include "vidswap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidswap/log.hpp"
#include "vidswap/random.hpp"
#include "vidswap/vae.hpp"

namespace vidswap {

namespace F = torch::nn::functional;

namespace {

torch::Tensor to01(const FrameSeq& f) { return (f.data().to(torch::kFloat64) + 1.0) / 2.0; }

torch::Tensor as_batch(const torch::Tensor& x) {
  VF_CHECK(x.dim() == 3 || x.dim() == 4, ContractError, "expected [C,H,W] or [N,C,H,W]");
  return (x.dim() == 3 ? x.unsqueeze(0) : x).to(torch::kFloat64);
}

torch::Tensor gaussian_1d(int64_t size, double sigma) {
  auto g = torch::empty({size}, torch::kFloat64);
  const double c = 0.5 * static_cast<double>(size - 1);
  for (int64_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  return g / g.sum();
}

// Separable window filter with zero padding, renormalised by the window
// mass that falls inside the image.
torch::Tensor window_mean(const torch::Tensor& x, const torch::Tensor& g) {
  const int64_t k = g.size(0), pad = k / 2;
  const int64_t C = x.size(1);
  auto gx = g.view({1, 1, 1, k}).expand({C, 1, 1, k}).contiguous();
  auto gy = g.view({1, 1, k, 1}).expand({C, 1, k, 1}).contiguous();
  auto blur = [&](const torch::Tensor& t) {
    auto h = F::conv2d(t, gx, F::Conv2dFuncOptions().padding({0, pad}).groups(C));
    return F::conv2d(h, gy, F::Conv2dFuncOptions().padding({pad, 0}).groups(C));
  };
  return blur(x) / blur(torch::ones_like(x));
}

}  // namespace

double psnr(const torch::Tensor& a01, const torch::Tensor& b01, double cap) {
  check_same_shape(a01, b01, "psnr");
  const double mse = (a01.to(torch::kFloat64) - b01.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const FrameSeq& a, const FrameSeq& b, double cap) { return psnr(to01(a), to01(b), cap); }

double ssim(const torch::Tensor& a01, const torch::Tensor& b01) {
  check_same_shape(a01, b01, "ssim");
  const auto a = as_batch(a01), b = as_batch(b01);
  const auto g = gaussian_1d(11, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto mu_a = window_mean(a, g), mu_b = window_mean(b, g);
  const auto var_a = window_mean(a * a, g) - mu_a * mu_a;
  const auto var_b = window_mean(b * b, g) - mu_b * mu_b;
  const auto cov = window_mean(a * b, g) - mu_a * mu_b;
  const auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  return map.mean().item<double>();
}

double ssim(const FrameSeq& a, const FrameSeq& b) { return ssim(to01(a), to01(b)); }

double perceptual_distance(const FrameSeq& a, const FrameSeq& b) {
  check_same_shape(a.data(), b.data(), "perceptual_distance");
  torch::NoGradGuard ng;
  return multiscale_gradient_distance(to01(a).to(torch::kFloat32), to01(b).to(torch::kFloat32)).item<double>();
}

RandomProjectionExtractor::RandomProjectionExtractor(int64_t dim, uint64_t seed, int64_t pool)
    : dim_(dim), pool_(pool) {
  VF_CHECK(dim >= 2 && pool >= 1, ConfigError, "extractor needs dim >= 2 and pool >= 1");
  const int64_t in = 3 * pool * pool;
  const int64_t da = dim / 2, dm = dim - da;
  Rng r(seed);
  appearance_.resize(da, 2 * in);
  motion_.resize(dm, in);
  for (int64_t i = 0; i < appearance_.size(); ++i) appearance_.data()[i] = r.normal() / std::sqrt(2.0 * in);
  for (int64_t i = 0; i < motion_.size(); ++i) motion_.data()[i] = r.normal() / std::sqrt(1.0 * in);
}

Eigen::VectorXd RandomProjectionExtractor::features(const torch::Tensor& window) const {
  VF_CHECK(window.dim() == 4 && window.size(1) == 3, ContractError, "window must be [W, 3, H, W]");
  auto p = F::adaptive_avg_pool2d(window.to(torch::kFloat64),
                                  F::AdaptiveAvgPool2dFuncOptions({pool_, pool_}))
               .flatten(1);
  const int64_t n = p.size(0), in = p.size(1);
  auto mean = p.mean(0);
  auto sd = n > 1 ? p.std(0, /*unbiased=*/false) : torch::zeros_like(mean);
  auto diff = n > 1 ? (p.slice(0, 1) - p.slice(0, 0, -1)).abs().mean(0) : torch::zeros_like(mean);
  auto stats = torch::cat({mean, sd}).contiguous();
  diff = diff.contiguous();
  Eigen::Map<const Eigen::VectorXd> s(stats.data_ptr<double>(), 2 * in);
  Eigen::Map<const Eigen::VectorXd> d(diff.data_ptr<double>(), in);
  Eigen::VectorXd out(dim_);
  out << appearance_ * s, motion_ * d;
  return out;
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  VF_CHECK(a.rows() >= 1 && b.rows() >= 1, ContractError, "frechet_distance needs samples");
  VF_CHECK(a.cols() == b.cols(), ContractError, "feature dimensions differ");
  const int64_t d = a.cols();
  auto fit = [d](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    const double denom = static_cast<double>(std::max<int64_t>(x.rows() - 1, 1));
    cov = c.transpose() * c / denom;
    if (x.rows() <= d) {
      const double lambda = 0.1;
      const double scale = cov.trace() / static_cast<double>(d);
      cov = (1 - lambda) * cov + lambda * scale * Eigen::MatrixXd::Identity(d, d);
      log_warn("frechet.shrinkage", {{"samples", x.rows()}, {"dim", d}, {"lambda", lambda}});
    }
  };
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd s1, s2;
  fit(a, mu1, s1);
  fit(b, mu2, s2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::VectorXd l1 = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd r1 = e1.eigenvectors() * l1.asDiagonal() * e1.eigenvectors().transpose();
  const Eigen::MatrixXd m = r1 * s2 * r1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr_sqrt;
  return std::max(0.0, dist);
}

namespace {

Eigen::MatrixXd window_features(const std::vector<FrameSeq>& clips,
                                const VideoFeatureExtractor& ex, int64_t window) {
  std::vector<Eigen::VectorXd> rows;
  for (const auto& c : clips) {
    const int64_t n = c.frame_count();
    if (n <= window) {
      rows.push_back(ex.features(c.data()));
      continue;
    }
    for (int64_t s = 0; s + window <= n; s += window) {
      rows.push_back(ex.features(c.data().slice(0, s, s + window)));
    }
  }
  VF_CHECK(!rows.empty(), ContractError, "fvd needs at least one clip");
  Eigen::MatrixXd out(static_cast<int64_t>(rows.size()), ex.dim());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int64_t>(i)) = rows[i].transpose();
  return out;
}

}  // namespace

double fvd(const std::vector<FrameSeq>& real, const std::vector<FrameSeq>& fake,
           const VideoFeatureExtractor& extractor, int64_t window) {
  VF_CHECK(window >= 1, ConfigError, "fvd window must be >= 1");
  return frechet_distance(window_features(real, extractor, window),
                          window_features(fake, extractor, window));
}

RetrievalResult id_retrieval_from_embeddings(
    const std::vector<std::vector<Eigen::VectorXd>>& video_frames,
    const std::vector<Eigen::VectorXd>& sources) {
  VF_CHECK(video_frames.size() == sources.size(), ContractError,
           "id_retrieval expects one source per video");
  VF_CHECK(!sources.empty(), ContractError, "id_retrieval needs at least one video");
  const size_t n = sources.size();
  auto cosine = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const double nx = x.norm(), ny = y.norm();
    return nx > 0 && ny > 0 ? x.dot(y) / (nx * ny) : 0.0;
  };
  RetrievalResult r;
  int64_t hit1 = 0, hit5 = 0;
  for (size_t v = 0; v < n; ++v) {
    std::vector<double> score(n, 0.0);
    const auto& frames = video_frames[v];
    for (size_t s = 0; s < n; ++s) {
      double acc = 0;
      for (const auto& f : frames) acc += cosine(f, sources[s]);
      score[s] = frames.empty() ? 0.0 : acc / static_cast<double>(frames.size());
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t x, size_t y) { return score[x] > score[y]; });
    const auto rank = static_cast<size_t>(std::find(order.begin(), order.end(), v) - order.begin());
    hit1 += rank < 1;
    hit5 += rank < 5;
  }
  r.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(n);
  r.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(n);
  return r;
}

namespace {

Eigen::VectorXd to_eigen(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return Eigen::Map<const Eigen::VectorXd>(c.data_ptr<double>(), c.numel());
}

}  // namespace

RetrievalResult id_retrieval(const std::vector<FrameSeq>& swapped,
                             const std::vector<FrameSeq>& sources, const FaceDetector& detector,
                             const IdentityProvider& id, int64_t crop_size) {
  VF_CHECK(swapped.size() == sources.size(), ContractError,
           "id_retrieval expects one source per video");
  int64_t skipped = 0;
  std::vector<std::vector<Eigen::VectorXd>> frames(swapped.size());
  std::vector<Eigen::VectorXd> src;
  for (size_t i = 0; i < sources.size(); ++i) {
    const auto img = sources[i].data()[0];
    const auto box = detector.detect(img);
    VF_CHECK(box.has_value(), ContractError, "no face in source image " + std::to_string(i));
    src.push_back(to_eigen(id.embed(crop_face(img, *box, crop_size))));
  }
  for (size_t v = 0; v < swapped.size(); ++v) {
    for (int64_t t = 0; t < swapped[v].frame_count(); ++t) {
      const auto f = swapped[v].data()[t];
      const auto box = detector.detect(f);
      if (!box) {
        ++skipped;
        continue;
      }
      frames[v].push_back(to_eigen(id.embed(crop_face(f, *box, crop_size))));
    }
  }
  auto r = id_retrieval_from_embeddings(frames, src);
  r.skipped_frames = skipped;
  if (skipped) log_warn("id_retrieval.skipped_frames", {{"count", skipped}});
  return r;
}

double mean_l2(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  VF_CHECK(a.size() == b.size(), ContractError, "mean_l2 needs paired sequences");
  if (a.empty()) return 0.0;
  double total = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    VF_CHECK(a[i].size() == b[i].size(), ContractError, "mean_l2 vector sizes differ");
    double s = 0;
    for (size_t k = 0; k < a[i].size(); ++k) s += (a[i][k] - b[i][k]) * (a[i][k] - b[i][k]);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(a.size());
}

AttributeErrors attribute_error(const FrameSeq& swapped, const FrameSeq& target,
                                const AttributeProvider& pose, const AttributeProvider& expr) {
  VF_CHECK(swapped.frame_count() == target.frame_count(), ContractError,
           "attribute_error needs equal frame counts");
  std::vector<std::vector<double>> ps, pt, es, et;
  AttributeErrors r;
  for (int64_t t = 0; t < swapped.frame_count(); ++t) {
    const auto fs = swapped.data()[t], ft = target.data()[t];
    auto a = pose.measure(fs), b = pose.measure(ft), c = expr.measure(fs), d = expr.measure(ft);
    if (!a || !b || !c || !d) {
      ++r.skipped_frames;
      continue;
    }
    ps.push_back(*a);
    pt.push_back(*b);
    es.push_back(*c);
    et.push_back(*d);
  }
  r.counted_frames = static_cast<int64_t>(ps.size());
  r.pose_l2 = mean_l2(ps, pt);
  r.expr_l2 = mean_l2(es, et);
  if (r.skipped_frames) log_warn("attribute_error.skipped_frames", {{"count", r.skipped_frames}});
  return r;
}

}  // namespace vidswap

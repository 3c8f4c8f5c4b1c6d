#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "vidswap/providers.hpp"
#include "vidswap/tensor_types.hpp"

namespace vidswap {

/// Frames in [-1, 1] are rescaled to [0, 1]. Identical inputs report `cap`.
double psnr(const FrameSeq& a, const FrameSeq& b, double cap = 100.0);
double psnr(const torch::Tensor& a01, const torch::Tensor& b01, double cap = 100.0);

/// Gaussian-window SSIM (11x11, sigma 1.5, k1 = 0.01, k2 = 0.03) on [0, 1]
/// images, averaged over pixels, channels and frames. Near the border the
/// window is truncated to the image and renormalised, so images smaller
/// than the window are still defined.
double ssim(const FrameSeq& a, const FrameSeq& b);
double ssim(const torch::Tensor& a01, const torch::Tensor& b01);

/// Learned-perceptual stand-in: the multiscale gradient distance used by
/// the VAE loss, on [0, 1] frames.
double perceptual_distance(const FrameSeq& a, const FrameSeq& b);

class VideoFeatureExtractor {
 public:
  virtual ~VideoFeatureExtractor() = default;
  virtual int64_t dim() const = 0;
  /// Feature vector for a window [W, 3, H, W].
  virtual Eigen::VectorXd features(const torch::Tensor& window) const = 0;
};

/// Fixed random projections of pooled frames, frame differences and
/// their temporal mean/std.
class RandomProjectionExtractor : public VideoFeatureExtractor {
 public:
  explicit RandomProjectionExtractor(int64_t dim = 32, uint64_t seed = 0x5EED, int64_t pool = 8);
  int64_t dim() const override { return dim_; }
  Eigen::VectorXd features(const torch::Tensor& window) const override;

 private:
  int64_t dim_, pool_;
  Eigen::MatrixXd appearance_, motion_;
};

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) between Gaussian fits of
/// the rows of a and b. With n <= d samples the covariances are shrunk
/// toward a scaled identity (warning logged).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Non-overlapping windows of `window` frames per clip; a clip shorter than
/// the window contributes itself as one window.
double fvd(const std::vector<FrameSeq>& real, const std::vector<FrameSeq>& fake,
           const VideoFeatureExtractor& extractor, int64_t window);

struct RetrievalResult {
  double top1 = 0, top5 = 0;  // percent
  int64_t skipped_frames = 0;
};

/// Ranking from precomputed embeddings: per video, score[s] = mean over
/// frames of cos(frame, source s). Ties go to the lower source index.
RetrievalResult id_retrieval_from_embeddings(
    const std::vector<std::vector<Eigen::VectorXd>>& video_frames,
    const std::vector<Eigen::VectorXd>& sources);

/// Video i is expected to carry source i's identity.
RetrievalResult id_retrieval(const std::vector<FrameSeq>& swapped,
                             const std::vector<FrameSeq>& sources, const FaceDetector& detector,
                             const IdentityProvider& id, int64_t crop_size);

struct AttributeErrors {
  double pose_l2 = 0, expr_l2 = 0;
  int64_t skipped_frames = 0;
  int64_t counted_frames = 0;
};

AttributeErrors attribute_error(const FrameSeq& swapped, const FrameSeq& target,
                                const AttributeProvider& pose, const AttributeProvider& expr);

/// Mean of per-frame L2 distances between paired vectors.
double mean_l2(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

}  // namespace vidswap

#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "vidswap/errors.hpp"

namespace vidswap {

/// A clip of T RGB frames, shape [T, 3, H, W], values in [-1, 1].
/// A still image is a clip with T = 1.
class FrameSeq {
 public:
  FrameSeq() = default;
  explicit FrameSeq(torch::Tensor data);

  static FrameSeq zeros(int64_t frames, int64_t height, int64_t width,
                        torch::Dtype dtype = torch::kFloat32);

  const torch::Tensor& data() const { return data_; }
  int64_t frame_count() const { return data_.size(0); }
  int64_t height() const { return data_.size(2); }
  int64_t width() const { return data_.size(3); }
  bool empty() const { return !data_.defined(); }

  FrameSeq slice(int64_t begin, int64_t end) const;
  FrameSeq frame(int64_t index) const { return slice(index, index + 1); }

 private:
  torch::Tensor data_;
};

/// Per-frame latent grid, shape [T, C, h, w]. The diffusion state space.
class LatentSeq {
 public:
  LatentSeq() = default;
  explicit LatentSeq(torch::Tensor data);

  const torch::Tensor& data() const { return data_; }
  int64_t frame_count() const { return data_.size(0); }
  int64_t channels() const { return data_.size(1); }
  bool empty() const { return !data_.defined(); }

 private:
  torch::Tensor data_;
};

FrameSeq concat_frames(const std::vector<FrameSeq>& parts);

std::string shape_string(const torch::Tensor& t);

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b,
                      const char* what);

}  // namespace vidswap

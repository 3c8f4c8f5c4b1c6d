#include "vidswap/tensor_types.hpp"

#include <sstream>

namespace vidswap {

FrameSeq::FrameSeq(torch::Tensor data) : data_(std::move(data)) {
  VF_CHECK(data_.defined() && data_.dim() == 4 && data_.size(1) == 3,
           ContractError,
           "FrameSeq expects [T, 3, H, W], got " + shape_string(data_));
  VF_CHECK(data_.size(0) >= 1, ContractError, "FrameSeq needs at least one frame");
}

FrameSeq FrameSeq::zeros(int64_t frames, int64_t height, int64_t width,
                         torch::Dtype dtype) {
  return FrameSeq(torch::zeros({frames, 3, height, width}, torch::TensorOptions(dtype)));
}

FrameSeq FrameSeq::slice(int64_t begin, int64_t end) const {
  VF_CHECK(begin >= 0 && end <= frame_count() && begin < end, ContractError,
           "frame slice out of range");
  return FrameSeq(data_.slice(0, begin, end));
}

LatentSeq::LatentSeq(torch::Tensor data) : data_(std::move(data)) {
  VF_CHECK(data_.defined() && data_.dim() == 4, ContractError,
           "LatentSeq expects [T, C, h, w], got " + shape_string(data_));
  VF_CHECK(data_.size(0) >= 1, ContractError, "LatentSeq needs at least one frame");
}

FrameSeq concat_frames(const std::vector<FrameSeq>& parts) {
  VF_CHECK(!parts.empty(), ContractError, "concat_frames of nothing");
  std::vector<torch::Tensor> ts;
  ts.reserve(parts.size());
  for (const auto& p : parts) ts.push_back(p.data());
  return FrameSeq(torch::cat(ts, 0));
}

std::string shape_string(const torch::Tensor& t) {
  if (!t.defined()) return "<undefined>";
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  VF_CHECK(a.defined() && b.defined() && a.sizes() == b.sizes(), ContractError,
           std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
               shape_string(b));
}

}  // namespace vidswap

#include "vidswap/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace vidswap {

FaceBox FaceBox::clipped(int64_t img_w, int64_t img_h) const {
  FaceBox b;
  b.x0 = std::clamp<int64_t>(x0, 0, img_w);
  b.x1 = std::clamp<int64_t>(x1, 0, img_w);
  b.y0 = std::clamp<int64_t>(y0, 0, img_h);
  b.y1 = std::clamp<int64_t>(y1, 0, img_h);
  return b;
}

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double landmark_discrepancy(const Landmarks& a, const Landmarks& ref) {
  const double iod = std::max(distance(ref[0], ref[1]), 1e-9);
  double sum = 0;
  for (size_t i = 0; i < a.size(); ++i) sum += distance(a[i], ref[i]);
  return sum / static_cast<double>(a.size()) / iod;
}

}  // namespace vidswap

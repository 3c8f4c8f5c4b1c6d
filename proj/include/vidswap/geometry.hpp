#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace vidswap {

struct Point2 {
  double x = 0, y = 0;
};

/// Left eye, right eye, nose tip, left mouth corner, right mouth corner.
using Landmarks = std::array<Point2, 5>;

/// Integer pixel box, half-open: columns [x0, x1), rows [y0, y1).
struct FaceBox {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int64_t width() const { return x1 - x0; }
  int64_t height() const { return y1 - y0; }
  int64_t area() const { return width() > 0 && height() > 0 ? width() * height() : 0; }
  Point2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  FaceBox clipped(int64_t img_w, int64_t img_h) const;
  bool operator==(const FaceBox&) const = default;
};

/// Real-valued box used while smoothing detections.
struct BoxF {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  Point2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
};

/// Head pose in degrees.
struct Pose {
  double yaw = 0, pitch = 0, roll = 0;
  std::vector<double> as_vector() const { return {yaw, pitch, roll}; }
};

struct Expression {
  double mouth_open = 0;  // [0, 1]
  double smile = 0;       // [-1, 1]
  std::vector<double> as_vector() const { return {mouth_open, smile}; }
};

double distance(const Point2& a, const Point2& b);

/// Mean landmark distance normalised by the inter-ocular distance of `ref`.
double landmark_discrepancy(const Landmarks& a, const Landmarks& ref);

}  // namespace vidswap

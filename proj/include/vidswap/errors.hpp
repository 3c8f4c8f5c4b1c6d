#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vidswap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (ranges, weights, unknown stage...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (shapes, ranges, modes).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Raised by providers (renderers, embedders) that cannot produce output.
class ProviderError : public Error {
 public:
  using Error::Error;
};

class DetectionError : public Error {
 public:
  explicit DetectionError(int64_t frame_index)
      : Error("no face detected in frame " + std::to_string(frame_index)),
        frame_index_(frame_index) {}

  int64_t frame_index() const { return frame_index_; }

 private:
  int64_t frame_index_;
};

#define VF_CHECK(cond, ExcType, msg)     \
  do {                                   \
    if (!(cond)) throw ExcType((msg));   \
  } while (0)

}  // namespace vidswap

#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vidswap/tensor_types.hpp"

namespace vidswap {

/// 8-bit quantisation used by every store: round((x + 1) / 2 * 255).
torch::Tensor quantize_frame(const torch::Tensor& frame);

/// PNG encode/decode of [3, H, W] frames in [-1, 1].
std::vector<uint8_t> encode_png(const torch::Tensor& frame);
torch::Tensor decode_png(const std::vector<uint8_t>& bytes);

/// Keyed media and text blobs under relative paths.
class MediaStore {
 public:
  virtual ~MediaStore() = default;
  virtual void put_frame(const std::string& rel, const torch::Tensor& frame) = 0;
  virtual torch::Tensor get_frame(const std::string& rel) const = 0;
  virtual void put_text(const std::string& rel, const std::string& text) = 0;
  virtual std::string get_text(const std::string& rel) const = 0;
  virtual bool exists(const std::string& rel) const = 0;
  /// Relative paths directly below `prefix`, sorted.
  virtual std::vector<std::string> list(const std::string& prefix) const = 0;
};

class DiskStore : public MediaStore {
 public:
  explicit DiskStore(std::filesystem::path root);
  void put_frame(const std::string& rel, const torch::Tensor& frame) override;
  torch::Tensor get_frame(const std::string& rel) const override;
  void put_text(const std::string& rel, const std::string& text) override;
  std::string get_text(const std::string& rel) const override;
  bool exists(const std::string& rel) const override;
  std::vector<std::string> list(const std::string& prefix) const override;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

class MemoryStore : public MediaStore {
 public:
  void put_frame(const std::string& rel, const torch::Tensor& frame) override;
  torch::Tensor get_frame(const std::string& rel) const override;
  void put_text(const std::string& rel, const std::string& text) override;
  std::string get_text(const std::string& rel) const override;
  bool exists(const std::string& rel) const override;
  std::vector<std::string> list(const std::string& prefix) const override;

 private:
  std::map<std::string, torch::Tensor> frames_;
  std::map<std::string, std::string> texts_;
};

/// Frames stored as <dir>/00000.png, <dir>/00001.png, ...
std::string frame_path(const std::string& dir, int64_t index);
void write_frames(MediaStore& store, const std::string& dir, const FrameSeq& frames);
FrameSeq read_frames(const MediaStore& store, const std::string& dir);

}  // namespace vidswap

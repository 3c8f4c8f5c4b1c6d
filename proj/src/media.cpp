#include "vidswap/media.hpp"

#include <cstdio>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <set>
#include <sstream>

namespace vidswap {

namespace fs = std::filesystem;

namespace {

void check_frame(const torch::Tensor& f) {
  VF_CHECK(f.dim() == 3 && f.size(0) == 3, ContractError,
           "frames must be [3, H, W], got " + shape_string(f));
}

torch::Tensor to_u8(const torch::Tensor& frame) {
  return ((frame.to(torch::kFloat32).clamp(-1, 1) + 1) * 0.5f * 255.0f).round().to(torch::kUInt8);
}

torch::Tensor from_u8(const torch::Tensor& u8) {
  return u8.to(torch::kFloat32) / 255.0f * 2.0f - 1.0f;
}

}  // namespace

torch::Tensor quantize_frame(const torch::Tensor& frame) {
  check_frame(frame);
  return from_u8(to_u8(frame));
}

std::vector<uint8_t> encode_png(const torch::Tensor& frame) {
  check_frame(frame);
  // RGB planar -> BGR interleaved
  auto hwc = to_u8(frame).flip(0).permute({1, 2, 0}).contiguous();
  cv::Mat img(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
  std::vector<uint8_t> buf;
  VF_CHECK(cv::imencode(".png", img, buf), ProviderError, "png encoding failed");
  return buf;
}

torch::Tensor decode_png(const std::vector<uint8_t>& bytes) {
  cv::Mat img = cv::imdecode(bytes, cv::IMREAD_COLOR);
  VF_CHECK(!img.empty(), ProviderError, "png decoding failed");
  auto t = torch::from_blob(img.data, {img.rows, img.cols, 3}, torch::kUInt8).clone();
  return from_u8(t.permute({2, 0, 1}).flip(0).contiguous());
}

DiskStore::DiskStore(fs::path root) : root_(std::move(root)) {}

void DiskStore::put_frame(const std::string& rel, const torch::Tensor& frame) {
  const auto p = root_ / rel;
  fs::create_directories(p.parent_path());
  const auto bytes = encode_png(frame);
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  VF_CHECK(out.good(), ProviderError, "cannot write " + p.string());
}

torch::Tensor DiskStore::get_frame(const std::string& rel) const {
  const auto p = root_ / rel;
  std::ifstream in(p, std::ios::binary);
  VF_CHECK(in.good(), ProviderError, "cannot read " + p.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

void DiskStore::put_text(const std::string& rel, const std::string& text) {
  const auto p = root_ / rel;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  VF_CHECK(out.good(), ProviderError, "cannot write " + p.string());
}

std::string DiskStore::get_text(const std::string& rel) const {
  const auto p = root_ / rel;
  std::ifstream in(p, std::ios::binary);
  VF_CHECK(in.good(), ProviderError, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool DiskStore::exists(const std::string& rel) const { return fs::exists(root_ / rel); }

std::vector<std::string> DiskStore::list(const std::string& prefix) const {
  std::vector<std::string> out;
  const auto dir = root_ / prefix;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    out.push_back((fs::path(prefix) / e.path().filename()).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void MemoryStore::put_frame(const std::string& rel, const torch::Tensor& frame) {
  frames_[rel] = quantize_frame(frame);
}

torch::Tensor MemoryStore::get_frame(const std::string& rel) const {
  auto it = frames_.find(rel);
  VF_CHECK(it != frames_.end(), ProviderError, "no frame at " + rel);
  return it->second.clone();
}

void MemoryStore::put_text(const std::string& rel, const std::string& text) { texts_[rel] = text; }

std::string MemoryStore::get_text(const std::string& rel) const {
  auto it = texts_.find(rel);
  VF_CHECK(it != texts_.end(), ProviderError, "no text at " + rel);
  return it->second;
}

bool MemoryStore::exists(const std::string& rel) const {
  return frames_.count(rel) || texts_.count(rel);
}

std::vector<std::string> MemoryStore::list(const std::string& prefix) const {
  const std::string pre = prefix.empty() || prefix.back() == '/' ? prefix : prefix + "/";
  std::set<std::string> out;
  auto scan = [&](const std::string& key) {
    if (key.rfind(pre, 0) != 0) return;
    const auto rest = key.substr(pre.size());
    out.insert(pre + rest.substr(0, rest.find('/')));
  };
  for (const auto& [k, _] : frames_) scan(k);
  for (const auto& [k, _] : texts_) scan(k);
  return {out.begin(), out.end()};
}

std::string frame_path(const std::string& dir, int64_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05lld.png", static_cast<long long>(index));
  return dir + "/" + buf;
}

void write_frames(MediaStore& store, const std::string& dir, const FrameSeq& frames) {
  for (int64_t t = 0; t < frames.frame_count(); ++t) {
    store.put_frame(frame_path(dir, t), frames.data()[t]);
  }
}

FrameSeq read_frames(const MediaStore& store, const std::string& dir) {
  std::vector<torch::Tensor> out;
  for (int64_t t = 0; store.exists(frame_path(dir, t)); ++t) out.push_back(store.get_frame(frame_path(dir, t)));
  VF_CHECK(!out.empty(), ProviderError, "no frames under " + dir);
  return FrameSeq(torch::stack(out));
}

}  // namespace vidswap

#pragma once

#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidswap/geometry.hpp"
#include "vidswap/media.hpp"
#include "vidswap/providers.hpp"
#include "vidswap/synthetic_face.hpp"
#include "vidswap/trainer.hpp"

namespace vidswap {

struct FaceRecord {
  std::string media;  // relative path in the store
  int64_t frame = 0;
  std::vector<double> embedding;  // unit norm
  Landmarks landmarks{};
  int gender = 0;
  FaceBox box;
  int64_t width = 0, height = 0;  // frame size
  int64_t identity_label = -1;  // ground truth when known, else -1
  std::optional<synth::FaceParams> params;  // render parameters (synthetic corpus)
};

nlohmann::json to_json(const FaceRecord& r, bool with_embedding = true);
FaceRecord face_record_from_json(const nlohmann::json& j);

struct ClipRecords {
  std::string clip_id;
  std::vector<FaceRecord> frames;
};

struct Corpus {
  std::vector<FaceRecord> images;
  std::vector<ClipRecords> clips;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

using Cluster = std::vector<size_t>;  // indices into the record list

/// Greedy centroid clustering in input order: a record joins the cluster
/// whose normalised centroid is most similar, provided the cosine is
/// >= threshold (ties to the older cluster); otherwise it starts a new one.
std::vector<Cluster> cluster_identities(const std::vector<FaceRecord>& records, double threshold);

struct DecoupledFace {
  torch::Tensor image;  // [3, H, W]
  FaceRecord record;    // media left empty; the builder assigns it
};

/// Produces faces with the target's attributes and another identity.
class DecouplingSwapper {
 public:
  virtual ~DecouplingSwapper() = default;
  /// One output per target frame, all carrying the same new identity.
  virtual std::vector<DecoupledFace> swap(const std::vector<FaceRecord>& target,
                                          uint64_t seed) const = 0;
};

struct SwapperFaults {
  bool flip_gender = false;      // pick the decoupling identity from the other gender
  bool perturb_landmarks = false;  // re-render with a different pose and expression
};

/// Re-renders the target's pose, expression, placement and background with
/// a fresh same-gender synthetic identity (ids from `identity_base` up).
class SyntheticSwapper : public DecouplingSwapper {
 public:
  SyntheticSwapper(std::shared_ptr<const IdentityProvider> id, int64_t crop_size,
                   uint64_t identity_base = 1000000, int64_t identity_pool = 64,
                   SwapperFaults faults = {});
  std::vector<DecoupledFace> swap(const std::vector<FaceRecord>& target,
                                  uint64_t seed) const override;

 private:
  std::shared_ptr<const IdentityProvider> id_;
  int64_t crop_size_;
  uint64_t base_;
  int64_t pool_;
  SwapperFaults faults_;
};

struct TripletFilters {
  double identity_threshold = 0.6;   // cosine
  double landmark_epsilon = 0.15;    // inter-ocular normalised
};

struct Triplet {
  std::string key;
  Modality modality = Modality::image;
  std::string clip_id;  // video only
  FaceRecord source;
  std::vector<FaceRecord> target;      // 1 frame (image) or T frames (video)
  std::vector<FaceRecord> decoupling;  // aligned with target
  std::vector<FaceRecord> motion;      // M frames preceding the target (video)
  double source_similarity = 0;
  double decoupling_similarity = 0;
  double landmark_discrepancy = 0;  // max over frames
};

nlohmann::json to_json(const Triplet& t);
Triplet triplet_from_json(const nlohmann::json& j);
/// Parses aidt_manifest.jsonl.
std::vector<Triplet> parse_manifest(const std::string& jsonl);

/// Rejection reasons in check order.
inline const std::vector<std::string>& rejection_reasons() {
  static const std::vector<std::string> r{"identity", "gender", "expression", "swapper"};
  return r;
}

struct BuildStats {
  int64_t candidates = 0;
  int64_t emitted = 0;
  int64_t skipped_clusters = 0;
  int64_t skipped_clips = 0;
  std::map<std::string, int64_t> rejected;

  void merge(const BuildStats& o);
  nlohmann::json to_json() const;
};

/// Decoupling media is written under decoupling/<key>/ in `store`.
std::vector<Triplet> build_image_triplets(const std::vector<FaceRecord>& records,
                                          const std::vector<Cluster>& clusters,
                                          const DecouplingSwapper& swapper,
                                          const TripletFilters& filters, MediaStore& store,
                                          uint64_t seed, BuildStats& stats);

/// Admissible source indices for a target window starting at `start`.
std::vector<int64_t> admissible_sources(int64_t length, int64_t start, int64_t T, int64_t M);

std::vector<Triplet> build_video_triplets(const std::vector<ClipRecords>& clips,
                                          const DecouplingSwapper& swapper,
                                          const TripletFilters& filters, int64_t T, int64_t M,
                                          MediaStore& store, uint64_t seed, BuildStats& stats);

/// First failing invariant clause, or nullopt. Identities are compared by
/// ground-truth labels when both records carry one, else by embeddings.
std::optional<std::string> validate_triplet(const Triplet& t, const TripletFilters& filters);

/// Sorted by key, one JSON object per line.
std::string manifest_jsonl(std::vector<Triplet> triplets);

struct SyntheticCorpusConfig {
  int64_t identities = 30;
  int64_t images_per_identity = 5;
  int64_t clips = 8;
  int64_t clip_length = 16;
  int64_t image_size = 64;
  uint64_t seed = 0;
};

/// Renders images/<id>/<n>.png and videos/<clip>/<frame>.png with a
/// meta.json sidecar per directory (gender, landmarks, box, embedding).
Corpus generate_corpus(const SyntheticCorpusConfig& cfg, MediaStore& store,
                       const FaceDetector& detector, const IdentityProvider& id, int64_t crop_size);

/// Reads the sidecars written by generate_corpus.
Corpus load_corpus(const MediaStore& store);

struct AidtConfig {
  TripletFilters filters;
  int64_t frames = 8;
  int64_t motion_frames = 4;
  uint64_t seed = 0;
};

struct AidtBuild {
  std::vector<Triplet> triplets;
  BuildStats stats;
  std::vector<Cluster> clusters;
};

/// Clusters, builds image and video triplets, writes aidt_manifest.jsonl and
/// aidt_summary.json into `out`.
AidtBuild build_aidt(const Corpus& corpus, const DecouplingSwapper& swapper, const AidtConfig& cfg,
                     MediaStore& out);

/// Loads a triplet's media as a trainer example.
TrainingExample to_training_example(const Triplet& t, const MediaStore& corpus,
                                    const MediaStore& decoupling);

enum class OccluderShape { rectangle, ellipse, polygon, texture_patch };

OccluderShape occluder_shape_from_string(const std::string& s);

struct OccluderSpec {
  OccluderShape shape = OccluderShape::rectangle;
  double coverage = 0.2;  // fraction of the face-box area; 0 or [0.05, 0.40]
  double max_step = 2.0;  // pixels per frame
  double jitter = 0.5;    // pixels, bounded per-frame perturbation

  void validate() const;
};

struct OcclusionResult {
  FrameSeq frames;
  torch::Tensor mask;             // [T, 1, H, W], 1 where occluded
  std::vector<double> coverage;   // per frame, relative to the box area
  std::vector<Point2> trajectory; // occluder centre per frame
  bool clamped = false;
};

OcclusionResult apply_occlusion(const FrameSeq& frames, const std::vector<FaceBox>& boxes,
                                const OccluderSpec& spec, uint64_t seed);

}  // namespace vidswap

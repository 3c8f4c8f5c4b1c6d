#include "vidswap/aidt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vidswap/log.hpp"

namespace vidswap {

using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string sanitize(std::string s) {
  if (s.size() > 4 && s.substr(s.size() - 4) == ".png") s.resize(s.size() - 4);
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

json params_json(const synth::FaceParams& p) {
  return {{"identity", p.identity.id},
          {"gender", p.identity.gender},
          {"pose", p.pose.as_vector()},
          {"expression", p.expression.as_vector()},
          {"cx", p.cx},
          {"cy", p.cy},
          {"half_width", p.half_width},
          {"background_seed", p.background_seed}};
}

synth::FaceParams params_from_json(const json& j) {
  synth::FaceParams p;
  p.identity = synth::make_identity(j.at("identity").get<uint64_t>(), j.at("gender").get<int>());
  const auto pose = j.at("pose").get<std::vector<double>>();
  const auto ex = j.at("expression").get<std::vector<double>>();
  p.pose = {pose.at(0), pose.at(1), pose.at(2)};
  p.expression = {ex.at(0), ex.at(1)};
  p.cx = j.at("cx");
  p.cy = j.at("cy");
  p.half_width = j.at("half_width");
  p.background_seed = j.at("background_seed");
  return p;
}

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

json to_json(const FaceRecord& r, bool with_embedding) {
  json lm = json::array();
  for (const auto& p : r.landmarks) lm.push_back({p.x, p.y});
  json j{{"media", r.media},
         {"frame", r.frame},
         {"landmarks", lm},
         {"gender", r.gender},
         {"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}},
         {"size", {r.width, r.height}},
         {"identity_label", r.identity_label}};
  if (with_embedding) j["embedding"] = r.embedding;
  if (r.params) j["params"] = params_json(*r.params);
  return j;
}

FaceRecord face_record_from_json(const json& j) {
  FaceRecord r;
  r.media = j.at("media");
  r.frame = j.at("frame");
  const auto& lm = j.at("landmarks");
  VF_CHECK(lm.size() == r.landmarks.size(), ContractError, "record needs 5 landmarks");
  for (size_t i = 0; i < r.landmarks.size(); ++i) r.landmarks[i] = {lm[i].at(0), lm[i].at(1)};
  r.gender = j.at("gender");
  const auto b = j.at("box").get<std::vector<int64_t>>();
  r.box = {b.at(0), b.at(1), b.at(2), b.at(3)};
  const auto sz = j.at("size").get<std::vector<int64_t>>();
  r.width = sz.at(0);
  r.height = sz.at(1);
  r.identity_label = j.value("identity_label", int64_t{-1});
  if (j.contains("embedding")) r.embedding = j.at("embedding").get<std::vector<double>>();
  if (j.contains("params")) r.params = params_from_json(j.at("params"));
  return r;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  VF_CHECK(a.size() == b.size(), ContractError, "embedding sizes differ");
  double d = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return na > 0 && nb > 0 ? d / std::sqrt(na * nb) : 0.0;
}

std::vector<Cluster> cluster_identities(const std::vector<FaceRecord>& records, double threshold) {
  std::vector<Cluster> clusters;
  std::vector<std::vector<double>> sums;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& e = records[i].embedding;
    VF_CHECK(!e.empty(), ContractError, "record " + records[i].media + " has no embedding");
    int64_t best = -1;
    double best_sim = threshold;
    for (size_t c = 0; c < clusters.size(); ++c) {
      const double s = cosine(e, sums[c]);
      if (s >= best_sim && (best < 0 || s > best_sim)) {
        best = static_cast<int64_t>(c);
        best_sim = s;
      }
    }
    if (best < 0) {
      clusters.push_back({i});
      sums.push_back(e);
    } else {
      clusters[static_cast<size_t>(best)].push_back(i);
      auto& s = sums[static_cast<size_t>(best)];
      for (size_t k = 0; k < s.size(); ++k) s[k] += e[k];
    }
  }
  return clusters;
}

SyntheticSwapper::SyntheticSwapper(std::shared_ptr<const IdentityProvider> id, int64_t crop_size,
                                   uint64_t identity_base, int64_t identity_pool,
                                   SwapperFaults faults)
    : id_(std::move(id)), crop_size_(crop_size), base_(identity_base), pool_(identity_pool),
      faults_(faults) {
  VF_CHECK(id_ != nullptr, ConfigError, "swapper needs an identity provider");
  VF_CHECK(pool_ >= 1, ConfigError, "swapper identity pool must be non-empty");
}

std::vector<DecoupledFace> SyntheticSwapper::swap(const std::vector<FaceRecord>& target,
                                                  uint64_t seed) const {
  VF_CHECK(!target.empty(), ContractError, "swap needs at least one target frame");
  for (const auto& t : target) {
    if (!t.params) throw ProviderError("synthetic swapper needs render parameters for " + t.media);
  }
  Rng r(seed);
  int gender = target.front().gender;
  if (faults_.flip_gender) gender = 1 - gender;
  const auto code = synth::make_identity(base_ + static_cast<uint64_t>(r.index(pool_)), gender);
  std::vector<DecoupledFace> out;
  for (const auto& t : target) {
    auto p = *t.params;
    p.identity = code;
    if (faults_.perturb_landmarks) {
      p.pose.yaw = p.pose.yaw > 0 ? p.pose.yaw - 35 : p.pose.yaw + 35;
      p.expression.mouth_open = 1.0 - p.expression.mouth_open;
      p.expression.smile = -p.expression.smile;
    }
    auto rendered = synth::render_face(p, t.height, t.width);
    DecoupledFace d;
    d.image = quantize_frame(rendered.image);
    d.record.frame = t.frame;
    d.record.width = t.width;
    d.record.height = t.height;
    d.record.box = rendered.box;
    d.record.landmarks = rendered.landmarks;
    d.record.gender = code.gender;
    d.record.identity_label = static_cast<int64_t>(code.id);
    d.record.params = p;
    d.record.embedding = to_vec(id_->embed(crop_face(d.image, rendered.box, crop_size_)));
    out.push_back(std::move(d));
  }
  return out;
}

json to_json(const Triplet& t) {
  auto list = [](const std::vector<FaceRecord>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back(to_json(r, false));
    return a;
  };
  return {{"key", t.key},
          {"modality", to_string(t.modality)},
          {"clip_id", t.clip_id},
          {"source", to_json(t.source, false)},
          {"target", list(t.target)},
          {"decoupling", list(t.decoupling)},
          {"motion", list(t.motion)},
          {"filters",
           {{"source_similarity", t.source_similarity},
            {"decoupling_similarity", t.decoupling_similarity},
            {"landmark_discrepancy", t.landmark_discrepancy}}}};
}

Triplet triplet_from_json(const json& j) {
  auto list = [](const json& a) {
    std::vector<FaceRecord> out;
    for (const auto& r : a) out.push_back(face_record_from_json(r));
    return out;
  };
  Triplet t;
  t.key = j.at("key");
  const std::string m = j.at("modality");
  VF_CHECK(m == "image" || m == "video", ConfigError, "unknown modality '" + m + "'");
  t.modality = m == "image" ? Modality::image : Modality::video;
  t.clip_id = j.value("clip_id", std::string{});
  t.source = face_record_from_json(j.at("source"));
  t.target = list(j.at("target"));
  t.decoupling = list(j.at("decoupling"));
  t.motion = list(j.value("motion", json::array()));
  const auto& f = j.at("filters");
  t.source_similarity = f.at("source_similarity");
  t.decoupling_similarity = f.at("decoupling_similarity");
  t.landmark_discrepancy = f.at("landmark_discrepancy");
  return t;
}

std::vector<Triplet> parse_manifest(const std::string& jsonl) {
  std::vector<Triplet> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(triplet_from_json(json::parse(line)));
  }
  return out;
}

void BuildStats::merge(const BuildStats& o) {
  candidates += o.candidates;
  emitted += o.emitted;
  skipped_clusters += o.skipped_clusters;
  skipped_clips += o.skipped_clips;
  for (const auto& [k, v] : o.rejected) rejected[k] += v;
}

json BuildStats::to_json() const {
  json rej = json::object();
  for (const auto& r : rejection_reasons()) {
    auto it = rejected.find(r);
    rej[r] = it == rejected.end() ? 0 : it->second;
  }
  return {{"candidates", candidates},
          {"emitted", emitted},
          {"skipped_clusters", skipped_clusters},
          {"skipped_clips", skipped_clips},
          {"rejected", rej}};
}

namespace {

// Runs the swapper and the filters on one candidate; returns the rejection
// reason or fills the triplet.
std::optional<std::string> finish_candidate(Triplet& t, const DecouplingSwapper& swapper,
                                            const TripletFilters& f, MediaStore& store,
                                            uint64_t seed) {
  std::vector<DecoupledFace> dec;
  try {
    dec = swapper.swap(t.target, derive_seed(seed, 0xD0, fnv1a(t.key)));
  } catch (const ProviderError& e) {
    log_warn("aidt.swapper_failed", {{"key", t.key}, {"error", e.what()}});
    return "swapper";
  }
  if (dec.size() != t.target.size()) return "swapper";

  double src_sim = 0, dec_sim = 0, disc = 0;
  bool gender_ok = true;
  for (size_t i = 0; i < dec.size(); ++i) {
    src_sim += cosine(t.source.embedding, t.target[i].embedding);
    dec_sim += cosine(dec[i].record.embedding, t.target[i].embedding);
    gender_ok = gender_ok && dec[i].record.gender == t.target[i].gender;
    disc = std::max(disc, landmark_discrepancy(dec[i].record.landmarks, t.target[i].landmarks));
  }
  const auto n = static_cast<double>(dec.size());
  t.source_similarity = src_sim / n;
  t.decoupling_similarity = dec_sim / n;
  t.landmark_discrepancy = disc;
  if (t.source_similarity < f.identity_threshold || t.decoupling_similarity >= f.identity_threshold) {
    return "identity";
  }
  if (!gender_ok) return "gender";
  if (disc > f.landmark_epsilon) return "expression";

  const std::string dir = "decoupling/" + t.key;
  for (size_t i = 0; i < dec.size(); ++i) {
    dec[i].record.media = frame_path(dir, static_cast<int64_t>(i));
    store.put_frame(dec[i].record.media, dec[i].image);
    t.decoupling.push_back(std::move(dec[i].record));
  }
  return std::nullopt;
}

void account(std::vector<Triplet>& out, Triplet&& t, const std::optional<std::string>& reason,
             BuildStats& stats) {
  if (reason) {
    ++stats.rejected[*reason];
    log_info("aidt.rejected", {{"key", t.key}, {"reason", *reason}});
    return;
  }
  ++stats.emitted;
  out.push_back(std::move(t));
}

}  // namespace

std::vector<Triplet> build_image_triplets(const std::vector<FaceRecord>& records,
                                          const std::vector<Cluster>& clusters,
                                          const DecouplingSwapper& swapper,
                                          const TripletFilters& filters, MediaStore& store,
                                          uint64_t seed, BuildStats& stats) {
  std::vector<Triplet> out;
  for (size_t c = 0; c < clusters.size(); ++c) {
    auto members = clusters[c];
    if (members.size() < 2) {
      ++stats.skipped_clusters;
      log_info("aidt.skip_cluster", {{"cluster", c}, {"size", members.size()}});
      continue;
    }
    Rng r(derive_seed(seed, 0xA1, c));
    r.shuffle(members);
    for (size_t i = 0; i + 1 < members.size(); i += 2) {
      Triplet t;
      t.modality = Modality::image;
      t.source = records.at(members[i]);
      t.target = {records.at(members[i + 1])};
      t.key = "img-" + sanitize(t.target.front().media);
      ++stats.candidates;
      const auto reason = finish_candidate(t, swapper, filters, store, seed);
      account(out, std::move(t), reason, stats);
    }
  }
  return out;
}

std::vector<int64_t> admissible_sources(int64_t length, int64_t start, int64_t T, int64_t M) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < length; ++i) {
    if (i < start - M || i >= start + T) out.push_back(i);
  }
  return out;
}

std::vector<Triplet> build_video_triplets(const std::vector<ClipRecords>& clips,
                                          const DecouplingSwapper& swapper,
                                          const TripletFilters& filters, int64_t T, int64_t M,
                                          MediaStore& store, uint64_t seed, BuildStats& stats) {
  VF_CHECK(T >= 1 && M >= 0, ConfigError, "video triplets need T >= 1 and M >= 0");
  std::vector<Triplet> out;
  for (size_t c = 0; c < clips.size(); ++c) {
    const auto& clip = clips[c];
    const auto L = static_cast<int64_t>(clip.frames.size());
    if (L < T + M + 1) {
      ++stats.skipped_clips;
      log_info("aidt.skip_clip", {{"clip", clip.clip_id}, {"length", L}, {"needed", T + M + 1}});
      continue;
    }
    Rng r(derive_seed(seed, 0xB1, c));
    const int64_t start = M + r.index(L - T - M + 1);
    const auto adm = admissible_sources(L, start, T, M);
    const int64_t src = adm[static_cast<size_t>(r.index(static_cast<int64_t>(adm.size())))];
    Triplet t;
    t.modality = Modality::video;
    t.clip_id = clip.clip_id;
    t.key = "vid-" + sanitize(clip.clip_id);
    t.source = clip.frames[static_cast<size_t>(src)];
    for (int64_t i = start; i < start + T; ++i) t.target.push_back(clip.frames[static_cast<size_t>(i)]);
    for (int64_t i = start - M; i < start; ++i) t.motion.push_back(clip.frames[static_cast<size_t>(i)]);
    ++stats.candidates;
    const auto reason = finish_candidate(t, swapper, filters, store, seed);
    account(out, std::move(t), reason, stats);
  }
  return out;
}

std::optional<std::string> validate_triplet(const Triplet& t, const TripletFilters& f) {
  if (t.target.empty() || t.decoupling.size() != t.target.size()) return "structure";
  if (t.modality == Modality::image && t.target.size() != 1) return "structure";
  if (t.modality == Modality::video && t.clip_id.empty()) return "structure";
  auto unit = [](const FaceRecord& r) {
    double s = 0;
    for (double v : r.embedding) s += v * v;
    return std::abs(std::sqrt(s) - 1.0) < 1e-6;
  };
  auto in_bounds = [](const FaceRecord& r) {
    for (const auto& p : r.landmarks) {
      if (p.x < 0 || p.y < 0 || p.x > static_cast<double>(r.width) || p.y > static_cast<double>(r.height)) return false;
    }
    return true;
  };
  std::vector<const FaceRecord*> all{&t.source};
  for (const auto& r : t.target) all.push_back(&r);
  for (const auto& r : t.decoupling) all.push_back(&r);
  for (const auto* r : all) {
    if (!unit(*r) || !in_bounds(*r)) return "record";
  }
  for (size_t i = 0; i < t.target.size(); ++i) {
    const auto& tg = t.target[i];
    const auto& dc = t.decoupling[i];
    if (t.source.identity_label >= 0 && tg.identity_label >= 0 && dc.identity_label >= 0) {
      if (t.source.identity_label != tg.identity_label || dc.identity_label == tg.identity_label) {
        return "identity";
      }
    } else if (cosine(t.source.embedding, tg.embedding) < f.identity_threshold ||
               cosine(dc.embedding, tg.embedding) >= f.identity_threshold) {
      return "identity";
    }
  }
  for (size_t i = 0; i < t.target.size(); ++i) {
    if (t.decoupling[i].gender != t.target[i].gender) return "gender";
  }
  for (size_t i = 0; i < t.target.size(); ++i) {
    if (landmark_discrepancy(t.decoupling[i].landmarks, t.target[i].landmarks) > f.landmark_epsilon) {
      return "expression";
    }
  }
  return std::nullopt;
}

std::string manifest_jsonl(std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) { return a.key < b.key; });
  std::string out;
  for (const auto& t : triplets) out += to_json(t).dump() + "\n";
  return out;
}

namespace {

std::string zero_pad(int64_t v, int width) {
  auto s = std::to_string(v);
  return std::string(static_cast<size_t>(std::max<int64_t>(0, width - static_cast<int64_t>(s.size()))), '0') + s;
}

FaceRecord record_for(const torch::Tensor& img, const synth::RenderedFace& rf,
                      const synth::FaceParams& p, const std::string& media, int64_t frame,
                      const FaceDetector& detector, const IdentityProvider& id, int64_t crop) {
  FaceRecord r;
  r.media = media;
  r.frame = frame;
  r.width = img.size(2);
  r.height = img.size(1);
  r.box = detector.detect(img).value_or(rf.box);
  r.landmarks = rf.landmarks;
  r.gender = p.identity.gender;
  r.identity_label = static_cast<int64_t>(p.identity.id);
  r.params = p;
  r.embedding = to_vec(id.embed(crop_face(img, r.box, crop)));
  return r;
}

}  // namespace

Corpus generate_corpus(const SyntheticCorpusConfig& cfg, MediaStore& store,
                       const FaceDetector& detector, const IdentityProvider& id, int64_t crop_size) {
  VF_CHECK(cfg.identities >= 0 && cfg.clips >= 0 &&
               (cfg.identities == 0 || cfg.images_per_identity >= 1) &&
               (cfg.clips == 0 || cfg.clip_length >= 1) && cfg.image_size >= 16,
           ConfigError, "invalid synthetic corpus configuration");
  Corpus corpus;
  const int64_t S = cfg.image_size;
  for (int64_t i = 0; i < cfg.identities; ++i) {
    const auto code = synth::make_identity(static_cast<uint64_t>(i));
    const std::string dir = "images/id" + zero_pad(i, 4);
    json meta = json::array();
    for (int64_t n = 0; n < cfg.images_per_identity; ++n) {
      Rng r(derive_seed(cfg.seed, 0x11, i, n));
      const auto p = synth::random_still(code, r, S, S);
      const auto rf = synth::render_face(p, S, S);
      const auto img = quantize_frame(rf.image);
      const std::string media = dir + "/" + zero_pad(n, 3) + ".png";
      store.put_frame(media, img);
      auto rec = record_for(img, rf, p, media, 0, detector, id, crop_size);
      meta.push_back(to_json(rec));
      corpus.images.push_back(std::move(rec));
    }
    store.put_text(dir + "/meta.json", meta.dump(1) + "\n");
  }
  for (int64_t c = 0; c < cfg.clips; ++c) {
    const auto code = synth::make_identity(static_cast<uint64_t>(cfg.identities > 0 ? c % cfg.identities : c));
    Rng r(derive_seed(cfg.seed, 0x22, c));
    const auto params = synth::random_clip(code, cfg.clip_length, r, S, S);
    ClipRecords clip;
    clip.clip_id = "clip" + zero_pad(c, 3);
    const std::string dir = "videos/" + clip.clip_id;
    json meta = json::array();
    for (int64_t t = 0; t < cfg.clip_length; ++t) {
      const auto rf = synth::render_face(params[static_cast<size_t>(t)], S, S);
      const auto img = quantize_frame(rf.image);
      const auto media = frame_path(dir, t);
      store.put_frame(media, img);
      auto rec = record_for(img, rf, params[static_cast<size_t>(t)], media, t, detector, id, crop_size);
      meta.push_back(to_json(rec));
      clip.frames.push_back(std::move(rec));
    }
    store.put_text(dir + "/meta.json", meta.dump(1) + "\n");
    corpus.clips.push_back(std::move(clip));
  }
  log_info("ingest.done", {{"images", corpus.images.size()}, {"clips", corpus.clips.size()}});
  return corpus;
}

Corpus load_corpus(const MediaStore& store) {
  Corpus corpus;
  for (const auto& dir : store.list("images")) {
    if (!store.exists(dir + "/meta.json")) continue;
    for (const auto& j : json::parse(store.get_text(dir + "/meta.json"))) {
      corpus.images.push_back(face_record_from_json(j));
    }
  }
  for (const auto& dir : store.list("videos")) {
    if (!store.exists(dir + "/meta.json")) continue;
    ClipRecords clip;
    clip.clip_id = dir.substr(dir.find_last_of('/') + 1);
    for (const auto& j : json::parse(store.get_text(dir + "/meta.json"))) {
      clip.frames.push_back(face_record_from_json(j));
    }
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

AidtBuild build_aidt(const Corpus& corpus, const DecouplingSwapper& swapper, const AidtConfig& cfg,
                     MediaStore& out) {
  AidtBuild b;
  b.clusters = cluster_identities(corpus.images, cfg.filters.identity_threshold);
  auto img = build_image_triplets(corpus.images, b.clusters, swapper, cfg.filters, out, cfg.seed, b.stats);
  auto vid = build_video_triplets(corpus.clips, swapper, cfg.filters, cfg.frames, cfg.motion_frames,
                                  out, cfg.seed, b.stats);
  b.triplets = std::move(img);
  b.triplets.insert(b.triplets.end(), std::make_move_iterator(vid.begin()),
                    std::make_move_iterator(vid.end()));
  std::sort(b.triplets.begin(), b.triplets.end(),
            [](const Triplet& x, const Triplet& y) { return x.key < y.key; });
  out.put_text("aidt_manifest.jsonl", manifest_jsonl(b.triplets));
  auto summary = b.stats.to_json();
  summary["clusters"] = b.clusters.size();
  summary["image_triplets"] = std::count_if(b.triplets.begin(), b.triplets.end(),
                                            [](const Triplet& t) { return t.modality == Modality::image; });
  summary["video_triplets"] = std::count_if(b.triplets.begin(), b.triplets.end(),
                                            [](const Triplet& t) { return t.modality == Modality::video; });
  out.put_text("aidt_summary.json", summary.dump(1) + "\n");
  log_info("aidt.done", summary);
  return b;
}

TrainingExample to_training_example(const Triplet& t, const MediaStore& corpus,
                                    const MediaStore& decoupling) {
  auto load = [](const MediaStore& s, const std::vector<FaceRecord>& rs) {
    std::vector<torch::Tensor> f;
    for (const auto& r : rs) f.push_back(s.get_frame(r.media));
    return FrameSeq(torch::stack(f));
  };
  TrainingExample ex;
  ex.key = t.key;
  ex.modality = t.modality;
  ex.source = FrameSeq(corpus.get_frame(t.source.media).unsqueeze(0));
  ex.target = load(corpus, t.target);
  ex.decoupling = load(decoupling, t.decoupling);
  if (!t.motion.empty()) ex.motion = load(corpus, t.motion);
  ex.source_tag = t.source.media;
  ex.attribute_tag = t.decoupling.front().media;
  return ex;
}

}  // namespace vidswap

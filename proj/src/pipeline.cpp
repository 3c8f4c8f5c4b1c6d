#include "vidswap/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "vidswap/log.hpp"

namespace vidswap {

using nlohmann::json;

ConditionProviders desk_condition_providers(int64_t crop_size) {
  ConditionProviders p;
  p.detector = std::make_shared<ChromaFaceDetector>();
  p.renderer = std::make_shared<EllipsoidRenderer>();
  p.embeddings = make_desk_providers(crop_size);
  return p;
}

FrameSeq render_clip(const std::vector<synth::FaceParams>& params, int64_t size) {
  std::vector<torch::Tensor> frames;
  for (const auto& p : params) frames.push_back(synth::render_face(p, size, size).image);
  return FrameSeq(torch::stack(frames));
}

std::vector<FrameSeq> synthetic_clips(int64_t count, int64_t length, int64_t size, uint64_t seed,
                                      uint64_t identity_base) {
  std::vector<FrameSeq> out;
  for (int64_t i = 0; i < count; ++i) {
    Rng r(derive_seed(seed, 0x5C, i));
    const auto id = synth::make_identity(identity_base + static_cast<uint64_t>(i));
    out.push_back(render_clip(synth::random_clip(id, length, r, size, size), size));
  }
  return out;
}

namespace {

void report_step(int64_t k, const StepReport& r, const Trainer& t, const RunConfig& cfg,
                 int64_t total) {
  if (cfg.log_every <= 0) return;
  if (k % cfg.log_every != 0 && k + 1 != total) return;
  log_info("train.step", {{"step", k},
                          {"loss", r.loss},
                          {"lr", t.stage().learning_rate},
                          {"modality", to_string(r.modality)}});
}

}  // namespace

std::vector<StepReport> run_diffusion(Trainer& trainer, const std::vector<PreparedExample>& images,
                                      const std::vector<PreparedExample>& videos,
                                      const RunConfig& cfg, const StepCallback& on_step) {
  const auto& st = trainer.stage();
  const double p_video = st.policy == ModalityPolicy::image_only ? 0.0 : st.p_video;
  HybridSampler sampler(static_cast<int64_t>(images.size()), static_cast<int64_t>(videos.size()),
                        p_video, st.batch_size, cfg.seed);
  std::vector<StepReport> out;
  for (int64_t k = 0; k < cfg.steps; ++k) {
    const auto b = sampler.batch(k);
    const auto& pool = b.modality == Modality::image ? images : videos;
    std::vector<const PreparedExample*> batch;
    for (auto i : b.indices) batch.push_back(&pool.at(static_cast<size_t>(i)));
    auto r = trainer.diffusion_step(batch, b.modality, b.noise_seed);
    report_step(k, r, trainer, cfg, cfg.steps);
    if (on_step) on_step(k, r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<StepReport> run_vae(Trainer& trainer, const std::vector<FrameSeq>& images,
                                const std::vector<FrameSeq>& clips, const RunConfig& cfg,
                                const StepCallback& on_step) {
  const auto& st = trainer.stage();
  const double p_video = st.policy == ModalityPolicy::image_only ? 0.0 : st.p_video;
  HybridSampler sampler(static_cast<int64_t>(images.size()), static_cast<int64_t>(clips.size()),
                        p_video, st.batch_size, cfg.seed);
  std::vector<StepReport> out;
  for (int64_t k = 0; k < cfg.steps; ++k) {
    const auto b = sampler.batch(k);
    const auto& pool = b.modality == Modality::image ? images : clips;
    std::vector<torch::Tensor> items;
    for (auto i : b.indices) items.push_back(pool.at(static_cast<size_t>(i)).data());
    auto r = trainer.vae_step(torch::stack(items), b.noise_seed);
    report_step(k, r, trainer, cfg, cfg.steps);
    if (on_step) on_step(k, r);
    out.push_back(std::move(r));
  }
  return out;
}

ReconstructionScores reconstruction_scores(VidFaceVAE& vae, const std::vector<FrameSeq>& clips) {
  VF_CHECK(!clips.empty(), ContractError, "no clips to score");
  torch::NoGradGuard ng;
  ReconstructionScores s;
  for (const auto& c : clips) {
    auto out = vae->forward(c.data().unsqueeze(0), false);
    const FrameSeq rec(out.recon.squeeze(0).clamp(-1, 1));
    s.l1 += (rec.data() - c.data()).abs().mean().item<double>();
    s.ssim += ssim(rec, c);
    s.psnr += psnr(rec, c);
    s.lpips += perceptual_distance(rec, c);
  }
  const auto n = static_cast<double>(clips.size());
  s.l1 /= n;
  s.ssim /= n;
  s.psnr /= n;
  s.lpips /= n;
  return s;
}

std::vector<VaeAblationRow> ablate_vae(const VaeAblationConfig& cfg) {
  const auto train = synthetic_clips(cfg.train_clips, cfg.clip_length, cfg.image_size,
                                     derive_seed(cfg.seed, 0x7A), 5000);
  const auto heldout = synthetic_clips(cfg.heldout_clips, cfg.clip_length, cfg.image_size,
                                       derive_seed(cfg.seed, 0x7B), 6000);
  const std::vector<std::pair<bool, bool>> variants{{false, false}, {false, true}, {true, true}};
  // Shared initialization: every variant copies the weights it has in common
  // with one full (2+1)D/(2+1)D reference.
  torch::manual_seed(derive_seed(cfg.seed, 0x7C));
  VidFaceVAE reference(cfg.model.vae);
  std::vector<VaeAblationRow> rows;
  for (const auto& [enc, dec] : variants) {
    VaeAblationRow row;
    row.encoder_temporal = enc;
    row.decoder_temporal = dec;
    row.name = std::string(enc ? "(2+1)D" : "2D") + "/" + (dec ? "(2+1)D" : "2D");
    auto mc = cfg.model;
    mc.vae.encoder_temporal = enc;
    mc.vae.decoder_temporal = dec;
    mc.image_size = cfg.image_size;
    SwapModel model(mc);
    {
      torch::NoGradGuard ng;
      copy_matching_parameters(*reference, *model->vae);
    }
    auto stage = make_stage(1);
    stage.learning_rate = cfg.learning_rate;
    stage.batch_size = cfg.batch;
    stage.policy = ModalityPolicy::hybrid;
    stage.p_video = 1.0;
    Trainer trainer(model, stage, cfg.seed);
    run_vae(trainer, {}, train, {cfg.steps, cfg.seed, 0});
    row.scores = reconstruction_scores(model->vae, heldout);
    log_info("ablate_vae.row", {{"variant", row.name},
                                {"l1", row.scores.l1},
                                {"ssim", row.scores.ssim},
                                {"psnr", row.scores.psnr},
                                {"lpips", row.scores.lpips}});
    rows.push_back(row);
  }
  return rows;
}

std::vector<MixerAblationRow> ablate_mixer(SwapModel& model,
                                           const std::vector<FrameSeq>& sources,
                                           const std::vector<FrameSeq>& targets,
                                           const std::vector<double>& grid,
                                           const ConditionProviders& providers, int64_t steps,
                                           uint64_t seed) {
  VF_CHECK(sources.size() == targets.size() && !sources.empty(), ContractError,
           "mixer ablation needs paired sources and targets");
  const auto sched = make_schedule(model->config().schedule);
  EstimatedAttributeProvider pose(providers.detector, EstimatedAttributeProvider::Kind::pose);
  EstimatedAttributeProvider expr(providers.detector, EstimatedAttributeProvider::Kind::expression);
  const auto& id = *providers.embeddings.identity;
  const int64_t crop = providers.embeddings.crop_size;
  auto embed = [&](const torch::Tensor& frame) -> std::optional<torch::Tensor> {
    auto box = providers.detector->detect(frame);
    if (!box) return std::nullopt;
    return id.embed(crop_face(frame, *box, crop));
  };
  std::vector<MixerAblationRow> rows;
  for (double wt : grid) {
    for (double wa : grid) {
      MixerAblationRow row{wt, wa, 0, 0, 0};
      double sim = 0;
      int64_t sim_n = 0;
      for (size_t i = 0; i < sources.size(); ++i) {
        SwapOptions opts;
        opts.steps = steps;
        opts.seed = derive_seed(seed, i);
        opts.mixer = MixerWeights{model->config().mixer.w_id, wt, wa};
        const auto out = swap_video(sources[i], targets[i], model, sched, providers, opts);
        const auto src = embed(sources[i].data()[0]);
        VF_CHECK(src.has_value(), ContractError, "no face in mixer-ablation source");
        for (int64_t t = 0; t < out.frame_count(); ++t) {
          if (auto e = embed(out.data()[t])) {
            sim += torch::dot(*e, *src).item<double>();
            ++sim_n;
          }
        }
        const auto err = attribute_error(out, targets[i], pose, expr);
        row.pose_error += err.pose_l2;
        row.expr_error += err.expr_l2;
      }
      row.identity_similarity = sim_n ? sim / static_cast<double>(sim_n) : 0.0;
      row.pose_error /= static_cast<double>(sources.size());
      row.expr_error /= static_cast<double>(sources.size());
      log_info("ablate_mixer.row", {{"w_tex", wt},
                                    {"w_attr", wa},
                                    {"identity_similarity", row.identity_similarity},
                                    {"pose", row.pose_error},
                                    {"expr", row.expr_error}});
      rows.push_back(row);
    }
  }
  return rows;
}

void write_benchmark(MediaStore& store, int64_t count, int64_t length, int64_t size, uint64_t seed) {
  std::string manifest;
  for (int64_t i = 0; i < count; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%03lld", static_cast<long long>(i));
    Rng r(derive_seed(seed, 0xBE, i));
    const auto src_id = synth::make_identity(7000 + static_cast<uint64_t>(i));
    const auto tgt_id = synth::make_identity(8000 + static_cast<uint64_t>(i));
    const auto src = synth::render_face(synth::random_still(src_id, r, size, size), size, size);
    const std::string src_path = std::string("bench/sources/s") + name + ".png";
    const std::string tgt_dir = std::string("bench/targets/v") + name;
    store.put_frame(src_path, src.image);
    write_frames(store, tgt_dir, render_clip(synth::random_clip(tgt_id, length, r, size, size), size));
    manifest += json{{"video", std::string("v") + name}, {"source", src_path}, {"target", tgt_dir}}.dump() + "\n";
  }
  store.put_text("bench/manifest.jsonl", manifest);
}

std::vector<BenchmarkEntry> parse_benchmark_manifest(const std::string& jsonl) {
  std::vector<BenchmarkEntry> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("video"), j.at("source"), j.at("target")});
  }
  VF_CHECK(!out.empty(), ConfigError, "benchmark manifest is empty");
  return out;
}

std::map<std::string, double> evaluate_benchmark(const MediaStore& pred, const MediaStore& ref,
                                                 const std::vector<BenchmarkEntry>& entries,
                                                 const ConditionProviders& providers) {
  std::vector<FrameSeq> real, fake, sources;
  for (const auto& e : entries) {
    real.push_back(read_frames(ref, e.target));
    fake.push_back(read_frames(pred, e.video));
    VF_CHECK(real.back().frame_count() == fake.back().frame_count(), ContractError,
             "prediction " + e.video + " has a different frame count from its reference");
    sources.push_back(FrameSeq(ref.get_frame(e.source).unsqueeze(0)));
  }
  RandomProjectionExtractor extractor;
  std::map<std::string, double> rep;
  rep["FVD_32"] = fvd(real, fake, extractor, 32);
  rep["FVD_128"] = fvd(real, fake, extractor, 128);
  const auto ret = id_retrieval(fake, sources, *providers.detector, *providers.embeddings.identity,
                                providers.embeddings.crop_size);
  rep["top1"] = ret.top1;
  rep["top5"] = ret.top5;
  rep["id_skipped_frames"] = static_cast<double>(ret.skipped_frames);
  EstimatedAttributeProvider pose(providers.detector, EstimatedAttributeProvider::Kind::pose);
  EstimatedAttributeProvider expr(providers.detector, EstimatedAttributeProvider::Kind::expression);
  double p = 0, x = 0;
  int64_t skipped = 0, counted = 0;
  for (size_t i = 0; i < real.size(); ++i) {
    const auto e = attribute_error(fake[i], real[i], pose, expr);
    p += e.pose_l2 * static_cast<double>(e.counted_frames);
    x += e.expr_l2 * static_cast<double>(e.counted_frames);
    counted += e.counted_frames;
    skipped += e.skipped_frames;
  }
  rep["pose"] = counted ? p / static_cast<double>(counted) : 0.0;
  rep["expr"] = counted ? x / static_cast<double>(counted) : 0.0;
  rep["attr_skipped_frames"] = static_cast<double>(skipped);
  return rep;
}

}  // namespace vidswap

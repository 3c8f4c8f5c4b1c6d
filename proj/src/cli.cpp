#include "vidswap/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "vidswap/log.hpp"
#include "vidswap/pipeline.hpp"

#ifndef VIDSWAP_VERSION
#define VIDSWAP_VERSION "dev"
#endif

namespace vidswap {

namespace fs = std::filesystem;
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

std::string hex(uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  VF_CHECK(out.good(), ProviderError, "cannot write " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  VF_CHECK(in.good(), ProviderError, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Effective options (flags over config over defaults) as canonical text.
void write_record(const fs::path& path, const CLI::App& sub, uint64_t seed,
                  const json& extra = json::object()) {
  const std::string opts = sub.config_to_str(true, false);
  json rec{{"command", sub.get_name()},
           {"seed", seed},
           {"code_version", VIDSWAP_VERSION},
           {"options", opts},
           {"config_hash", hex(fnv1a(opts + extra.dump()))}};
  for (auto it = extra.begin(); it != extra.end(); ++it) rec[it.key()] = it.value();
  write_file(path, rec.dump(1) + "\n");
}

ModelConfig model_config_or_default(const std::string& path) {
  if (path.empty()) return ModelConfig{};
  auto cfg = model_config_from_json(json::parse(read_file(path)));
  cfg.validate();
  return cfg;
}

torch::Tensor load_png(const fs::path& p) {
  const auto s = read_file(p);
  return decode_png(std::vector<uint8_t>(s.begin(), s.end()));
}

std::vector<FrameSeq> corpus_clip_windows(const Corpus& corpus, const MediaStore& store, int64_t T) {
  std::vector<FrameSeq> out;
  for (const auto& c : corpus.clips) {
    std::vector<torch::Tensor> frames;
    for (const auto& r : c.frames) frames.push_back(store.get_frame(r.media));
    for (size_t s = 0; s + static_cast<size_t>(T) <= frames.size(); s += static_cast<size_t>(T)) {
      out.push_back(FrameSeq(torch::stack(std::vector<torch::Tensor>(
          frames.begin() + static_cast<std::ptrdiff_t>(s),
          frames.begin() + static_cast<std::ptrdiff_t>(s) + T))));
    }
  }
  return out;
}

struct IngestArgs {
  std::string out;
  SyntheticCorpusConfig corpus;
  int64_t bench = 4, bench_length = 32, crop = 48;
};

int cmd_ingest(const IngestArgs& a, const CLI::App& sub) {
  DiskStore store(a.out);
  auto providers = desk_condition_providers(a.crop);
  generate_corpus(a.corpus, store, *providers.detector, *providers.embeddings.identity, a.crop);
  if (a.bench > 0) write_benchmark(store, a.bench, a.bench_length, a.corpus.image_size, a.corpus.seed);
  write_record(fs::path(a.out) / "run_record.json", sub, a.corpus.seed);
  return 0;
}

struct AidtArgs {
  std::string corpus, out;
  AidtConfig cfg;
  int64_t crop = 48;
};

int cmd_build_aidt(const AidtArgs& a, const CLI::App& sub) {
  DiskStore in(a.corpus), out(a.out);
  const auto corpus = load_corpus(in);
  VF_CHECK(!corpus.images.empty() || !corpus.clips.empty(), ConfigError,
           "no corpus found under " + a.corpus);
  auto providers = desk_condition_providers(a.crop);
  SyntheticSwapper swapper(providers.embeddings.identity, a.crop);
  const auto build = build_aidt(corpus, swapper, a.cfg, out);
  int64_t invalid = 0;
  for (const auto& t : build.triplets) {
    if (auto why = validate_triplet(t, a.cfg.filters)) {
      ++invalid;
      log_warn("aidt.invalid_triplet", {{"key", t.key}, {"reason", *why}});
    }
  }
  VF_CHECK(invalid == 0, Error, std::to_string(invalid) + " emitted triplets failed validation");
  write_record(fs::path(a.out) / "run_record.json", sub, a.cfg.seed);
  return 0;
}

struct TrainArgs {
  int stage = 0;
  std::string corpus, aidt, out, resume, init, model_config;
  int64_t steps = 100, crop = 48, log_every = 10;
  std::optional<double> lr, p_video, zero_motion_prob;
  std::optional<int64_t> batch;
  uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  auto stage = make_stage(a.stage);
  if (a.lr) stage.learning_rate = *a.lr;
  if (a.batch) stage.batch_size = *a.batch;
  if (a.p_video) stage.p_video = *a.p_video;
  if (a.zero_motion_prob) stage.zero_motion_prob = *a.zero_motion_prob;

  const std::string weights = !a.resume.empty() ? a.resume : a.init;
  SwapModel model = weights.empty() ? SwapModel(model_config_or_default(a.model_config))
                                         : load_checkpoint(weights);
  Trainer trainer(model, stage, a.seed);
  if (!a.resume.empty()) trainer.resume(a.resume);
  const auto& mc = model->config();
  const RunConfig run{a.steps, a.seed, a.log_every};
  VF_CHECK(!a.corpus.empty(), ConfigError, "train needs --corpus");
  DiskStore corpus_store(a.corpus);
  const auto corpus = load_corpus(corpus_store);

  std::vector<StepReport> reports;
  if (a.stage == 1) {
    std::vector<FrameSeq> images;
    for (const auto& r : corpus.images) images.push_back(FrameSeq(corpus_store.get_frame(r.media).unsqueeze(0)));
    reports = run_vae(trainer, images, corpus_clip_windows(corpus, corpus_store, mc.frames), run);
  } else {
    VF_CHECK(!a.aidt.empty(), ConfigError, "stages 2 and 3 need --aidt");
    DiskStore aidt_store(a.aidt);
    const auto triplets = parse_manifest(aidt_store.get_text("aidt_manifest.jsonl"));
    auto providers = desk_condition_providers(a.crop);
    std::vector<PreparedExample> images, videos;
    for (const auto& t : triplets) {
      auto ex = to_training_example(t, corpus_store, aidt_store);
      if (ex.modality == Modality::video && ex.target.frame_count() != mc.frames) continue;
      auto p = prepare_example(model, ex, providers, mc.mask);
      (p.modality == Modality::image ? images : videos).push_back(std::move(p));
    }
    log_info("train.data", {{"image_examples", images.size()}, {"video_examples", videos.size()}});
    reports = run_diffusion(trainer, images, videos, run);
  }
  trainer.save(a.out);
  write_record(a.out + ".record.json", sub, a.seed,
               {{"model_config_hash", hex(config_hash(to_json(mc)))},
                {"final_loss", reports.empty() ? 0.0 : reports.back().loss}});
  return 0;
}

struct SwapArgs {
  std::string source, target, ckpt, out;
  int64_t steps = 32, feather = 3, crop = 48;
  uint64_t seed = 0;
  std::optional<double> w_id, w_tex, w_attr;
};

int cmd_swap(const SwapArgs& a, const CLI::App& sub) {
  auto model = load_checkpoint(a.ckpt);
  model->eval();
  const auto sched = make_schedule(model->config().schedule);
  SwapOptions opts;
  opts.steps = a.steps;
  opts.seed = a.seed;
  opts.feather = a.feather;
  auto mix = model->config().mixer;
  if (a.w_id) mix.w_id = *a.w_id;
  if (a.w_tex) mix.w_tex = *a.w_tex;
  if (a.w_attr) mix.w_attr = *a.w_attr;
  opts.mixer = mix;
  DiskStore target_store(a.target);
  const auto target = read_frames(target_store, ".");
  const FrameSeq source(load_png(a.source).unsqueeze(0));
  const auto out = swap_video(source, target, model, sched, desk_condition_providers(a.crop), opts);
  DiskStore out_store(a.out);
  write_frames(out_store, ".", out);
  write_record(fs::path(a.out) / "run_record.json", sub, a.seed,
               {{"model_config_hash", hex(config_hash(to_json(model->config())))}});
  return 0;
}

struct EvalArgs {
  std::string pred, ref, manifest, report;
  int64_t crop = 48;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  DiskStore pred(a.pred), ref(a.ref);
  const auto entries = parse_benchmark_manifest(read_file(a.manifest));
  const auto rep = evaluate_benchmark(pred, ref, entries, desk_condition_providers(a.crop));
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed;
  for (const char* k : {"FVD_32", "FVD_128", "top1", "top5", "pose", "expr", "id_skipped_frames",
                        "attr_skipped_frames"}) {
    ss << k << "\t" << rep.at(k) << "\n";
  }
  write_file(a.report, ss.str());
  std::cout << ss.str();
  write_record(a.report + ".record.json", sub, 0);
  return 0;
}

struct AblateVaeArgs {
  std::string out, model_config;
  VaeAblationConfig cfg;
};

int cmd_ablate_vae(AblateVaeArgs a, const CLI::App& sub) {
  a.cfg.model = model_config_or_default(a.model_config);
  const auto rows = ablate_vae(a.cfg);
  std::ostringstream ss;
  ss << "variant\tL1\tSSIM\tPSNR\tLPIPS\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) {
    ss << r.name << "\t" << r.scores.l1 << "\t" << r.scores.ssim << "\t" << r.scores.psnr << "\t"
       << r.scores.lpips << "\n";
  }
  write_file(a.out, ss.str());
  std::cout << ss.str();
  write_record(a.out + ".record.json", sub, a.cfg.seed);
  return 0;
}

struct AblateMixerArgs {
  std::string out, ckpt, model_config;
  std::vector<double> grid{0.0, 0.5, 1.0};
  int64_t pairs = 2, length = 8, steps = 32, crop = 48;
  uint64_t seed = 0;
};

int cmd_ablate_mixer(const AblateMixerArgs& a, const CLI::App& sub) {
  SwapModel model = a.ckpt.empty() ? SwapModel(model_config_or_default(a.model_config))
                                        : load_checkpoint(a.ckpt);
  model->eval();
  const int64_t S = model->config().image_size;
  std::vector<FrameSeq> sources, targets;
  for (int64_t i = 0; i < a.pairs; ++i) {
    Rng r(derive_seed(a.seed, 0x3F, i));
    const auto src = synth::make_identity(9000 + static_cast<uint64_t>(i));
    sources.push_back(FrameSeq(synth::render_face(synth::random_still(src, r, S, S), S, S).image.unsqueeze(0)));
  }
  targets = synthetic_clips(a.pairs, a.length, S, derive_seed(a.seed, 0x40), 9500);
  const auto rows = ablate_mixer(model, sources, targets, a.grid, desk_condition_providers(a.crop),
                                 a.steps, a.seed);
  std::ostringstream ss;
  ss << "w_tex\tw_attr\tidentity_similarity\tpose\texpr\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) {
    ss << r.w_tex << "\t" << r.w_attr << "\t" << r.identity_similarity << "\t" << r.pose_error
       << "\t" << r.expr_error << "\n";
  }
  write_file(a.out, ss.str());
  std::cout << ss.str();
  write_record(a.out + ".record.json", sub, a.seed);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Video face swapping at desk scale", "vidswap"};
  app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.set_version_flag("--version", VIDSWAP_VERSION);

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "render a synthetic corpus and benchmark");
  s_ingest->add_option("--out", ingest.out, "corpus directory")->required();
  s_ingest->add_option("--identities", ingest.corpus.identities)->capture_default_str();
  s_ingest->add_option("--images-per-identity", ingest.corpus.images_per_identity)->capture_default_str();
  s_ingest->add_option("--clips", ingest.corpus.clips)->capture_default_str();
  s_ingest->add_option("--clip-length", ingest.corpus.clip_length)->capture_default_str();
  s_ingest->add_option("--image-size", ingest.corpus.image_size)->capture_default_str();
  s_ingest->add_option("--bench", ingest.bench, "benchmark pairs")->capture_default_str();
  s_ingest->add_option("--bench-length", ingest.bench_length)->capture_default_str();
  s_ingest->add_option("--crop", ingest.crop)->capture_default_str();
  s_ingest->add_option("--seed", ingest.corpus.seed)->capture_default_str();

  AidtArgs aidt;
  auto* s_aidt = app.add_subcommand("build-aidt", "build the triplet dataset");
  s_aidt->add_option("--corpus", aidt.corpus)->required();
  s_aidt->add_option("--out", aidt.out)->required();
  s_aidt->add_option("--identity-threshold", aidt.cfg.filters.identity_threshold)->capture_default_str();
  s_aidt->add_option("--landmark-epsilon", aidt.cfg.filters.landmark_epsilon)->capture_default_str();
  s_aidt->add_option("--frames", aidt.cfg.frames)->capture_default_str();
  s_aidt->add_option("--motion-frames", aidt.cfg.motion_frames)->capture_default_str();
  s_aidt->add_option("--crop", aidt.crop)->capture_default_str();
  s_aidt->add_option("--seed", aidt.cfg.seed)->capture_default_str();

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "run one training stage");
  s_train->add_option("--stage", train.stage)->required()->check(CLI::IsMember({1, 2, 3}));
  s_train->add_option("--corpus", train.corpus)->required();
  s_train->add_option("--aidt", train.aidt, "triplet dataset (stages 2, 3)");
  s_train->add_option("--out", train.out, "checkpoint to write")->required();
  s_train->add_option("--resume", train.resume, "continue from a checkpoint");
  s_train->add_option("--init", train.init, "weights from an earlier stage");
  s_train->add_option("--model-config", train.model_config, "JSON model configuration");
  s_train->add_option("--steps", train.steps)->capture_default_str();
  s_train->add_option("--lr", train.lr);
  s_train->add_option("--batch", train.batch);
  s_train->add_option("--p-video", train.p_video);
  s_train->add_option("--zero-motion-prob", train.zero_motion_prob);
  s_train->add_option("--log-every", train.log_every)->capture_default_str();
  s_train->add_option("--crop", train.crop)->capture_default_str();
  s_train->add_option("--seed", train.seed)->capture_default_str();

  SwapArgs swap;
  auto* s_swap = app.add_subcommand("swap", "swap the source identity into a target video");
  s_swap->add_option("--source", swap.source, "source image (png)")->required();
  s_swap->add_option("--target", swap.target, "directory of numbered frames")->required();
  s_swap->add_option("--ckpt", swap.ckpt)->required();
  s_swap->add_option("--out", swap.out)->required();
  s_swap->add_option("--steps", swap.steps)->capture_default_str();
  s_swap->add_option("--seed", swap.seed)->capture_default_str();
  s_swap->add_option("--feather", swap.feather)->capture_default_str();
  s_swap->add_option("--w-id", swap.w_id);
  s_swap->add_option("--w-tex", swap.w_tex);
  s_swap->add_option("--w-attr", swap.w_attr);
  s_swap->add_option("--crop", swap.crop)->capture_default_str();

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "score swapped videos against the benchmark");
  s_eval->add_option("--pred", ev.pred)->required();
  s_eval->add_option("--ref", ev.ref)->required();
  s_eval->add_option("--manifest", ev.manifest)->required();
  s_eval->add_option("--report", ev.report)->required();
  s_eval->add_option("--crop", ev.crop)->capture_default_str();

  AblateVaeArgs av;
  auto* s_av = app.add_subcommand("ablate-vae", "compare 2D and (2+1)D VAE variants");
  s_av->add_option("--out", av.out, "report table")->required();
  s_av->add_option("--model-config", av.model_config);
  s_av->add_option("--steps", av.cfg.steps)->capture_default_str();
  s_av->add_option("--train-clips", av.cfg.train_clips)->capture_default_str();
  s_av->add_option("--heldout-clips", av.cfg.heldout_clips)->capture_default_str();
  s_av->add_option("--clip-length", av.cfg.clip_length)->capture_default_str();
  s_av->add_option("--image-size", av.cfg.image_size)->capture_default_str();
  s_av->add_option("--batch", av.cfg.batch)->capture_default_str();
  s_av->add_option("--lr", av.cfg.learning_rate)->capture_default_str();
  s_av->add_option("--seed", av.cfg.seed)->capture_default_str();

  AblateMixerArgs am;
  auto* s_am = app.add_subcommand("ablate-mixer", "sweep texture and attribute weights");
  s_am->add_option("--out", am.out, "report table")->required();
  s_am->add_option("--ckpt", am.ckpt);
  s_am->add_option("--model-config", am.model_config);
  s_am->add_option("--grid", am.grid)->delimiter(',')->capture_default_str();
  s_am->add_option("--pairs", am.pairs)->capture_default_str();
  s_am->add_option("--length", am.length)->capture_default_str();
  s_am->add_option("--steps", am.steps)->capture_default_str();
  s_am->add_option("--crop", am.crop)->capture_default_str();
  s_am->add_option("--seed", am.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*s_ingest) return cmd_ingest(ingest, *s_ingest);
    if (*s_aidt) return cmd_build_aidt(aidt, *s_aidt);
    if (*s_train) return cmd_train(train, *s_train);
    if (*s_swap) return cmd_swap(swap, *s_swap);
    if (*s_eval) return cmd_eval(ev, *s_eval);
    if (*s_av) return cmd_ablate_vae(av, *s_av);
    if (*s_am) return cmd_ablate_mixer(am, *s_am);
  } catch (const std::exception& e) {
    log_record("error", "command.failed", {{"error", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace vidswap

#include "vidswap/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "vidswap/errors.hpp"
#include "vidswap/log.hpp"
#include "vidswap/random.hpp"

namespace vidswap {

std::string to_string(Modality m) { return m == Modality::image ? "image" : "video"; }

bool StageConfig::trains(const std::string& group) const {
  return std::find(trainable.begin(), trainable.end(), group) != trainable.end();
}

StageConfig make_stage(int stage) {
  StageConfig s;
  s.stage = stage;
  switch (stage) {
    case 1:
      s.learning_rate = 5e-6;
      s.batch_size = 32;
      s.trainable = {"vae"};
      s.frozen = {"backbone.spatial", "backbone.temporal", "refnet", "face_encoder"};
      s.policy = ModalityPolicy::hybrid;
      s.p_video = 0.5;
      s.vae_weights = {1.0, 0.1, 1e-6};
      break;
    case 2:
      s.learning_rate = 1e-5;
      s.batch_size = 32;
      s.trainable = {"backbone.spatial", "face_encoder"};
      s.frozen = {"vae", "backbone.temporal", "refnet"};
      s.policy = ModalityPolicy::image_only;
      s.p_video = 0.0;
      break;
    case 3:
      s.learning_rate = 1e-5;
      s.batch_size = 32;
      s.trainable = {"backbone.spatial", "backbone.temporal", "refnet", "face_encoder"};
      s.frozen = {"vae"};
      s.policy = ModalityPolicy::hybrid;
      s.p_video = 0.5;
      break;
    default:
      throw ConfigError("unknown training stage " + std::to_string(stage));
  }
  return s;
}

HybridSampler::HybridSampler(int64_t image_pool, int64_t video_pool, double p_video,
                             int64_t batch_size, uint64_t seed)
    : image_pool_(image_pool),
      video_pool_(video_pool),
      p_video_(p_video),
      batch_size_(batch_size),
      seed_(seed) {
  VF_CHECK(p_video >= 0.0 && p_video <= 1.0, ConfigError, "p_video must lie in [0, 1]");
  VF_CHECK(batch_size >= 1, ConfigError, "batch size must be >= 1");
  VF_CHECK(image_pool + video_pool > 0, ConfigError, "sampler has no examples");
}

HybridBatch HybridSampler::batch(int64_t k) const {
  Rng rng(derive_seed(seed_, 0x5A, static_cast<uint64_t>(k)));
  HybridBatch b;
  b.modality = rng.bernoulli(p_video_) ? Modality::video : Modality::image;
  const int64_t pool = b.modality == Modality::video ? video_pool_ : image_pool_;
  if (pool == 0) {
    b.modality = b.modality == Modality::video ? Modality::image : Modality::video;
    b.fell_back = true;
    log_warn("sampler_empty_pool", {{"batch", k}, {"using", to_string(b.modality)}});
  }
  const int64_t n = b.modality == Modality::video ? video_pool_ : image_pool_;
  // Without replacement while the pool lasts.
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  rng.shuffle(order);
  for (int64_t i = 0; i < batch_size_; ++i) b.indices.push_back(order[static_cast<size_t>(i % n)]);
  b.noise_seed = derive_seed(seed_, 0xE5, static_cast<uint64_t>(k));
  return b;
}

PreparedExample prepare_example(SwapModel& model, const TrainingExample& ex,
                                const ConditionProviders& providers, const MaskConfig& mask) {
  VF_CHECK(ex.target.frame_count() == ex.decoupling.frame_count(), ContractError,
           "decoupling clip must match the target length");
  if (ex.modality == Modality::image) {
    VF_CHECK(ex.target.frame_count() == 1, ContractError, "image examples have one frame");
  } else {
    VF_CHECK(!ex.motion.empty(), ContractError, "video examples need motion frames");
  }
  auto bundle = build_condition(ex.source, ex.target, ex.motion, providers, mask, &ex.decoupling,
                                ex.source_tag, ex.attribute_tag);
  PreparedExample p;
  p.key = ex.key;
  p.modality = ex.modality;
  p.z0 = encode_latents(model->vae, ex.target.data());
  p.cond = encode_condition(model->vae, bundle);
  p.features = std::move(bundle.features);
  if (ex.modality == Modality::video) p.motion_latent = encode_latents(model->vae, ex.motion.data());
  return p;
}

Trainer::Trainer(SwapModel model, StageConfig stage, uint64_t seed)
    : model_(std::move(model)), stage_(std::move(stage)), seed_(seed) {
  sched_ = make_schedule(model_->config().schedule);
  for (auto& p : model_->parameters()) p.set_requires_grad(false);
  for (const auto& g : stage_.trainable) {
    for (auto& p : model_->group(g)) p.set_requires_grad(true);
  }
  auto params = trainable_parameters();
  VF_CHECK(!params.empty(), ConfigError, "stage has no trainable parameters");
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      params, torch::optim::AdamWOptions(stage_.learning_rate).weight_decay(stage_.weight_decay));
}

std::vector<torch::Tensor> Trainer::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : model_->parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

int64_t Trainer::optimizer_state_count() const {
  return static_cast<int64_t>(optimizer_->state().size());
}

torch::Tensor Trainer::diffusion_forward(const std::vector<const PreparedExample*>& batch,
                                         Modality modality, uint64_t noise_seed,
                                         StepReport* report) {
  VF_CHECK(stage_.stage >= 2, ContractError, "diffusion steps need stage 2 or 3");
  VF_CHECK(!batch.empty(), ContractError, "empty batch");
  VF_CHECK(!(modality == Modality::video && stage_.policy == ModalityPolicy::image_only),
           ContractError, "stage " + std::to_string(stage_.stage) + " trains on images only");
  const auto& cfg = model_->config();
  const int64_t T = batch.front()->z0.size(0);
  for (const auto* ex : batch) {
    VF_CHECK(ex->modality == modality, ContractError, "batch mixes modalities");
    VF_CHECK(ex->z0.size(0) == T, ContractError, "batch mixes clip lengths");
  }
  if (modality == Modality::image) {
    VF_CHECK(T == 1, ContractError, "image batches have one frame");
  }

  Rng rng(noise_seed);
  std::vector<int64_t> t_frames;
  std::vector<torch::Tensor> z0s, masks, renders, maskeds, ids, texs, attrs, motions;
  std::vector<bool> zero_motion;
  for (const auto* ex : batch) {
    const int64_t t = rng.index(sched_.num_steps);
    const bool zm = modality == Modality::video && rng.bernoulli(stage_.zero_motion_prob);
    if (report) {
      report->timesteps.push_back(t);
      report->provenance.emplace_back(ex->features.identity_face, ex->features.attribute_face);
      report->zero_motion.push_back(zm);
    }
    for (int64_t f = 0; f < T; ++f) t_frames.push_back(t);
    z0s.push_back(ex->z0);
    masks.push_back(ex->cond.mask);
    renders.push_back(ex->cond.render);
    maskeds.push_back(ex->cond.masked);
    ids.push_back(ex->features.identity);
    texs.push_back(ex->features.texture);
    attrs.push_back(ex->features.attributes);
    if (modality == Modality::video) {
      VF_CHECK(ex->motion_latent.defined(), ContractError, "video example lacks motion latents");
      if (zm) {
        if (!zero_motion_.defined() || zero_motion_.sizes() != ex->motion_latent.sizes()) {
          const int64_t f = cfg.vae.downsample_factor();
          zero_motion_ = encode_latents(
              model_->vae, torch::zeros({ex->motion_latent.size(0), 3,
                                         ex->motion_latent.size(2) * f,
                                         ex->motion_latent.size(3) * f}));
        }
        motions.push_back(zero_motion_);
      } else {
        motions.push_back(ex->motion_latent);
      }
    }
  }
  auto z0 = torch::cat(z0s, 0);
  auto eps = torch::randn(z0.sizes(), make_generator(noise_seed), z0.options());
  auto z_t = add_noise_batched(z0, eps, t_frames, sched_);
  LatentCondition cond{torch::cat(masks, 0), torch::cat(renders, 0), torch::cat(maskeds, 0)};
  auto x = denoiser_input(z_t, cond);

  auto toks = model_->face_encoder->forward(torch::stack(ids), torch::stack(texs),
                                            torch::stack(attrs));
  auto context = mix(toks.id, toks.tex, toks.attr, cfg.mixer);
  auto tt = torch::tensor(t_frames, torch::kLong);

  torch::Tensor pred;
  if (modality == Modality::video) {
    auto motion = torch::cat(motions, 0);
    auto cache = reference_forward(model_->refnet, motion, motions.front().size(0));
    pred = model_->unet->forward(x, tt, context, T, DenoiseMode::video, &cache);
  } else {
    pred = model_->unet->forward(x, tt, context, 1, DenoiseMode::image);
  }
  return denoise_loss(pred, eps);
}

double Trainer::diffusion_loss(const std::vector<const PreparedExample*>& batch,
                               Modality modality, uint64_t noise_seed) {
  torch::NoGradGuard ng;
  return diffusion_forward(batch, modality, noise_seed, nullptr).item<double>();
}

namespace {

std::map<std::string, double> group_grad_norms(SwapModel& model) {
  std::map<std::string, double> out;
  for (const auto& g : parameter_groups()) {
    double s = 0;
    for (const auto& p : model->group(g)) {
      if (p.grad().defined()) s += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
    }
    out[g] = std::sqrt(s);
  }
  return out;
}

}  // namespace

StepReport Trainer::diffusion_step(const std::vector<const PreparedExample*>& batch,
                                   Modality modality, uint64_t noise_seed) {
  StepReport r;
  r.modality = modality;
  optimizer_->zero_grad();
  auto loss = diffusion_forward(batch, modality, noise_seed, &r);
  loss.backward();
  r.grad_norms = group_grad_norms(model_);
  optimizer_->step();
  r.loss = loss.item<double>();
  ++steps_;
  return r;
}

StepReport Trainer::vae_step(const torch::Tensor& clips, uint64_t noise_seed) {
  VF_CHECK(stage_.stage == 1, ContractError, "VAE steps belong to stage 1");
  StepReport r;
  r.modality = clips.size(1) == 1 ? Modality::image : Modality::video;
  optimizer_->zero_grad();
  auto out = model_->vae->forward(clips, true, make_generator(noise_seed));
  auto terms = vae_loss(out.recon, clips, out.mean, out.logvar, stage_.vae_weights,
                        [](const torch::Tensor& a, const torch::Tensor& b) {
                          return multiscale_gradient_distance(a, b);
                        });
  terms.total.backward();
  r.grad_norms = group_grad_norms(model_);
  optimizer_->step();
  r.loss = terms.total.item<double>();
  ++steps_;
  return r;
}

void Trainer::save(const std::string& path) {
  save_checkpoint(path, model_, stage_.stage, steps_, optimizer_.get());
}

void Trainer::resume(const std::string& path) {
  // Optimizer state only carries over within a stage.
  const bool same_stage = read_checkpoint_header(path).stage == stage_.stage;
  auto info = load_checkpoint_into(path, model_, same_stage ? optimizer_.get() : nullptr);
  steps_ = same_stage ? info.step : 0;
}

}  // namespace vidswap

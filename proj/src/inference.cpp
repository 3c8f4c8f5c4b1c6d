#include "vidswap/inference.hpp"

#include <opencv2/imgproc.hpp>

#include "vidswap/errors.hpp"
#include "vidswap/random.hpp"

namespace vidswap {

std::vector<ClipWindow> plan_clip_windows(int64_t length, int64_t clip_frames) {
  VF_CHECK(length >= 1, ContractError, "empty target video");
  VF_CHECK(clip_frames >= 1, ConfigError, "clip length must be >= 1");
  std::vector<ClipWindow> out;
  for (int64_t s = 0; s < length; s += clip_frames) {
    out.push_back({s, std::min(clip_frames, length - s)});
  }
  return out;
}

FrameSeq window_frames(const FrameSeq& video, const ClipWindow& w, int64_t clip_frames) {
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < clip_frames; ++i) {
    idx.push_back(std::min(w.start + i, w.start + w.valid - 1));
  }
  return FrameSeq(video.data().index_select(0, torch::tensor(idx, torch::kLong)));
}

torch::Tensor feather_alpha(const torch::Tensor& mask, int64_t feather) {
  VF_CHECK(feather >= 0, ConfigError, "feather must be non-negative");
  VF_CHECK(mask.dim() == 4 && mask.size(1) == 1, ContractError, "mask must be [T, 1, H, W]");
  auto m = mask.to(torch::kFloat32).contiguous();
  const auto T = m.size(0), H = m.size(2), W = m.size(3);
  auto out = torch::zeros({T, 1, H, W}, torch::kFloat64);
  const double ramp = static_cast<double>(feather + 1);
  for (int64_t t = 0; t < T; ++t) {
    cv::Mat inside(static_cast<int>(H), static_cast<int>(W), CV_8U);
    auto plane = m[t][0];
    auto acc = plane.accessor<float, 2>();
    bool any_in = false, any_out = false;
    for (int64_t i = 0; i < H; ++i) {
      for (int64_t j = 0; j < W; ++j) {
        const bool in = acc[i][j] > 0.5f;
        any_in = any_in || in;
        any_out = any_out || !in;
        inside.at<uint8_t>(static_cast<int>(i), static_cast<int>(j)) = in ? 255 : 0;
      }
    }
    if (!any_in) continue;
    auto oplane = out[t][0];
    auto o = oplane.accessor<double, 2>();
    if (!any_out) {
      oplane.fill_(1.0);
      continue;
    }
    // Distance from each mask pixel to the nearest pixel outside the mask.
    cv::Mat dist;
    cv::distanceTransform(inside, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE, CV_32F);
    for (int64_t i = 0; i < H; ++i) {
      for (int64_t j = 0; j < W; ++j) {
        const double d = dist.at<float>(static_cast<int>(i), static_cast<int>(j));
        o[i][j] = std::min(1.0, d / ramp);
      }
    }
  }
  return out;
}

FrameSeq composite(const FrameSeq& generated, const FrameSeq& target, const torch::Tensor& mask,
                   int64_t feather) {
  check_same_shape(generated.data(), target.data(), "composite");
  auto alpha = feather_alpha(mask, feather).to(target.data().dtype());
  auto blended = alpha * generated.data() + (1 - alpha) * target.data();
  return FrameSeq(torch::where(alpha > 0, blended, target.data()));
}

namespace {

struct ClipContext {
  LatentCondition cond;
  torch::Tensor context;
  MotionFeatureCache cache;
};

}  // namespace

FrameSeq swap_video(const FrameSeq& source_image, const FrameSeq& target, SwapModel& model,
                    const NoiseSchedule& sched, const ConditionProviders& providers,
                    const SwapOptions& opts, const SwapHooks* hooks) {
  torch::NoGradGuard ng;
  const auto& cfg = model->config();
  VF_CHECK(sched.num_steps == cfg.schedule.num_steps, ContractError,
           "schedule does not match the model's training schedule");
  VF_CHECK(target.height() == cfg.image_size && target.width() == cfg.image_size, ContractError,
           "target frames must be " + std::to_string(cfg.image_size) + " pixels square");
  const MixerWeights weights = opts.mixer.value_or(cfg.mixer);
  weights.validate();

  // Detect every frame up front so a failure names the original index.
  for (int64_t t = 0; t < target.frame_count(); ++t) {
    if (!providers.detector->detect(target.data()[t])) throw DetectionError(t);
  }

  const bool image_mode = target.frame_count() == 1;
  const int64_t T = image_mode ? 1 : cfg.frames;
  const int64_t M = cfg.motion_frames;
  const auto windows = plan_clip_windows(target.frame_count(), T);
  const int64_t factor = cfg.vae.downsample_factor();
  const int64_t h = target.height() / factor, w = target.width() / factor;

  std::vector<torch::Tensor> out;
  FrameSeq motion = FrameSeq::zeros(M, target.height(), target.width());
  for (size_t k = 0; k < windows.size(); ++k) {
    const auto& win = windows[k];
    const auto clip = window_frames(target, win, T);
    if (hooks && hooks->on_clip_start) hooks->on_clip_start(static_cast<int64_t>(k), win, motion);

    auto bundle = build_condition(source_image, clip, motion, providers, cfg.mask);
    attach_tokens(bundle, model->face_encoder, weights);
    const auto cond = encode_condition(model->vae, bundle);
    MotionFeatureCache cache;
    if (!image_mode) {
      cache = reference_forward(model->refnet, encode_latents(model->vae, motion.data()), M);
    }
    const auto mode = image_mode ? DenoiseMode::image : DenoiseMode::video;
    const auto clip_index = static_cast<int64_t>(k);
    EpsPredictor predictor = [&](const LatentSeq& z, int64_t t) {
      if (hooks && hooks->on_model_call) hooks->on_model_call(clip_index, t);
      auto tt = torch::full({T}, t, torch::kLong);
      auto eps = model->unet->forward(denoiser_input(z.data(), cond), tt, bundle.tokens, T, mode,
                                      image_mode ? nullptr : &cache);
      return LatentSeq(eps);
    };
    auto gen = make_generator(derive_seed(opts.seed, 0xC1, static_cast<uint64_t>(k)));
    LatentSeq z_T(torch::randn({T, cfg.vae.latent_channels, h, w}, gen));
    auto z0 = ddim_sample(predictor, z_T, sched, opts.steps);
    auto decoded = model->vae->decode(z0);
    if (hooks && hooks->on_decoded) hooks->on_decoded(clip_index, decoded);

    auto blended = composite(decoded, clip, bundle.face_mask, opts.feather);
    out.push_back(blended.data().slice(0, 0, win.valid));
    if (!image_mode) motion = decoded.slice(T - M, T);
  }
  return FrameSeq(torch::cat(out, 0));
}

}  // namespace vidswap

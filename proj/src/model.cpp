#include "vidswap/model.hpp"

#include <fstream>
#include <sstream>

#include "vidswap/errors.hpp"

namespace F = torch::nn::functional;
using nlohmann::json;

namespace vidswap {

void ModelConfig::validate() const {
  vae.validate();
  unet.validate();
  mixer.validate();
  VF_CHECK(unet.in_channels == 3 * vae.latent_channels + 1, ConfigError,
           "UNet input must be 3 latents plus the mask channel");
  VF_CHECK(unet.out_channels == vae.latent_channels, ConfigError,
           "UNet output must match the latent channels");
  VF_CHECK(unet.context_dim == face.context_dim, ConfigError,
           "face encoder and UNet context widths differ");
  VF_CHECK(frames >= 1 && motion_frames >= 1, ConfigError, "frames and motion_frames must be >= 1");
  VF_CHECK(image_size % vae.downsample_factor() == 0, ConfigError,
           "image size must be divisible by the VAE factor");
}

json to_json(const ModelConfig& c) {
  return json{
      {"vae",
       {{"channels", c.vae.channels},
        {"latent_channels", c.vae.latent_channels},
        {"groups", c.vae.groups},
        {"encoder_temporal", c.vae.encoder_temporal},
        {"decoder_temporal", c.vae.decoder_temporal}}},
      {"unet",
       {{"in_channels", c.unet.in_channels},
        {"out_channels", c.unet.out_channels},
        {"channels", c.unet.channels},
        {"attention", c.unet.attention},
        {"heads", c.unet.heads},
        {"context_dim", c.unet.context_dim},
        {"temb_dim", c.unet.temb_dim},
        {"groups", c.unet.groups},
        {"temporal", c.unet.temporal},
        {"cross_attention", c.unet.cross_attention}}},
      {"face",
       {{"id_dim", c.face.id_dim},
        {"texture_tokens", c.face.texture_tokens},
        {"texture_dim", c.face.texture_dim},
        {"attribute_tokens", c.face.attribute_tokens},
        {"attribute_dim", c.face.attribute_dim},
        {"context_dim", c.face.context_dim},
        {"id_tokens", c.face.id_tokens}}},
      {"schedule",
       {{"num_steps", c.schedule.num_steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end}}},
      {"mixer", {{"w_id", c.mixer.w_id}, {"w_tex", c.mixer.w_tex}, {"w_attr", c.mixer.w_attr}}},
      {"mask", {{"margin", c.mask.margin}, {"smooth_window", c.mask.smooth_window}}},
      {"frames", c.frames},
      {"motion_frames", c.motion_frames},
      {"image_size", c.image_size},
      {"init_seed", c.init_seed},
      {"reference_input", "latents"},
      {"denoiser_channels", "4 noisy + 1 mask + 4 render + 4 masked"}};
}

namespace {

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("vae")) {
      const auto& v = j["vae"];
      read(v, "channels", c.vae.channels);
      read(v, "latent_channels", c.vae.latent_channels);
      read(v, "groups", c.vae.groups);
      read(v, "encoder_temporal", c.vae.encoder_temporal);
      read(v, "decoder_temporal", c.vae.decoder_temporal);
    }
    if (j.contains("unet")) {
      const auto& u = j["unet"];
      read(u, "in_channels", c.unet.in_channels);
      read(u, "out_channels", c.unet.out_channels);
      read(u, "channels", c.unet.channels);
      read(u, "attention", c.unet.attention);
      read(u, "heads", c.unet.heads);
      read(u, "context_dim", c.unet.context_dim);
      read(u, "temb_dim", c.unet.temb_dim);
      read(u, "groups", c.unet.groups);
      read(u, "temporal", c.unet.temporal);
      read(u, "cross_attention", c.unet.cross_attention);
    }
    if (j.contains("face")) {
      const auto& f = j["face"];
      read(f, "id_dim", c.face.id_dim);
      read(f, "texture_tokens", c.face.texture_tokens);
      read(f, "texture_dim", c.face.texture_dim);
      read(f, "attribute_tokens", c.face.attribute_tokens);
      read(f, "attribute_dim", c.face.attribute_dim);
      read(f, "context_dim", c.face.context_dim);
      read(f, "id_tokens", c.face.id_tokens);
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      read(s, "num_steps", c.schedule.num_steps);
      read(s, "beta_start", c.schedule.beta_start);
      read(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("mixer")) {
      const auto& m = j["mixer"];
      read(m, "w_id", c.mixer.w_id);
      read(m, "w_tex", c.mixer.w_tex);
      read(m, "w_attr", c.mixer.w_attr);
    }
    if (j.contains("mask")) {
      read(j["mask"], "margin", c.mask.margin);
      read(j["mask"], "smooth_window", c.mask.smooth_window);
    }
    read(j, "frames", c.frames);
    read(j, "motion_frames", c.motion_frames);
    read(j, "image_size", c.image_size);
    read(j, "init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return c;
}

uint64_t config_hash(const json& j) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

SwapModelImpl::SwapModelImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  torch::manual_seed(cfg_.init_seed);
  vae = register_module("vae", VidFaceVAE(cfg_.vae));
  unet = register_module("unet", UNet(cfg_.unet));
  refnet = register_module("refnet", UNet(reference_config(cfg_.unet, cfg_.vae.latent_channels)));
  face_encoder = register_module("face_encoder", FaceEncoder(cfg_.face));
}

std::vector<torch::Tensor> SwapModelImpl::group(const std::string& name) const {
  if (name == "vae") return vae->parameters();
  if (name == "backbone.spatial") return unet->spatial_parameters();
  if (name == "backbone.temporal") return unet->temporal_parameters();
  if (name == "refnet") return refnet->parameters();
  if (name == "face_encoder") return face_encoder->parameters();
  throw ConfigError("unknown parameter group: " + name);
}

torch::Tensor encode_latents(VidFaceVAE& vae, const torch::Tensor& frames) {
  torch::NoGradGuard ng;
  VF_CHECK(frames.dim() == 4, ContractError, "encode_latents expects [T, 3, H, W]");
  return vae->encode_clips(frames.unsqueeze(0)).first.squeeze(0);
}

LatentCondition encode_condition(VidFaceVAE& vae, const ConditionBundle& b) {
  const int64_t factor = vae->config().downsample_factor();
  LatentCondition c;
  c.mask = F::avg_pool2d(b.face_mask, F::AvgPool2dFuncOptions(factor));
  c.render = encode_latents(vae, b.render_frames.data());
  c.masked = encode_latents(vae, b.masked_frames.data());
  return c;
}

torch::Tensor denoiser_input(const torch::Tensor& z_t, const LatentCondition& c) {
  VF_CHECK(z_t.size(0) == c.mask.size(0) && z_t.size(0) == c.render.size(0) &&
               z_t.size(0) == c.masked.size(0),
           ContractError, "denoiser input: frame counts differ");
  return torch::cat({z_t, c.mask.to(z_t.dtype()), c.render.to(z_t.dtype()),
                     c.masked.to(z_t.dtype())},
                    1);
}

namespace {

std::string join(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string blob(const std::function<void(torch::serialize::OutputArchive&)>& fill) {
  torch::serialize::OutputArchive ar;
  fill(ar);
  std::ostringstream os;
  ar.save_to(os);
  return os.str();
}

struct RawCheckpoint {
  std::map<std::string, std::string> header;
  std::string weights, optimizer;
};

RawCheckpoint read_raw(const std::string& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  RawCheckpoint r;
  std::string line;
  std::getline(in, line);
  if (line != "vidswap-checkpoint 1") throw Error("not a checkpoint: " + path);
  while (std::getline(in, line) && line != "---") {
    const auto eq = line.find('=');
    if (eq != std::string::npos) r.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!with_payload) return r;
  auto read_section = [&](const char* name, std::string& out) {
    std::string tag;
    size_t n = 0;
    if (!(in >> tag >> n) || tag != name) throw Error(std::string("checkpoint lacks ") + name);
    in.get();
    out.resize(n);
    in.read(out.data(), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw Error("truncated checkpoint " + path);
    in.get();
  };
  read_section("weights", r.weights);
  if (r.header.count("optimizer") && r.header["optimizer"] == "1") read_section("optimizer", r.optimizer);
  return r;
}

CheckpointInfo info_from(const RawCheckpoint& r) {
  CheckpointInfo info;
  info.header = r.header;
  auto it = r.header.find("config");
  if (it == r.header.end()) throw Error("checkpoint has no config line");
  info.config = model_config_from_json(json::parse(it->second));
  info.step = r.header.count("step") ? std::stoll(r.header.at("step")) : 0;
  info.stage = r.header.count("stage") ? std::stoi(r.header.at("stage")) : 0;
  info.has_optimizer = r.header.count("optimizer") && r.header.at("optimizer") == "1";
  return info;
}

void restore(const RawCheckpoint& r, SwapModel& model, torch::optim::Optimizer* opt) {
  torch::serialize::InputArchive ar;
  std::istringstream is(r.weights);
  ar.load_from(is);
  model->load(ar);
  if (opt && !r.optimizer.empty()) {
    torch::serialize::InputArchive oa;
    std::istringstream os(r.optimizer);
    oa.load_from(os);
    opt->load(oa);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, SwapModel& model, int stage, int64_t step,
                     torch::optim::Optimizer* optimizer) {
  const auto& cfg = model->config();
  std::ostringstream hdr;
  hdr << "vidswap-checkpoint 1\n";
  hdr << "stage=" << stage << "\n";
  hdr << "step=" << step << "\n";
  hdr << "vae.channels=" << join(cfg.vae.channels) << "\n";
  hdr << "vae.factor=" << cfg.vae.downsample_factor() << "\n";
  hdr << "vae.latent_channels=" << cfg.vae.latent_channels << "\n";
  const auto betas = model->vae->betas();
  hdr.precision(17);
  for (size_t i = 0; i < betas.size(); ++i) hdr << "vae.beta." << i << "=" << betas[i] << "\n";
  hdr << "unet.channels=" << join(cfg.unet.channels) << "\n";
  hdr << "unet.heads=" << cfg.unet.heads << "\n";
  hdr << "unet.sites=";
  const auto sites = model->unet->sites();
  for (size_t i = 0; i < sites.size(); ++i) hdr << (i ? "," : "") << sites[i];
  hdr << "\n";
  hdr << "optimizer=" << (optimizer ? 1 : 0) << "\n";
  hdr << "config=" << to_json(cfg).dump() << "\n";
  hdr << "---\n";
  const auto weights = blob([&](auto& ar) { model->save(ar); });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << hdr.str();
  out << "weights " << weights.size() << "\n";
  out.write(weights.data(), static_cast<std::streamsize>(weights.size()));
  out << "\n";
  if (optimizer) {
    const auto opt = blob([&](auto& ar) { optimizer->save(ar); });
    out << "optimizer " << opt.size() << "\n";
    out.write(opt.data(), static_cast<std::streamsize>(opt.size()));
    out << "\n";
  }
  if (!out) throw Error("failed writing checkpoint " + path);
}

CheckpointInfo read_checkpoint_header(const std::string& path) {
  return info_from(read_raw(path, false));
}

SwapModel load_checkpoint(const std::string& path, CheckpointInfo* info,
                               torch::optim::Optimizer* optimizer) {
  const auto raw = read_raw(path, true);
  auto ci = info_from(raw);
  SwapModel model(ci.config);
  restore(raw, model, optimizer);
  if (info) *info = ci;
  return model;
}

CheckpointInfo load_checkpoint_into(const std::string& path, SwapModel& model,
                                    torch::optim::Optimizer* optimizer) {
  const auto raw = read_raw(path, true);
  auto ci = info_from(raw);
  restore(raw, model, optimizer);
  return ci;
}

}  // namespace vidswap

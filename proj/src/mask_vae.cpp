#include "localdom/mask_vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "localdom/error.hpp"

namespace localdom {

using nlohmann::json;

void MaskVaeConfig::validate() const {
  if (patch_size < 4) throw Error(ErrorCode::kBadSchema, "vae.patch_size must be >= 4");
  if (latent < 1 || width < 1 || batch_size < 1) throw Error(ErrorCode::kBadSchema, "vae sizes must be >= 1");
  if (steps < 0) throw Error(ErrorCode::kBadSchema, "vae.steps must be >= 0");
  if (lr <= 0.0) throw Error(ErrorCode::kBadSchema, "vae.lr must be positive");
  if (holdout < 0.0 || holdout >= 1.0) throw Error(ErrorCode::kBadSchema, "vae.holdout must be in [0,1)");
  if (diverge_patience < 1) throw Error(ErrorCode::kBadSchema, "vae.diverge_patience must be >= 1");
}

void to_json(json& j, const MaskVaeConfig& c) {
  j = json{{"patch_size", c.patch_size}, {"latent", c.latent},   {"width", c.width},
           {"steps", c.steps},           {"batch_size", c.batch_size}, {"lr", c.lr},
           {"holdout", c.holdout},       {"diverge_patience", c.diverge_patience}, {"seed", c.seed}};
}

void from_json(const json& j, MaskVaeConfig& c) {
  c = MaskVaeConfig{};
  c.patch_size = j.value("patch_size", c.patch_size);
  c.latent = j.value("latent", c.latent);
  c.width = j.value("width", c.width);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.holdout = j.value("holdout", c.holdout);
  c.diverge_patience = j.value("diverge_patience", c.diverge_patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw Error(ErrorCode::kShapeMismatch, "mu and logvar differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) acc += mu[i] * mu[i] + std::exp(logvar[i]) - logvar[i] - 1.0;
  return 0.5 * acc;
}

ElboTerms elbo_loss(const Image& mask, const Image& reconstruction, std::span<const double> mu,
                    std::span<const double> logvar, double eps) {
  if (!mask.same_shape(reconstruction)) throw Error(ErrorCode::kShapeMismatch, "mask and reconstruction shape");
  ElboTerms t;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double p = std::clamp(reconstruction.data()[i], eps, 1.0 - eps);
    const double x = mask.data()[i];
    t.reconstruction -= x * std::log(p) + (1.0 - x) * std::log(1.0 - p);
  }
  t.kl = gaussian_kl(mu, logvar);
  t.total = t.reconstruction + t.kl;
  return t;
}

namespace {

int half_up(int v) { return (v + 1) / 2; }

}  // namespace

MaskVae::MaskVae(const MaskVaeConfig& config) : config_(config) {
  config_.validate();
  h1_ = half_up(config.patch_size);
  h2_ = half_up(h1_);
  const int f = config.width;
  const int flat = 2 * f * h2_ * h2_;
  Rng rng = make_rng(config.seed, "vae/init");
  enc1_ = nn::Conv2d::create(params_, "enc1", 1, f, 3, {2, 1, 1}, rng);
  enc2_ = nn::Conv2d::create(params_, "enc2", f, 2 * f, 3, {2, 1, 1}, rng);
  mu_ = nn::Linear::create(params_, "mu", flat, config.latent, rng, 0.5);
  logvar_ = nn::Linear::create(params_, "logvar", flat, config.latent, rng, 0.1);
  expand_ = nn::Linear::create(params_, "expand", config.latent, flat, rng);
  dec1_ = nn::Conv2d::create(params_, "dec1", 2 * f, f, 3, {1, 1, 1}, rng);
  dec2_ = nn::Conv2d::create(params_, "dec2", f, 1, 3, {1, 1, 1}, rng);
}

MaskVae::Posterior MaskVae::encode_batch(const nn::Var& masks) const {
  const auto& s = masks->value.shape();
  if (s.c != 1 || s.h != config_.patch_size || s.w != config_.patch_size) {
    throw Error(ErrorCode::kShapeMismatch, "mask batch must be " + std::to_string(config_.patch_size) +
                                               "px single-channel, got " + nn::to_string(s));
  }
  const nn::Var h = nn::leaky_relu(enc2_(nn::leaky_relu(enc1_(masks))));
  return {mu_(h), logvar_(h)};
}

nn::Var MaskVae::decode_batch(const nn::Var& latent) const {
  const int n = latent->value.shape().n;
  nn::Var h = nn::leaky_relu(nn::reshape(expand_(latent), {n, 2 * config_.width, h2_, h2_}));
  h = nn::leaky_relu(dec1_(nn::upsample_to(h, h1_, h1_)));
  return nn::sigmoid(dec2_(nn::upsample_to(h, config_.patch_size, config_.patch_size)));
}

std::vector<double> MaskVae::encode(const Image& mask, EncodeMode mode, Rng* rng) const {
  const Posterior post = encode_batch(nn::constant(nn::Tensor::from_image(mask)));
  std::vector<double> h = post.mu->value.data();
  if (mode == EncodeMode::kStochastic) {
    if (!rng) throw Error(ErrorCode::kInvalidArgument, "stochastic encoding needs an rng");
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += std::exp(0.5 * post.logvar->value[i]) * standard_normal(*rng);
  }
  return h;
}

Image MaskVae::decode(std::span<const double> latent) const {
  if (static_cast<int>(latent.size()) != config_.latent) throw Error(ErrorCode::kShapeMismatch, "latent length");
  nn::Tensor t({1, config_.latent, 1, 1}, std::vector<double>(latent.begin(), latent.end()));
  return decode_batch(nn::constant(std::move(t)))->value.to_image(0);
}

Image MaskVae::reconstruct(const Image& mask) const { return decode(encode(mask)); }

Archive MaskVae::to_archive() const {
  Archive a;
  a.config_json = json{{"kind", "vae"}, {"config", config_}}.dump();
  store_params(a, params_, "");
  return a;
}

std::shared_ptr<MaskVae> MaskVae::from_archive(const Archive& archive) {
  json meta;
  try {
    meta = json::parse(archive.config_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, std::string("config snapshot: ") + e.what());
  }
  if (meta.value("kind", std::string()) != "vae") throw Error(ErrorCode::kBadCheckpoint, "archive is not a vae checkpoint");
  auto vae = std::make_shared<MaskVae>(meta.at("config").get<MaskVaeConfig>());
  load_params(archive, vae->params_, "");
  return vae;
}

double mask_iou(std::span<const Image> a, std::span<const Image> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "mask lists differ in length");
  double inter = 0.0;
  double uni = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!a[k].same_shape(b[k])) throw Error(ErrorCode::kShapeMismatch, "mask shapes differ");
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const bool x = a[k].data()[i] > 0.5;
      const bool y = b[k].data()[i] > 0.5;
      inter += x && y;
      uni += x || y;
    }
  }
  return uni == 0.0 ? 1.0 : inter / uni;
}

MaskVaeBundle train_vae(const MaskPatchSet& masks, const MaskVaeConfig& config) {
  config.validate();
  if (masks.patches.empty()) throw Error(ErrorCode::kEmptySet, "no mask patches for the VAE");
  for (const auto& p : masks.patches) {
    if (p.pixels.channels() != 1 || p.pixels.height() != config.patch_size || p.pixels.width() != config.patch_size) {
      throw Error(ErrorCode::kShapeMismatch, "mask patches must match vae.patch_size");
    }
  }

  const std::size_t n = masks.patches.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_rng(config.seed, "vae/split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(split_rng, i)]);
  std::size_t held = 0;
  if (config.holdout > 0.0 && n >= 2) {
    held = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(config.holdout * n)), 1, n - 1);
  }
  const std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(held));
  const std::vector<std::size_t> held_idx(order.end() - static_cast<std::ptrdiff_t>(held), order.end());

  MaskVaeBundle bundle;
  bundle.vae = std::make_shared<MaskVae>(config);
  MaskVae& vae = *bundle.vae;
  nn::Adam opt(vae.params(), {config.lr, 0.9, 0.999, 1e-8});
  Rng rng = make_rng(config.seed, "vae/batches");
  int streak = 0;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Image> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(masks.patches[train_idx[uniform_index(rng, train_idx.size())]].pixels);
    }
    const nn::Tensor x = nn::Tensor::from_images(batch);
    const auto post = vae.encode_batch(nn::constant(x));
    nn::Tensor noise(post.mu->value.shape());
    for (double& v : noise.data()) v = standard_normal(rng);
    const nn::Var h = nn::add(post.mu, nn::mul(nn::exp(nn::scale(post.logvar, 0.5)), nn::constant(std::move(noise))));
    const nn::Var nll = nn::mean(nn::bernoulli_nll(vae.decode_batch(h), x, kBernoulliFloor));
    const nn::Var kl = nn::mean(nn::gaussian_kl(post.mu, post.logvar));
    const nn::Var loss = nn::add(nll, kl);
    bundle.log.push_back({step + 1, nll->value[0], kl->value[0]});
    if (!std::isfinite(loss->value[0])) {
      if (++streak >= config.diverge_patience) {
        throw Error(ErrorCode::kDiverged, "non-finite VAE loss for " + std::to_string(streak) + " steps");
      }
      continue;
    }
    streak = 0;
    vae.params().zero_grad();
    nn::backward(loss);
    opt.step();
  }

  std::vector<Image> truth;
  std::vector<Image> recon;
  for (std::size_t i : held_idx) {
    truth.push_back(masks.patches[i].pixels);
    recon.push_back(vae.reconstruct(truth.back()));
  }
  bundle.heldout_count = held_idx.size();
  bundle.heldout_iou = truth.empty() ? 0.0 : mask_iou(truth, recon);
  return bundle;
}

std::vector<double> mix_latents(std::span<const double> e_alpha, std::span<const double> e_beta, double z) {
  if (!(z >= 0.0 && z <= 1.0)) throw Error(ErrorCode::kOutOfRange, "z must lie in [0,1]");
  if (e_alpha.size() != e_beta.size()) throw Error(ErrorCode::kShapeMismatch, "latent lengths differ");
  std::vector<double> h(e_alpha.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = e_alpha[i] * z + e_beta[i] * (1.0 - z);
  return h;
}

std::vector<double> interpolate_latent(const MaskEncoderFn& encoder, const Image& p_alpha, const Image& p_beta,
                                       double z) {
  if (!(z >= 0.0 && z <= 1.0)) throw Error(ErrorCode::kOutOfRange, "z must lie in [0,1]");
  return mix_latents(encoder(p_alpha), encoder(p_beta), z);
}

std::vector<double> interpolate_latent(const MaskVae& vae, const Image& p_alpha, const Image& p_beta, double z,
                                       EncodeMode mode, Rng* rng) {
  return interpolate_latent([&](const Image& m) { return vae.encode(m, mode, rng); }, p_alpha, p_beta, z);
}

Image interpolated_mask(const MaskVae& vae, const Image& p_alpha, const Image& p_beta, double z, EncodeMode mode,
                        Rng* rng) {
  return vae.decode(interpolate_latent(vae, p_alpha, p_beta, z, mode, rng));
}

Image blend(const Image& x_alpha, const Image& x_beta, const Image& p_z, double gamma) {
  if (!x_alpha.same_shape(x_beta) || !p_z.same_size(x_alpha) ||
      (p_z.channels() != 1 && p_z.channels() != x_alpha.channels())) {
    throw Error(ErrorCode::kShapeMismatch, "blend inputs are not aligned");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorCode::kOutOfRange, "gamma must lie in [0,1]");
  Image out(x_alpha.height(), x_alpha.width(), x_alpha.channels());
  for (int c = 0; c < out.channels(); ++c) {
    const auto a = x_alpha.plane(c);
    const auto b = x_beta.plane(c);
    const auto p = p_z.plane(p_z.channels() == 1 ? 0 : c);
    auto o = out.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double m = gamma * p[i];
      // Rounding can push the convex combination one ulp past its endpoints.
      o[i] = std::clamp(a[i] * m + b[i] * (1.0 - m), std::min(a[i], b[i]), std::max(a[i], b[i]));
    }
  }
  return out;
}

Image difference_mask(const Image& a, const Image& b, double tau) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kShapeMismatch, "difference_mask inputs differ in shape");
  const Image ga = to_gray(a);
  const Image gb = to_gray(b);
  Image out(a.height(), a.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::abs(ga.data()[i] - gb.data()[i]) > tau ? 1.0 : 0.0;
  return out;
}

void write_vae_loss_csv(const std::vector<VaeLossRecord>& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "step,reconstruction,kl\n";
  for (const auto& r : log) out << r.step << ',' << r.reconstruction << ',' << r.kl << '\n';
  write_file_atomic(path, out.str());
}

}  // namespace localdom

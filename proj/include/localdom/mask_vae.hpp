#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "localdom/checkpoint.hpp"
#include "localdom/geometry_priors.hpp"
#include "localdom/image.hpp"
#include "localdom/nn.hpp"

namespace localdom {

inline constexpr double kBernoulliFloor = 1e-6;

struct MaskVaeConfig {
  int patch_size = 16;
  int latent = 64;
  int width = 8;
  int steps = 500;
  int batch_size = 16;
  double lr = 1e-3;
  double holdout = 0.2;  // fraction of masks kept out of training for the IoU report
  int diverge_patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const MaskVaeConfig& c);
void from_json(const nlohmann::json& j, MaskVaeConfig& c);

enum class EncodeMode { kDeterministic, kStochastic };

struct ElboTerms {
  double reconstruction = 0.0;  // -log p(x | h), Bernoulli per pixel
  double kl = 0.0;
  double total = 0.0;
};

ElboTerms elbo_loss(const Image& mask, const Image& reconstruction, std::span<const double> mu,
                    std::span<const double> logvar, double eps = kBernoulliFloor);
// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1)
double gaussian_kl(std::span<const double> mu, std::span<const double> logvar);

// Convolutional encoder E (two stride-2 stages, linear heads for mean and
// log-variance) and decoder D mirroring it with a sigmoid output.
class MaskVae {
 public:
  explicit MaskVae(const MaskVaeConfig& config);

  struct Posterior {
    nn::Var mu;
    nn::Var logvar;
  };

  Posterior encode_batch(const nn::Var& masks) const;
  nn::Var decode_batch(const nn::Var& latent) const;

  // Posterior mean, or a reparametrized sample when stochastic (rng required).
  std::vector<double> encode(const Image& mask, EncodeMode mode = EncodeMode::kDeterministic, Rng* rng = nullptr) const;
  Image decode(std::span<const double> latent) const;
  Image reconstruct(const Image& mask) const;

  const MaskVaeConfig& config() const { return config_; }
  const nn::ParamList& params() const { return params_; }

  Archive to_archive() const;
  static std::shared_ptr<MaskVae> from_archive(const Archive& archive);

 private:
  MaskVaeConfig config_;
  int h1_ = 0;
  int h2_ = 0;
  nn::ParamList params_;
  nn::Conv2d enc1_, enc2_, dec1_, dec2_;
  nn::Linear mu_, logvar_, expand_;
};

struct VaeLossRecord {
  int step = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

struct MaskVaeBundle {
  std::shared_ptr<MaskVae> vae;
  double heldout_iou = 0.0;
  std::size_t heldout_count = 0;
  std::vector<VaeLossRecord> log;
};

// Pooled IoU of masks thresholded at 0.5; 1 when both are empty.
double mask_iou(std::span<const Image> a, std::span<const Image> b);

MaskVaeBundle train_vae(const MaskPatchSet& masks, const MaskVaeConfig& config);

// h_z = e_alpha * z + e_beta * (1 - z)
std::vector<double> mix_latents(std::span<const double> e_alpha, std::span<const double> e_beta, double z);

using MaskEncoderFn = std::function<std::vector<double>(const Image&)>;
std::vector<double> interpolate_latent(const MaskEncoderFn& encoder, const Image& p_alpha, const Image& p_beta,
                                       double z);
std::vector<double> interpolate_latent(const MaskVae& vae, const Image& p_alpha, const Image& p_beta, double z,
                                       EncodeMode mode = EncodeMode::kDeterministic, Rng* rng = nullptr);

Image interpolated_mask(const MaskVae& vae, const Image& p_alpha, const Image& p_beta, double z,
                        EncodeMode mode = EncodeMode::kDeterministic, Rng* rng = nullptr);

// x_z = x_alpha * m + x_beta * (1 - m) with m = gamma * p_z. p_z may be
// single-channel (broadcast) or match the patches' channels.
Image blend(const Image& x_alpha, const Image& x_beta, const Image& p_z, double gamma);

// binarize(|gray(a) - gray(b)| > tau)
Image difference_mask(const Image& a, const Image& b, double tau);

void write_vae_loss_csv(const std::vector<VaeLossRecord>& log, const std::filesystem::path& path);

}  // namespace localdom

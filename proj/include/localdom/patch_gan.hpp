#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "localdom/checkpoint.hpp"
#include "localdom/geometry_priors.hpp"
#include "localdom/image.hpp"
#include "localdom/nn.hpp"

namespace localdom {

inline constexpr double kHistogramFloor = 1e-8;
inline constexpr double kFocusFloor = 1e-6;
inline constexpr double kLogSigma = 1.0;

// ---------------------------------------------------------------------------
// Losses

// mean((s - 1)^2)
double generator_loss(std::span<const double> scores_fake);
// mean(s_f^2) + mean((s_r - 1)^2)
double discriminator_loss(std::span<const double> scores_fake, std::span<const double> scores_real);

nn::Var generator_loss(const nn::Var& scores_fake);
nn::Var discriminator_loss(const nn::Var& scores_fake, const nn::Var& scores_real);

// Per-channel normalized histogram; mass[c * bins + k].
struct Histogram {
  int channels = 0;
  int bins = 0;
  std::vector<double> mass;

  double at(int c, int k) const { return mass[static_cast<std::size_t>(c) * bins + k]; }
};

// Hard binning: bin = min(floor(v * bins), bins - 1).
Histogram histogram(const Image& image, int bins);
// Kernel-weighted binning (the differentiable variant used in training).
Histogram soft_histogram(const Image& image, int bins, double bandwidth);
// Pools several images into one histogram per channel.
Histogram pooled_histogram(std::span<const Image> images, int bins);

// sum h_ref log(h_ref / max(h_gen, eps)), 0 log 0 := 0, averaged over channels.
double histogram_kl(const Histogram& reference, const Histogram& generated, double eps = kHistogramFloor);

// Variance of the Laplacian-of-Gaussian response of the luminance.
double log_variance_focus(const Image& image, double sigma = kLogSigma);

struct DeblurLossOptions {
  int bins = 32;
  double bandwidth = 0.0;  // <= 0 selects one bin width
  double eps_h = kHistogramFloor;
  double eps_f = kFocusFloor;
  double sigma = kLogSigma;
  bool soft = false;

  double resolved_bandwidth() const { return bandwidth > 0.0 ? bandwidth : 1.0 / bins; }
};

// KL(H[x] || H[g(x)]) + 1 / (var(LoG(g(x))) + eps_f)
double deblur_loss(const Image& x, const Image& gx, const DeblurLossOptions& options = {});
// Batch mean of the soft-histogram deblur loss; gradients flow into gx.
nn::Var deblur_loss(const nn::Tensor& x, const nn::Var& gx, const DeblurLossOptions& options);

// ---------------------------------------------------------------------------
// Color jitter

struct JitterRanges {
  double brightness = 0.0;  // additive shift drawn from U(-b, b)
  double contrast = 0.0;    // factor drawn from U(1 - c, 1 + c)
  double hue = 0.0;         // rotation in turns drawn from U(-h, h)

  bool is_zero() const { return brightness == 0.0 && contrast == 0.0 && hue == 0.0; }
};

struct JitterParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double hue = 0.0;
};

// Hue rotation about the gray axis, then contrast about the patch mean, then
// brightness; clamped to [0,1]. Steps with neutral parameters are skipped.
Image apply_jitter(const Image& patch, const JitterParams& params);
Image color_jitter(const Image& patch, Rng& rng, const JitterRanges& ranges);

// ---------------------------------------------------------------------------
// Networks

enum class Backbone { kResidual, kGatedInpaint };

std::string to_string(Backbone backbone);
Backbone backbone_from_string(const std::string& name);

struct GeneratorSpec {
  Backbone backbone = Backbone::kResidual;
  int channels = 3;
  int width = 8;
};

// Image-to-image map. Output has the input's spatial size and lies in [0,1].
// Freshly created generators are the identity: their last layer is zero.
class Generator {
 public:
  virtual ~Generator() = default;

  static std::unique_ptr<Generator> create(const GeneratorSpec& spec, std::uint64_t seed);

  // x: (n,c,h,w). hole: (n,1,h,w) 0/1 region to synthesize; used by the
  // inpainting backbone only (nullptr means nothing to fill).
  virtual nn::Var forward(const nn::Var& x, const nn::Tensor* hole) const = 0;

  Image apply(const Image& x, const Image* hole = nullptr) const;

  const GeneratorSpec& spec() const { return spec_; }
  const nn::ParamList& params() const { return params_; }
  static constexpr int kMinSize = 4;

 protected:
  explicit Generator(GeneratorSpec spec) : spec_(spec) {}

  GeneratorSpec spec_;
  nn::ParamList params_;
};

// Fills the hole by harmonic (Gauss-Seidel) diffusion from the known pixels.
nn::Tensor diffusion_fill(const nn::Tensor& x, const nn::Tensor& hole, int iterations = 64);

// Patch discriminator producing a score map.
class Discriminator {
 public:
  Discriminator(int channels, int width, std::uint64_t seed);

  nn::Var forward(const nn::Var& x) const;
  const nn::ParamList& params() const { return params_; }

 private:
  nn::ParamList params_;
  nn::Conv2d c1_, c2_, c3_;
};

// ---------------------------------------------------------------------------
// Training

enum class TaskLoss { kNone, kDeblur };

struct GanConfig {
  Backbone backbone = Backbone::kResidual;
  int width = 8;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  int batch_size = 8;
  int steps = 200;
  double lambda_adv = 1.0;
  double lambda_task = 0.0;
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;
  double lambda_rec = 10.0;
  TaskLoss task_loss = TaskLoss::kNone;
  DeblurLossOptions deblur;
  JitterRanges jitter;
  int checkpoint_every = 0;
  int diverge_patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GanConfig& c);
void from_json(const nlohmann::json& j, GanConfig& c);

struct LossRecord {
  int step = 0;
  double l_g = 0.0;
  double l_d = 0.0;
  double l_task = 0.0;
};

struct TrainState {
  int step = 0;
  int nonfinite_streak = 0;
  std::vector<LossRecord> log;
  std::string rng_state;
};

// Source (the domain being translated away) and target patches. Several
// patch sizes may be present; batches are size-homogeneous and the sizes are
// visited round-robin. source_masks, when given, align with source and mark
// the region of interest (the hole for the inpainting backbone).
struct GanTrainingData {
  std::vector<PatchSet> source;
  std::vector<MaskPatchSet> source_masks;
  std::vector<PatchSet> target;

  std::size_t source_count() const;
};

// Forward generator (source -> target), the reverse generator and source
// discriminator used by the cycle-style backbone, and optimizer state.
class GanModel {
 public:
  GanModel(const GanConfig& config, int channels);

  const GanConfig& config() const { return config_; }
  int channels() const { return channels_; }
  const Generator& generator() const { return *forward_; }
  std::shared_ptr<const Generator> share_generator() const { return forward_; }
  bool has_cycle() const { return reverse_ != nullptr; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  // Runs config.steps - state.step further steps. on_checkpoint fires every
  // config.checkpoint_every steps (if > 0).
  void train(const GanTrainingData& data, const std::function<void(const GanModel&)>& on_checkpoint = {});
  LossRecord train_step(const GanTrainingData& data, Rng& rng);

  Archive to_archive() const;
  static GanModel from_archive(const Archive& archive);
  // Generator-only view of a GAN checkpoint.
  static std::shared_ptr<const Generator> load_generator(const Archive& archive);

  nn::ParamList all_params() const;

 private:
  GanConfig config_;
  int channels_;
  std::shared_ptr<Generator> forward_;
  std::shared_ptr<Generator> reverse_;
  std::unique_ptr<Discriminator> d_target_;
  std::unique_ptr<Discriminator> d_source_;
  nn::ParamList g_params_;
  nn::ParamList d_params_;
  std::unique_ptr<nn::Adam> opt_g_;
  std::unique_ptr<nn::Adam> opt_d_;
  TrainState state_;
};

// step,L_G,L_D,L_task
void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path);

// Full-image translation; throws TooSmall below Generator::kMinSize.
Image translate(const Generator& generator, const Image& image, const Image* hole = nullptr);

}  // namespace localdom

#include "localdom/patch_gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "localdom/error.hpp"

namespace localdom {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Losses

double generator_loss(std::span<const double> scores_fake) {
  if (scores_fake.empty()) throw Error(ErrorCode::kInvalidArgument, "empty score tensor");
  double acc = 0.0;
  for (double s : scores_fake) acc += (s - 1.0) * (s - 1.0);
  return acc / static_cast<double>(scores_fake.size());
}

double discriminator_loss(std::span<const double> scores_fake, std::span<const double> scores_real) {
  if (scores_fake.empty() || scores_real.empty()) throw Error(ErrorCode::kInvalidArgument, "empty score tensor");
  double fake = 0.0;
  for (double s : scores_fake) fake += s * s;
  double real = 0.0;
  for (double s : scores_real) real += (s - 1.0) * (s - 1.0);
  return fake / static_cast<double>(scores_fake.size()) + real / static_cast<double>(scores_real.size());
}

nn::Var generator_loss(const nn::Var& scores_fake) { return nn::mean(nn::square(nn::add_scalar(scores_fake, -1.0))); }

nn::Var discriminator_loss(const nn::Var& scores_fake, const nn::Var& scores_real) {
  return nn::add(nn::mean(nn::square(scores_fake)), nn::mean(nn::square(nn::add_scalar(scores_real, -1.0))));
}

Histogram histogram(const Image& image, int bins) {
  if (bins < 2) throw Error(ErrorCode::kInvalidArgument, "histogram needs at least 2 bins");
  Histogram h{image.channels(), bins, std::vector<double>(static_cast<std::size_t>(image.channels()) * bins, 0.0)};
  const double inv = 1.0 / static_cast<double>(image.plane_size());
  for (int c = 0; c < image.channels(); ++c) {
    for (double v : image.plane(c)) {
      const int k = std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
      h.mass[static_cast<std::size_t>(c) * bins + k] += inv;
    }
  }
  return h;
}

Histogram soft_histogram(const Image& image, int bins, double bandwidth) {
  const nn::Var h = nn::soft_histogram(nn::constant(nn::Tensor::from_image(image)), bins, bandwidth);
  return {image.channels(), bins, h->value.data()};
}

Histogram pooled_histogram(std::span<const Image> images, int bins) {
  if (images.empty()) throw Error(ErrorCode::kEmptySet, "no images to pool");
  const int channels = images.front().channels();
  Histogram h{channels, bins, std::vector<double>(static_cast<std::size_t>(channels) * bins, 0.0)};
  double pixels = 0.0;
  for (const Image& image : images) {
    if (image.channels() != channels) throw Error(ErrorCode::kShapeMismatch, "pooled images differ in channels");
    const Histogram one = histogram(image, bins);
    const double n = static_cast<double>(image.plane_size());
    for (std::size_t i = 0; i < h.mass.size(); ++i) h.mass[i] += one.mass[i] * n;
    pixels += n;
  }
  for (double& m : h.mass) m /= pixels;
  return h;
}

double histogram_kl(const Histogram& reference, const Histogram& generated, double eps) {
  if (reference.channels != generated.channels || reference.bins != generated.bins) {
    throw Error(ErrorCode::kShapeMismatch, "histograms differ in layout");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < reference.mass.size(); ++i) {
    const double r = reference.mass[i];
    if (r <= 0.0) continue;
    acc += r * std::log(r / std::max(generated.mass[i], eps));
  }
  return acc / reference.channels;
}

double log_variance_focus(const Image& image, double sigma) {
  return nn::log_variance(nn::constant(nn::Tensor::from_image(image)), sigma)->value[0];
}

double deblur_loss(const Image& x, const Image& gx, const DeblurLossOptions& options) {
  if (!x.same_shape(gx)) throw Error(ErrorCode::kShapeMismatch, "deblur_loss inputs differ in shape");
  const double bw = options.resolved_bandwidth();
  const Histogram hx = options.soft ? soft_histogram(x, options.bins, bw) : histogram(x, options.bins);
  const Histogram hg = options.soft ? soft_histogram(gx, options.bins, bw) : histogram(gx, options.bins);
  return histogram_kl(hx, hg, options.eps_h) + 1.0 / (log_variance_focus(gx, options.sigma) + options.eps_f);
}

nn::Var deblur_loss(const nn::Tensor& x, const nn::Var& gx, const DeblurLossOptions& options) {
  const double bw = options.resolved_bandwidth();
  const nn::Tensor ref = nn::soft_histogram(nn::constant(x), options.bins, bw)->value;
  const nn::Var kl = nn::histogram_kl(ref, nn::soft_histogram(gx, options.bins, bw), options.eps_h);
  const nn::Var focus = nn::reciprocal(nn::add_scalar(nn::log_variance(gx, options.sigma), options.eps_f));
  return nn::mean(nn::add(kl, focus));
}

// ---------------------------------------------------------------------------
// Color jitter

Image apply_jitter(const Image& patch, const JitterParams& params) {
  Image out = patch;
  bool touched = false;
  if (params.hue != 0.0 && out.channels() == 3) {
    // Rodrigues rotation about the unit gray axis.
    const double theta = 2.0 * std::numbers::pi * params.hue;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double k = 1.0 / std::sqrt(3.0);
    const double t = (1.0 - cs) / 3.0;
    const double rot[3][3] = {{cs + t, t - k * sn, t + k * sn}, {t + k * sn, cs + t, t - k * sn},
                              {t - k * sn, t + k * sn, cs + t}};
    auto r = out.plane(0);
    auto g = out.plane(1);
    auto b = out.plane(2);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double v[3] = {r[i], g[i], b[i]};
      r[i] = rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2];
      g[i] = rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2];
      b[i] = rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2];
    }
    touched = true;
  }
  if (params.contrast != 1.0) {
    double m = 0.0;
    for (double v : out.data()) m += v;
    m /= static_cast<double>(out.size());
    for (double& v : out.data()) v = m + params.contrast * (v - m);
    touched = true;
  }
  if (params.brightness != 0.0) {
    for (double& v : out.data()) v += params.brightness;
    touched = true;
  }
  if (touched) {
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Image color_jitter(const Image& patch, Rng& rng, const JitterRanges& ranges) {
  JitterParams p;
  if (ranges.brightness > 0.0) p.brightness = uniform(rng, -ranges.brightness, ranges.brightness);
  if (ranges.contrast > 0.0) p.contrast = 1.0 + uniform(rng, -ranges.contrast, ranges.contrast);
  if (ranges.hue > 0.0) p.hue = uniform(rng, -ranges.hue, ranges.hue);
  return apply_jitter(patch, p);
}

// ---------------------------------------------------------------------------
// Networks

std::string to_string(Backbone backbone) {
  return backbone == Backbone::kResidual ? "residual" : "gated_inpaint";
}

Backbone backbone_from_string(const std::string& name) {
  if (name == "residual") return Backbone::kResidual;
  if (name == "gated_inpaint") return Backbone::kGatedInpaint;
  throw Error(ErrorCode::kBadSchema, "unknown backbone '" + name + "'");
}

namespace {

nn::ConvOptions same(int dilation = 1) { return {1, dilation, dilation}; }

// Encoder-decoder with one stride-2 stage, a residual block and a skip
// connection; predicts a residual added to the input.
class ResidualGenerator final : public Generator {
 public:
  ResidualGenerator(const GeneratorSpec& spec, Rng& rng) : Generator(spec) {
    const int c = spec.channels;
    const int f = spec.width;
    e1_ = nn::Conv2d::create(params_, "e1", c, f, 3, same(), rng);
    e2_ = nn::Conv2d::create(params_, "e2", f, 2 * f, 3, {2, 1, 1}, rng);
    r1_ = nn::Conv2d::create(params_, "r1", 2 * f, 2 * f, 3, same(), rng);
    r2_ = nn::Conv2d::create(params_, "r2", 2 * f, 2 * f, 3, same(), rng, 0.5);
    d1_ = nn::Conv2d::create(params_, "d1", 3 * f, f, 3, same(), rng);
    out_ = nn::Conv2d::create(params_, "out", f, c, 3, same(), rng, 0.0);
  }

  nn::Var forward(const nn::Var& x, const nn::Tensor*) const override {
    const auto& s = x->value.shape();
    const nn::Var a = nn::leaky_relu(e1_(x));
    const nn::Var b = nn::leaky_relu(e2_(a));
    const nn::Var r = nn::add(b, r2_(nn::leaky_relu(r1_(b))));
    const nn::Var u = nn::upsample_to(r, s.h, s.w);
    const nn::Var d = nn::leaky_relu(d1_(nn::concat_channels(u, a)));
    return nn::clamp01(nn::add(x, out_(d)));
  }

 private:
  nn::Conv2d e1_, e2_, r1_, r2_, d1_, out_;
};

// Coarse-to-fine inpainting: harmonic fill of the hole, then a stack of
// gated dilated convolutions refining it. Known pixels pass through.
class GatedInpaintGenerator final : public Generator {
 public:
  GatedInpaintGenerator(const GeneratorSpec& spec, Rng& rng) : Generator(spec) {
    const int c = spec.channels;
    const int f = spec.width;
    const int dil[3] = {1, 2, 4};
    int in = c + 1;
    for (int i = 0; i < 3; ++i) {
      const std::string name = "g" + std::to_string(i + 1);
      feature_[i] = nn::Conv2d::create(params_, name + ".feature", in, f, 3, same(dil[i]), rng);
      gate_[i] = nn::Conv2d::create(params_, name + ".gate", in, f, 3, same(dil[i]), rng);
      in = f;
    }
    out_ = nn::Conv2d::create(params_, "out", f, c, 3, same(), rng, 0.0);
  }

  nn::Var forward(const nn::Var& x, const nn::Tensor* hole) const override {
    const auto& s = x->value.shape();
    const nn::Tensor mask = hole ? *hole : nn::Tensor({s.n, 1, s.h, s.w}, 0.0);
    if (!(mask.shape() == nn::Shape{s.n, 1, s.h, s.w})) throw Error(ErrorCode::kShapeMismatch, "hole mask shape");
    const nn::Tensor coarse = diffusion_fill(x->value, mask);
    nn::Var h = nn::concat_channels(nn::constant(coarse), nn::constant(mask));
    for (int i = 0; i < 3; ++i) h = nn::mul(nn::leaky_relu(feature_[i](h)), nn::sigmoid(gate_[i](h)));
    const nn::Var refined = nn::clamp01(nn::add(nn::constant(coarse), out_(h)));

    nn::Tensor known = x->value;
    nn::Tensor hole_c(s);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
          const double m = mask[n * plane + i];
          const std::size_t k = (static_cast<std::size_t>(n) * s.c + c) * plane + i;
          hole_c[k] = m;
          known[k] *= 1.0 - m;
        }
      }
    }
    return nn::add(nn::constant(std::move(known)), nn::mul(refined, nn::constant(std::move(hole_c))));
  }

 private:
  nn::Conv2d feature_[3];
  nn::Conv2d gate_[3];
  nn::Conv2d out_;
};

}  // namespace

std::unique_ptr<Generator> Generator::create(const GeneratorSpec& spec, std::uint64_t seed) {
  if (spec.channels < 1 || spec.width < 1) throw Error(ErrorCode::kInvalidArgument, "bad generator spec");
  Rng rng(seed);
  if (spec.backbone == Backbone::kResidual) return std::make_unique<ResidualGenerator>(spec, rng);
  return std::make_unique<GatedInpaintGenerator>(spec, rng);
}

Image Generator::apply(const Image& x, const Image* hole) const {
  const nn::Var in = nn::constant(nn::Tensor::from_image(x));
  if (hole) {
    const nn::Tensor mask = nn::Tensor::from_image(*hole);
    return forward(in, &mask)->value.to_image(0);
  }
  return forward(in, nullptr)->value.to_image(0);
}

nn::Tensor diffusion_fill(const nn::Tensor& x, const nn::Tensor& hole, int iterations) {
  const auto& s = x.shape();
  nn::Tensor out = x;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const double* m = hole.data().data() + n * plane;
    std::vector<std::size_t> holes;
    for (std::size_t i = 0; i < plane; ++i) {
      if (m[i] > 0.5) holes.push_back(i);
    }
    if (holes.empty()) continue;
    for (int c = 0; c < s.c; ++c) {
      double* p = out.data().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      double known_sum = 0.0;
      std::size_t known = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        if (m[i] <= 0.5) {
          known_sum += p[i];
          ++known;
        }
      }
      const double fallback = known ? known_sum / static_cast<double>(known) : 0.5;
      // Row-wise initialization from the nearest known pixels left and right.
      for (int r = 0; r < s.h; ++r) {
        const std::size_t row = static_cast<std::size_t>(r) * s.w;
        for (int col = 0; col < s.w; ++col) {
          if (m[row + col] <= 0.5) continue;
          int l = col;
          while (l >= 0 && m[row + l] > 0.5) --l;
          int rr = col;
          while (rr < s.w && m[row + rr] > 0.5) ++rr;
          double acc = 0.0;
          int cnt = 0;
          if (l >= 0) {
            acc += p[row + l];
            ++cnt;
          }
          if (rr < s.w) {
            acc += p[row + rr];
            ++cnt;
          }
          p[row + col] = cnt ? acc / cnt : fallback;
        }
      }
      for (int it = 0; it < iterations; ++it) {
        for (std::size_t i : holes) {
          const int r = static_cast<int>(i / s.w);
          const int col = static_cast<int>(i % s.w);
          double acc = 0.0;
          int cnt = 0;
          if (r > 0) acc += p[i - s.w], ++cnt;
          if (r + 1 < s.h) acc += p[i + s.w], ++cnt;
          if (col > 0) acc += p[i - 1], ++cnt;
          if (col + 1 < s.w) acc += p[i + 1], ++cnt;
          if (cnt) p[i] = acc / cnt;
        }
      }
    }
  }
  return out;
}

Discriminator::Discriminator(int channels, int width, std::uint64_t seed) {
  Rng rng(seed);
  c1_ = nn::Conv2d::create(params_, "c1", channels, width, 3, {2, 1, 1}, rng);
  c2_ = nn::Conv2d::create(params_, "c2", width, 2 * width, 3, {2, 1, 1}, rng);
  c3_ = nn::Conv2d::create(params_, "c3", 2 * width, 1, 3, {1, 1, 1}, rng);
}

nn::Var Discriminator::forward(const nn::Var& x) const {
  return c3_(nn::leaky_relu(c2_(nn::leaky_relu(c1_(x)))));
}

// ---------------------------------------------------------------------------
// Config

void GanConfig::validate() const {
  if (steps < 0) throw Error(ErrorCode::kBadSchema, "gan.steps must be >= 0");
  if (batch_size < 1 || width < 1) throw Error(ErrorCode::kBadSchema, "gan.batch_size and gan.width must be >= 1");
  for (double w : {lambda_adv, lambda_task, lambda_cycle, lambda_identity, lambda_rec}) {
    if (w < 0.0) throw Error(ErrorCode::kBadSchema, "loss weights must be >= 0");
  }
  if (lr_g <= 0.0 || lr_d <= 0.0) throw Error(ErrorCode::kBadSchema, "learning rates must be positive");
  if (diverge_patience < 1) throw Error(ErrorCode::kBadSchema, "gan.diverge_patience must be >= 1");
}

void to_json(json& j, const GanConfig& c) {
  j = json{{"backbone", to_string(c.backbone)},
           {"width", c.width},
           {"lr_g", c.lr_g},
           {"lr_d", c.lr_d},
           {"batch_size", c.batch_size},
           {"steps", c.steps},
           {"lambda_adv", c.lambda_adv},
           {"lambda_task", c.lambda_task},
           {"lambda_cycle", c.lambda_cycle},
           {"lambda_identity", c.lambda_identity},
           {"lambda_rec", c.lambda_rec},
           {"task_loss", c.task_loss == TaskLoss::kDeblur ? "deblur" : "none"},
           {"histogram_bins", c.deblur.bins},
           {"jitter", {{"brightness", c.jitter.brightness}, {"contrast", c.jitter.contrast}, {"hue", c.jitter.hue}}},
           {"checkpoint_every", c.checkpoint_every},
           {"diverge_patience", c.diverge_patience},
           {"seed", c.seed}};
}

void from_json(const json& j, GanConfig& c) {
  c = GanConfig{};
  c.backbone = backbone_from_string(j.value("backbone", std::string("residual")));
  c.width = j.value("width", c.width);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.lambda_task = j.value("lambda_task", c.lambda_task);
  c.lambda_cycle = j.value("lambda_cycle", c.lambda_cycle);
  c.lambda_identity = j.value("lambda_identity", c.lambda_identity);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  const std::string task = j.value("task_loss", std::string("none"));
  if (task != "none" && task != "deblur") throw Error(ErrorCode::kBadSchema, "unknown task_loss '" + task + "'");
  c.task_loss = task == "deblur" ? TaskLoss::kDeblur : TaskLoss::kNone;
  c.deblur.bins = j.value("histogram_bins", c.deblur.bins);
  if (j.contains("jitter")) {
    const auto& jj = j.at("jitter");
    c.jitter.brightness = jj.value("brightness", 0.0);
    c.jitter.contrast = jj.value("contrast", 0.0);
    c.jitter.hue = jj.value("hue", 0.0);
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.diverge_patience = j.value("diverge_patience", c.diverge_patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

// ---------------------------------------------------------------------------
// Training

std::size_t GanTrainingData::source_count() const {
  std::size_t n = 0;
  for (const auto& s : source) n += s.patches.size();
  return n;
}

namespace {

std::string rng_to_string(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_string(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw Error(ErrorCode::kBadCheckpoint, "corrupt rng state");
  return rng;
}

nn::Tensor stack(const PatchSet& set, const std::vector<std::size_t>& idx, Rng* jitter_rng,
                 const JitterRanges& ranges) {
  std::vector<Image> images;
  images.reserve(idx.size());
  for (std::size_t i : idx) {
    const Image& p = set.patches[i].pixels;
    images.push_back(jitter_rng && !ranges.is_zero() ? color_jitter(p, *jitter_rng, ranges) : p);
  }
  return nn::Tensor::from_images(images);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

GanModel::GanModel(const GanConfig& config, int channels) : config_(config), channels_(channels) {
  config_.validate();
  const GeneratorSpec spec{config.backbone, channels, config.width};
  forward_ = Generator::create(spec, derive_seed(config.seed, "gan/G"));
  d_target_ = std::make_unique<Discriminator>(channels, config.width, derive_seed(config.seed, "gan/D_target"));
  g_params_.append("G.", forward_->params());
  d_params_.append("D_t.", d_target_->params());
  if (config.backbone == Backbone::kResidual) {
    reverse_ = Generator::create(spec, derive_seed(config.seed, "gan/F"));
    d_source_ = std::make_unique<Discriminator>(channels, config.width, derive_seed(config.seed, "gan/D_source"));
    g_params_.append("F.", reverse_->params());
    d_params_.append("D_s.", d_source_->params());
  }
  opt_g_ = std::make_unique<nn::Adam>(g_params_, nn::AdamOptions{config.lr_g});
  opt_d_ = std::make_unique<nn::Adam>(d_params_, nn::AdamOptions{config.lr_d});
  state_.rng_state = rng_to_string(make_rng(config.seed, "gan/batches"));
}

nn::ParamList GanModel::all_params() const {
  nn::ParamList all;
  all.append("", g_params_);
  all.append("", d_params_);
  return all;
}

LossRecord GanModel::train_step(const GanTrainingData& data, Rng& rng) {
  if (data.source.empty() || data.target.empty()) throw Error(ErrorCode::kEmptySet, "empty GAN training data");
  const std::size_t which = static_cast<std::size_t>(state_.step) % data.source.size();
  const PatchSet& src = data.source[which];
  const PatchSet* tgt = nullptr;
  for (const auto& t : data.target) {
    if (t.size == src.size && !t.patches.empty()) tgt = &t;
  }
  if (src.patches.empty() || !tgt) throw Error(ErrorCode::kEmptySet, "no target patches of size " + std::to_string(src.size));
  const MaskPatchSet* masks = which < data.source_masks.size() ? &data.source_masks[which] : nullptr;
  if (config_.backbone == Backbone::kGatedInpaint && !masks) {
    throw Error(ErrorCode::kInvalidArgument, "inpainting backbone needs source masks");
  }

  const int b = config_.batch_size;
  std::vector<std::size_t> si(b), ti(b);
  for (auto& i : si) i = uniform_index(rng, src.patches.size());
  for (auto& i : ti) i = uniform_index(rng, tgt->patches.size());

  const nn::Tensor xs = stack(src, si, nullptr, {});
  const nn::Tensor xt = stack(*tgt, ti, nullptr, {});
  const nn::Tensor xt_real = stack(*tgt, ti, &rng, config_.jitter);
  const nn::Tensor xs_real = has_cycle() ? stack(src, si, &rng, config_.jitter) : nn::Tensor();
  nn::Tensor hole;
  if (masks) hole = stack(*masks, si, nullptr, {});

  const nn::Var xs_v = nn::constant(xs);
  const nn::Var xt_v = nn::constant(xt);
  LossRecord rec;
  rec.step = state_.step + 1;

  // Generator update.
  g_params_.zero_grad();
  d_params_.zero_grad();
  nn::Var fake_t;
  nn::Var fake_s;
  nn::Var total;
  nn::Var adv;
  if (has_cycle()) {
    fake_t = forward_->forward(xs_v, nullptr);
    fake_s = reverse_->forward(xt_v, nullptr);
    adv = nn::add(generator_loss(d_target_->forward(fake_t)), generator_loss(d_source_->forward(fake_s)));
    const nn::Var cyc = nn::add(nn::mean(nn::abs(nn::sub(reverse_->forward(fake_t, nullptr), xs_v))),
                                nn::mean(nn::abs(nn::sub(forward_->forward(fake_s, nullptr), xt_v))));
    const nn::Var idt = nn::add(nn::mean(nn::abs(nn::sub(forward_->forward(xt_v, nullptr), xt_v))),
                                nn::mean(nn::abs(nn::sub(reverse_->forward(xs_v, nullptr), xs_v))));
    total = nn::add(nn::scale(adv, config_.lambda_adv),
                    nn::add(nn::scale(cyc, config_.lambda_cycle), nn::scale(idt, config_.lambda_identity)));
  } else {
    fake_t = forward_->forward(xs_v, &hole);
    adv = generator_loss(d_target_->forward(fake_t));
    const nn::Var recon = nn::mean(nn::abs(nn::sub(forward_->forward(xt_v, &hole), xt_v)));
    total = nn::add(nn::scale(adv, config_.lambda_adv), nn::scale(recon, config_.lambda_rec));
  }
  if (config_.task_loss == TaskLoss::kDeblur) {
    const nn::Var task = deblur_loss(xs, fake_t, config_.deblur);
    rec.l_task = task->value[0];
    total = nn::add(total, nn::scale(task, config_.lambda_task));
  }
  rec.l_g = adv->value[0];

  const bool g_ok = finite(total->value[0]);
  if (g_ok) {
    nn::backward(total);
    opt_g_->step();
  }

  // Discriminator update on detached fakes.
  d_params_.zero_grad();
  nn::Var ld = discriminator_loss(d_target_->forward(nn::constant(fake_t->value)), d_target_->forward(nn::constant(xt_real)));
  if (has_cycle()) {
    ld = nn::add(ld, discriminator_loss(d_source_->forward(nn::constant(fake_s->value)),
                                        d_source_->forward(nn::constant(xs_real))));
  }
  rec.l_d = ld->value[0];
  const bool d_ok = finite(rec.l_d);
  if (d_ok) {
    nn::backward(ld);
    opt_d_->step();
  }

  ++state_.step;
  state_.log.push_back(rec);
  if (g_ok && d_ok && finite(rec.l_g) && finite(rec.l_task)) {
    state_.nonfinite_streak = 0;
  } else if (++state_.nonfinite_streak >= config_.diverge_patience) {
    throw Error(ErrorCode::kDiverged, "non-finite GAN loss for " + std::to_string(state_.nonfinite_streak) + " steps");
  }
  return rec;
}

void GanModel::train(const GanTrainingData& data, const std::function<void(const GanModel&)>& on_checkpoint) {
  if (data.source_count() == 0) throw Error(ErrorCode::kEmptySet, "no source patches");
  for (const auto& s : data.source) {
    for (const auto& p : s.patches) {
      if (p.pixels.channels() != channels_) throw Error(ErrorCode::kShapeMismatch, "patch channel count");
    }
  }
  Rng rng = rng_from_string(state_.rng_state);
  while (state_.step < config_.steps) {
    train_step(data, rng);
    state_.rng_state = rng_to_string(rng);
    if (on_checkpoint && config_.checkpoint_every > 0 && state_.step % config_.checkpoint_every == 0) {
      on_checkpoint(*this);
    }
  }
  state_.rng_state = rng_to_string(rng);
}

Archive GanModel::to_archive() const {
  json log = json::array();
  for (const auto& r : state_.log) log.push_back({r.step, r.l_g, r.l_d, r.l_task});
  json meta{{"kind", "gan"},
            {"channels", channels_},
            {"config", config_},
            {"train_state",
             {{"step", state_.step},
              {"nonfinite_streak", state_.nonfinite_streak},
              {"rng", state_.rng_state},
              {"adam_g_step", opt_g_->step_count()},
              {"adam_d_step", opt_d_->step_count()},
              {"log", log}}}};
  Archive archive;
  archive.config_json = meta.dump();
  store_params(archive, g_params_, "");
  store_params(archive, d_params_, "");
  for (std::size_t i = 0; i < opt_g_->first_moments().size(); ++i) {
    archive.blobs.emplace_back("adam_g/" + std::to_string(i) + "/m", opt_g_->first_moments()[i]);
    archive.blobs.emplace_back("adam_g/" + std::to_string(i) + "/v", opt_g_->second_moments()[i]);
  }
  for (std::size_t i = 0; i < opt_d_->first_moments().size(); ++i) {
    archive.blobs.emplace_back("adam_d/" + std::to_string(i) + "/m", opt_d_->first_moments()[i]);
    archive.blobs.emplace_back("adam_d/" + std::to_string(i) + "/v", opt_d_->second_moments()[i]);
  }
  return archive;
}

namespace {

json parse_meta(const Archive& archive, const char* kind) {
  json meta;
  try {
    meta = json::parse(archive.config_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, std::string("config snapshot: ") + e.what());
  }
  if (meta.value("kind", std::string()) != kind) {
    throw Error(ErrorCode::kBadCheckpoint, std::string("archive is not a ") + kind + " checkpoint");
  }
  return meta;
}

void load_moments(const Archive& archive, const std::string& prefix, std::vector<nn::Tensor>& m,
                  std::vector<nn::Tensor>& v) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    const nn::Tensor* bm = archive.find(prefix + std::to_string(i) + "/m");
    const nn::Tensor* bv = archive.find(prefix + std::to_string(i) + "/v");
    if (!bm || !bv || !(bm->shape() == m[i].shape()) || !(bv->shape() == v[i].shape())) {
      throw Error(ErrorCode::kBadCheckpoint, "optimizer state mismatch");
    }
    m[i] = *bm;
    v[i] = *bv;
  }
}

}  // namespace

GanModel GanModel::from_archive(const Archive& archive) {
  const json meta = parse_meta(archive, "gan");
  GanModel model(meta.at("config").get<GanConfig>(), meta.at("channels").get<int>());
  load_params(archive, model.g_params_, "");
  load_params(archive, model.d_params_, "");
  load_moments(archive, "adam_g/", model.opt_g_->first_moments(), model.opt_g_->second_moments());
  load_moments(archive, "adam_d/", model.opt_d_->first_moments(), model.opt_d_->second_moments());
  const json& ts = meta.at("train_state");
  model.state_.step = ts.at("step").get<int>();
  model.state_.nonfinite_streak = ts.at("nonfinite_streak").get<int>();
  model.state_.rng_state = ts.at("rng").get<std::string>();
  model.opt_g_->set_step_count(ts.at("adam_g_step").get<long>());
  model.opt_d_->set_step_count(ts.at("adam_d_step").get<long>());
  for (const auto& r : ts.at("log")) {
    model.state_.log.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()});
  }
  return model;
}

std::shared_ptr<const Generator> GanModel::load_generator(const Archive& archive) {
  const json meta = parse_meta(archive, "gan");
  const GanConfig config = meta.at("config").get<GanConfig>();
  std::shared_ptr<Generator> g =
      Generator::create({config.backbone, meta.at("channels").get<int>(), config.width}, 0);
  load_params(archive, g->params(), "G.");
  return g;
}

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "step,L_G,L_D,L_task\n";
  for (const auto& r : log) out << r.step << ',' << r.l_g << ',' << r.l_d << ',' << r.l_task << '\n';
  write_file_atomic(path, out.str());
}

Image translate(const Generator& generator, const Image& image, const Image* hole) {
  if (image.height() < Generator::kMinSize || image.width() < Generator::kMinSize) {
    throw Error(ErrorCode::kTooSmall, "image smaller than the generator minimum");
  }
  if (image.channels() != generator.spec().channels) {
    throw Error(ErrorCode::kShapeMismatch, "image channel count does not match the generator");
  }
  if (hole && !hole->same_size(image)) throw Error(ErrorCode::kShapeMismatch, "hole mask size");
  return generator.apply(image, hole);
}

}  // namespace localdom

// Acceptance harness: one PASS/FAIL line per numbered criterion. Reference
// values come from independent oracles implemented here, not from the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "localdom/checkpoint.hpp"
#include "localdom/error.hpp"
#include "localdom/evalkit.hpp"
#include "localdom/geometry_priors.hpp"
#include "localdom/inference.hpp"
#include "localdom/mask_vae.hpp"
#include "localdom/patch_gan.hpp"
#include "localdom/pipeline.hpp"

namespace fs = std::filesystem;
using namespace localdom;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Image random_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (double& v : img.data()) v = uniform(rng, 0.0, 1.0);
  return img;
}

// Random blobs of ids {0, 1, 2}; every id is guaranteed at least one pixel.
GeometricPrior random_prior(Rng& rng, int h, int w) {
  GeometricPrior p{Grid<int>(h, w, 0), PriorSource::kPerImageLabels};
  const int blobs = 3 + static_cast<int>(uniform_index(rng, 5));
  for (int b = 0; b < blobs; ++b) {
    const int id = 1 + static_cast<int>(uniform_index(rng, 2));
    const double cr = uniform(rng, 0, h);
    const double cc = uniform(rng, 0, w);
    const double rad = uniform(rng, 2.0, std::max(3.0, std::min(h, w) / 3.0));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (std::hypot(r - cr, c - cc) < rad) p.mask.at(r, c) = id;
  }
  p.mask.at(0, 0) = 0;
  p.mask.at(h - 1, w - 1) = 1;
  p.mask.at(h / 2, w / 2) = 2;
  return p;
}

void randomize(const nn::ParamList& params, Rng& rng, double scale) {
  for (const auto& [name, var] : params.items()) {
    for (double& v : var->value.data()) v = scale * standard_normal(rng);
  }
}

double gray_px(const Image& img, int r, int c) {
  if (img.channels() == 1) return img.at(0, r, c);
  return 0.299 * img.at(0, r, c) + 0.587 * img.at(1, r, c) + 0.114 * img.at(2, r, c);
}

// Average ranks (ties share the mean rank).
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (i + j) / 2.0 + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Smallest k with P(X <= k) >= q for X ~ Binomial(n, p).
int binomial_quantile(int n, double p, double q) {
  double cdf = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double logpmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                          (n - k) * std::log1p(-p);
    cdf += std::exp(logpmf);
    if (cdf >= q) return k;
  }
  return n;
}

// Central finite differences of f at x versus the supplied analytic gradient.
double max_relative_error(std::vector<double> x, const std::vector<double>& analytic,
                          const std::function<double(const std::vector<double>&)>& f, double h = 1e-4) {
  std::vector<double> numeric(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    numeric[i] = (fp - fm) / (2 * h);
  }
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double denom = std::max({std::abs(numeric[i]), std::abs(analytic[i]), 1e-6 * scale, 1e-12});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

bool throws_code(ErrorCode code, const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 4 + static_cast<int>(uniform_index(rng, 20));
    const int w = 4 + static_cast<int>(uniform_index(rng, 20));
    const Image xa = random_image(rng, h, w, 3);
    const Image xb = random_image(rng, h, w, 3);
    const Image pz = random_image(rng, h, w, 1);
    ok = ok && blend(xa, xb, pz, 0.0) == xb;
    ok = ok && blend(xa, xb, Image(h, w, 1, 1.0), 1.0) == xa;
    ok = ok && blend(xa, xb, Image(h, w, 3, 1.0), 1.0) == xa;
  }
  MaskVaeConfig vc;
  vc.patch_size = 8;
  vc.latent = 6;
  vc.seed = 5;
  MaskVae vae(vc);
  for (int trial = 0; trial < 5; ++trial) {
    Image pa = random_image(rng, 8, 8, 1);
    Image pb = random_image(rng, 8, 8, 1);
    for (double& v : pa.data()) v = v > 0.5 ? 1.0 : 0.0;
    for (double& v : pb.data()) v = v > 0.7 ? 1.0 : 0.0;
    ok = ok && interpolate_latent(vae, pa, pb, 1.0) == vae.encode(pa);
    ok = ok && interpolate_latent(vae, pa, pb, 0.0) == vae.encode(pb);
  }
  const double dt = seconds_since(t0);
  return {ok && dt < 1.0, fmt("identities bit-exact over 25 trials, %.3f s", dt)};
}

Outcome criterion2() {
  const std::vector<double> ones(64, 1.0);
  const std::vector<double> zeros(64, 0.0);
  const std::vector<double> logvar0(16, 0.0);
  const std::vector<double> mu0(16, 0.0);
  Rng rng(7);
  const Histogram h = histogram(random_image(rng, 16, 16, 3), 32);
  const double g = generator_loss(ones);
  const double d = discriminator_loss(zeros, ones);
  const double kl = gaussian_kl(mu0, logvar0);
  const double hk = histogram_kl(h, h);
  const double gv = generator_loss(nn::constant(nn::Tensor({1, 1, 8, 8}, 1.0)))->value[0];
  const double dv =
      discriminator_loss(nn::constant(nn::Tensor({1, 1, 8, 8}, 0.0)), nn::constant(nn::Tensor({1, 1, 8, 8}, 1.0)))
          ->value[0];
  const double worst = std::max({std::abs(g), std::abs(d), std::abs(kl), std::abs(hk), std::abs(gv), std::abs(dv)});
  return {worst <= 1e-12, fmt("max |loss at optimum| = %.3g", worst)};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  Rng rng(33);
  double worst = 0.0;

  // generator_loss directly on an 8x8 score map.
  {
    std::vector<double> s(64);
    for (double& v : s) v = uniform(rng, -1.0, 2.0);
    auto var = nn::parameter(nn::Tensor({1, 1, 8, 8}, s));
    nn::backward(generator_loss(var));
    worst = std::max(worst, max_relative_error(s, var->grad.data(), [](const std::vector<double>& x) {
                       return generator_loss(std::span<const double>(x));
                     }));
  }
  // generator_loss through a patch discriminator, w.r.t. an 8x8 image.
  {
    Discriminator disc(3, 4, 9);
    const Image x = random_image(rng, 8, 8, 3);
    auto var = nn::parameter(nn::Tensor::from_image(x));
    nn::backward(generator_loss(disc.forward(var)));
    worst = std::max(worst, max_relative_error(x.data(), var->grad.data(), [&](const std::vector<double>& v) {
                       return generator_loss(disc.forward(nn::constant(nn::Tensor({1, 3, 8, 8}, v))))->value[0];
                     }));
  }
  // Soft-histogram KL against a fixed reference.
  {
    const int bins = 16;
    const double bw = 1.0 / bins;
    const Image ref_img = random_image(rng, 8, 8, 3);
    const nn::Tensor ref = nn::soft_histogram(nn::constant(nn::Tensor::from_image(ref_img)), bins, bw)->value;
    const Image x = random_image(rng, 8, 8, 3);
    auto f = [&](const nn::Var& v) { return nn::histogram_kl(ref, nn::soft_histogram(v, bins, bw), kHistogramFloor); };
    auto var = nn::parameter(nn::Tensor::from_image(x));
    nn::backward(f(var));
    worst = std::max(worst, max_relative_error(x.data(), var->grad.data(), [&](const std::vector<double>& v) {
                       return f(nn::constant(nn::Tensor({1, 3, 8, 8}, v)))->value[0];
                     }));
  }
  // 1 / (var(LoG) + eps) focus term.
  {
    const Image x = random_image(rng, 8, 8, 3);
    auto f = [&](const nn::Var& v) {
      return nn::reciprocal(nn::add_scalar(nn::log_variance(v, kLogSigma), kFocusFloor));
    };
    auto var = nn::parameter(nn::Tensor::from_image(x));
    nn::backward(f(var));
    worst = std::max(worst, max_relative_error(x.data(), var->grad.data(), [&](const std::vector<double>& v) {
                       return f(nn::constant(nn::Tensor({1, 3, 8, 8}, v)))->value[0];
                     }));
    // The scalar path used outside training agrees with the graph.
    const double scalar = 1.0 / (log_variance_focus(x) + kFocusFloor);
    if (std::abs(scalar - f(nn::constant(nn::Tensor::from_image(x)))->value[0]) > 1e-9 * std::abs(scalar)) worst = 1.0;
  }
  const double dt = seconds_since(t0);
  return {worst < 1e-3 && dt < 30.0, fmt("max relative error %.3g", worst) + fmt(", %.2f s", dt)};
}

Outcome criterion4() {
  Rng rng(404);
  int checked = 0;
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 6 + static_cast<int>(uniform_index(rng, 35));
    const int w = 6 + static_cast<int>(uniform_index(rng, 35));
    const double density = uniform(rng, 0.02, 0.6);
    Image ind(h, w, 1);
    for (double& v : ind.data()) v = uniform(rng, 0.0, 1.0) < density ? 1.0 : 0.0;
    PatchSpec spec;
    spec.size = 2 + static_cast<int>(uniform_index(rng, std::min(h, w) - 1));
    spec.per_image = 1 + static_cast<int>(uniform_index(rng, 30));
    spec.seed = rng();

    std::set<std::pair<int, int>> valid;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        // Margin of size/2 from every border; the crop is then in-bounds.
        const int m = spec.size / 2;
        const int top = r - m;
        const int left = c - m;
        const bool margin = r >= m && c >= m && r + m <= h - 1 && c + m <= w - 1;
        const bool in_bounds = top >= 0 && left >= 0 && top + spec.size <= h && left + spec.size <= w;
        if (ind.at(0, r, c) == 1.0 && margin && in_bounds) valid.insert({r, c});
      }
    Rng srng(spec.seed);
    if (valid.empty()) {
      ok = ok && throws_code(ErrorCode::kEmptyDomain, [&] { sample_patch_centers(ind, spec, srng); });
      continue;
    }
    const auto centers = sample_patch_centers(ind, spec, srng);
    ok = ok && static_cast<int>(centers.size()) == spec.per_image;
    for (const auto& c : centers) ok = ok && valid.count({c.row, c.col}) == 1;
    const auto listed = valid_centers(ind, spec.size);
    ok = ok && listed.size() == valid.size();
    for (const auto& c : listed) ok = ok && valid.count({c.row, c.col}) == 1;

    // Crops follow the sampled centers and the mask patch is 1 at the center.
    GeometricPrior prior{Grid<int>(h, w, 0), PriorSource::kPerImageLabels};
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) prior.mask.at(r, c) = ind.at(0, r, c) == 1.0 ? 2 : 0;
    const Image img = random_image(rng, h, w, 3);
    const auto ex = extract_patches(img, prior, 2, spec, "img");
    for (std::size_t i = 0; i < ex.patches.patches.size(); ++i) {
      const auto& p = ex.patches.patches[i];
      const int top = patch_origin(p.center.row, spec.size);
      const int left = patch_origin(p.center.col, spec.size);
      ok = ok && valid.count({p.center.row, p.center.col}) == 1;
      ok = ok && p.pixels == crop(img, top, left, spec.size, spec.size);
      ok = ok && ex.masks.patches[i].pixels.at(0, spec.size / 2, spec.size / 2) == 1.0;
    }
    ++checked;
  }
  Rng zr(1);
  ok = ok && throws_code(ErrorCode::kEmptyDomain, [&] { sample_patch_centers(Image(20, 20, 1, 0.0), {8, 4, 1}, zr); });
  return {ok, "50 random instances: " + std::to_string(checked) + " sampled, " + std::to_string(50 - checked) +
                  " without valid centers raised EmptyDomain; all-zero masks raise EmptyDomain"};
}

Outcome criterion5() {
  Rng rng(505);
  bool ok = true;
  for (int trial = 0; trial < 30; ++trial) {
    const int size = 4 + static_cast<int>(uniform_index(rng, 12));
    const int h = size + static_cast<int>(uniform_index(rng, 40));
    const int w = size + static_cast<int>(uniform_index(rng, 40));
    const int ch = trial % 2 == 0 ? 1 : 3;
    const Image img = random_image(rng, h, w, ch);
    const TilePlan p0 = make_tile_plan(h, w, size, 0);
    ok = ok && stitch_masks(split(img, p0), p0) == img;
    const int overlap = 1 + static_cast<int>(uniform_index(rng, size - 1));
    const TilePlan p1 = make_tile_plan(h, w, size, overlap);
    ok = ok && stitch_masks(split(img, p1), p1) == img;
  }
  // Two disagreeing tiles: the shared strip is their exact mean.
  for (int trial = 0; trial < 30; ++trial) {
    const double a = uniform(rng, 0.0, 1.0);
    const double b = uniform(rng, 0.0, 1.0);
    const TilePlan plan = make_tile_plan(8, 14, 8, 2);
    if (plan.tiles.size() != 2) return {false, "unexpected tile plan"};
    const Image s = stitch_masks({Image(8, 8, 1, a), Image(8, 8, 1, b)}, plan);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 14; ++c) {
        const double want = c < 6 ? a : (c < 8 ? (a + b) / 2.0 : b);
        ok = ok && s.at(0, r, c) == want;
      }
  }
  return {ok, "60 round trips bit-exact, 30 disagreement strips exact"};
}

Outcome criterion6() {
  Rng rng(606);
  bool ok = true;
  long changed_inside = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 16 + static_cast<int>(uniform_index(rng, 25));
    const int w = 16 + static_cast<int>(uniform_index(rng, 25));
    const Image x = random_image(rng, h, w, 3);
    const GeometricPrior prior = random_prior(rng, h, w);
    GeneratorSpec gs{trial % 2 == 0 ? Backbone::kGatedInpaint : Backbone::kResidual, 3, 4};
    auto gen = Generator::create(gs, rng());
    randomize(gen->params(), rng, 0.3);
    TranslatorBundle bundle;
    bundle.generator = std::move(gen);
    bundle.alpha_id = 1;
    bundle.beta_id = 2;
    bundle.overlap = 2;
    HallucinateOptions opt;
    opt.gamma = uniform(rng, 0.0, 1.0);
    if (trial % 4 < 2) {
      MaskVaeConfig vc;
      vc.patch_size = 8;
      vc.latent = 4;
      vc.seed = rng();
      bundle.vae = std::make_shared<MaskVae>(vc);
      opt.z = uniform(rng, 0.0, 1.0);
    }
    const Image out = hallucinate(bundle, x, prior, opt).output;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int k = 0; k < 3; ++k) {
          if (prior.mask.at(r, c) != 2) {
            ok = ok && out.at(k, r, c) == x.at(k, r, c);
          } else if (out.at(k, r, c) != x.at(k, r, c)) {
            ++changed_inside;
          }
        }
  }
  return {ok && changed_inside > 0,
          "outside-beta pixels bit-identical on 20 inputs; " + std::to_string(changed_inside) + " beta values edited"};
}

Outcome criterion7() {
  Rng rng(707);
  const DistanceBackend backend = pixel_backend();
  bool ok = true;
  int tie_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int nc = 1 + static_cast<int>(uniform_index(rng, 20));
    const int nd = 1 + static_cast<int>(uniform_index(rng, 30));
    const int ch = trial % 3 == 0 ? 3 : 1;
    auto coarse = [&] {
      Image img(4, 4, ch);
      for (double& v : img.data()) v = static_cast<double>(uniform_index(rng, 3)) / 2.0;
      return img;
    };
    std::vector<Image> clear(nc), degraded(nd);
    for (auto& c : clear) c = coarse();
    for (int j = 0; j < nd; ++j) {
      degraded[j] = j > 0 && uniform_index(rng, 3) == 0 ? degraded[uniform_index(rng, j)] : coarse();
    }

    std::vector<Pairing> want;
    std::vector<bool> chosen(nd, false);
    for (int i = 0; i < nc; ++i) {
      std::vector<double> dist(nd);
      for (int j = 0; j < nd; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < clear[i].size(); ++k) {
          const double e = clear[i].data()[k] - degraded[j].data()[k];
          s += e * e;
        }
        dist[j] = std::sqrt(s / clear[i].size());
        if (std::abs(dist[j] - backend.distance(clear[i], degraded[j])) > 1e-12) ok = false;
        dist[j] = backend.distance(clear[i], degraded[j]);
      }
      int best = 0;
      for (int j = 1; j < nd; ++j)
        if (dist[j] < dist[best]) best = j;
      if (std::count(dist.begin(), dist.end(), dist[best]) > 1) ++tie_cases;
      chosen[best] = true;
      want.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(best), dist[best]});
    }
    std::vector<std::size_t> unmatched;
    for (int j = 0; j < nd; ++j)
      if (!chosen[j]) unmatched.push_back(j);
    const auto got = pair_by_distance(clear, degraded, backend);
    ok = ok && got.pairs == want && got.unmatched_degraded == unmatched;
  }
  return {ok && tie_cases > 0, "100 instances match brute force (" + std::to_string(tie_cases) + " tied argmins)"};
}

// Mean over lane pixels of |gray - local background|, the background being
// the mean input gray of the asphalt ring pixels in the same row.
struct BandEnergy {
  double sum = 0.0;
  long count = 0;
};

BandEnergy band_energy(const Image& input, const Image& img, const GeometricPrior& prior, int lane_id, int ring_id) {
  BandEnergy e;
  for (int r = 0; r < input.height(); ++r) {
    double bg = 0.0;
    int n = 0;
    for (int c = 0; c < input.width(); ++c)
      if (prior.mask.at(r, c) == ring_id) {
        bg += gray_px(input, r, c);
        ++n;
      }
    if (n == 0) continue;
    bg /= n;
    for (int c = 0; c < input.width(); ++c)
      if (prior.mask.at(r, c) == lane_id) {
        e.sum += std::abs(gray_px(img, r, c) - bg);
        ++e.count;
      }
  }
  return e;
}

struct StripesRun {
  TaskConfig config;
  fs::path dir;
  double seconds = 0.0;
};

StripesRun run_stripes(const fs::path& work, const std::string& name) {
  StripesRun run;
  run.config = preset_config("stripes");
  run.config.base_dir = work;
  run.config.output_dir = name;
  run.dir = work / name;
  const auto t0 = Clock::now();
  run_recipe(run.config, Stage::kAll);
  run.seconds = seconds_since(t0);
  return run;
}

struct TestItem {
  Image image;
  GeometricPrior prior;
};

std::vector<TestItem> test_items(const TaskConfig& config, const fs::path& run_dir) {
  const DatasetManifest m = load_manifest(run_dir / "data" / "manifest.json");
  std::vector<TestItem> out;
  for (const ManifestEntry* e : m.split(Split::kTest)) {
    TestItem t;
    t.image = load_png(m.resolve(e->image));
    t.prior = build_prior(load_labels(m, *e, t.image), config.prior);
    out.push_back(std::move(t));
  }
  return out;
}

Outcome criterion8(const StripesRun& run, const fs::path& work) {
  const TaskConfig& c = run.config;
  TranslatorBundle bundle = load_translator(c, run.dir);
  const std::size_t params = bundle.generator->params().count();
  bundle.vae.reset();
  const auto items = test_items(c, run.dir);
  const auto& lane = std::get<LaneRule>(c.prior);

  BandEnergy before, after;
  std::vector<Image> sources, translated;
  for (const auto& t : items) {
    const Image y = hallucinate(bundle, t.image, t.prior, {}).output;
    const BandEnergy b = band_energy(t.image, t.image, t.prior, lane.lane_id, lane.asphalt_id);
    const BandEnergy a = band_energy(t.image, y, t.prior, lane.lane_id, lane.asphalt_id);
    before.sum += b.sum;
    before.count += b.count;
    after.sum += a.sum;
    after.count += a.count;
    sources.push_back(t.image);
    translated.push_back(quantize8(y));
  }
  const double e_in = before.sum / before.count;
  const double e_out = after.sum / after.count;
  const double reduction = 1.0 - e_out / e_in;

  SyntheticOptions plain_opt;
  plain_opt.n_test = 0;
  plain_opt.height = plain_opt.width = 64;
  plain_opt.plain = true;
  const DatasetManifest plain_m = make_synthetic_dataset("stripes", 10, 991, work / "plain", plain_opt);
  std::vector<Image> plain;
  for (const auto& e : plain_m.entries) plain.push_back(load_png(plain_m.resolve(e.image)));
  const double gap_out = domain_gap_estimate(plain, translated);
  const double gap_in = domain_gap_estimate(plain, sources);

  const bool ok = reduction > 0.5 && gap_out < gap_in && run.seconds <= 600.0;
  std::ostringstream s;
  s << "band energy " << fmt("%.4f", e_in) << " -> " << fmt("%.4f", e_out) << " (" << fmt("%.1f", 100 * reduction)
    << "% reduction); gap(plain, out) " << fmt("%.4f", gap_out) << " vs gap(plain, src) " << fmt("%.4f", gap_in)
    << "; generator params " << params << "; run " << fmt("%.1f s", run.seconds);
  return {ok, s.str()};
}

Outcome criterion9(const fs::path& work) {
  TaskConfig c = preset_config("dof_flowers");
  c.base_dir = work;
  c.output_dir = "deblur";
  const auto t0 = Clock::now();
  run_recipe(c, Stage::kExtract);
  run_recipe(c, Stage::kTrainGan);
  const double train_s = seconds_since(t0);
  const TranslatorBundle bundle = load_translator(c, work / "deblur");
  const auto items = test_items(c, work / "deblur");
  int better = 0;
  double in_sum = 0.0, out_sum = 0.0;
  for (const auto& t : items) {
    const Image y = hallucinate(bundle, t.image, t.prior, {}).output;
    const double fin = in_focus_average(std::vector<Image>{t.image});
    const double fout = in_focus_average(std::vector<Image>{y});
    in_sum += fin;
    out_sum += fout;
    if (fout > fin) ++better;
  }
  const double frac = items.empty() ? 0.0 : static_cast<double>(better) / items.size();
  const bool ok = items.size() == 50 && frac >= 0.8 && train_s <= 900.0;
  std::ostringstream s;
  s << better << "/" << items.size() << " test images sharper; mean in-focus " << fmt("%.4f", in_sum / items.size())
    << " -> " << fmt("%.4f", out_sum / items.size()) << "; " << fmt("%.1f s", train_s);
  return {ok, s.str()};
}

Outcome criterion10(const StripesRun& run) {
  const TaskConfig& c = run.config;
  const TranslatorBundle bundle = load_translator(c, run.dir);
  if (!bundle.vae) return {false, "run has no VAE"};
  const auto items = test_items(c, run.dir);
  const std::vector<double> zs{0.35, 0.5, 0.65, 0.8, 0.95};
  std::vector<double> mean_edit(zs.size(), 0.0);
  double rho_sum = 0.0;
  for (const auto& t : items) {
    std::vector<double> edits;
    for (double z : zs) {
      HallucinateOptions opt;
      opt.z = z;
      opt.gamma = c.inference.gamma;
      opt.mode = EncodeMode::kDeterministic;
      const Image out = hallucinate(bundle, t.image, t.prior, opt).output;
      double s = 0.0;
      long n = 0;
      for (int r = 0; r < out.height(); ++r)
        for (int col = 0; col < out.width(); ++col)
          if (t.prior.mask.at(r, col) == c.beta.id) {
            for (int k = 0; k < out.channels(); ++k) s += std::abs(out.at(k, r, col) - t.image.at(k, r, col));
            n += out.channels();
          }
      edits.push_back(n ? s / n : 0.0);
    }
    for (std::size_t i = 0; i < zs.size(); ++i) mean_edit[i] += edits[i] / items.size();
    rho_sum += spearman(zs, edits);
  }
  const double rho_images = rho_sum / items.size();
  const double rho_mean = spearman(zs, mean_edit);
  bool nondecreasing = true;
  for (std::size_t i = 1; i < mean_edit.size(); ++i) nondecreasing = nondecreasing && mean_edit[i] >= mean_edit[i - 1];
  std::ostringstream s;
  s << "mean edit";
  for (double e : mean_edit) s << " " << fmt("%.4f", e);
  s << "; rho(mean curve) " << fmt("%.3f", rho_mean) << ", mean per-image rho " << fmt("%.3f", rho_images) << " over "
    << items.size() << " images";
  return {items.size() == 10 && nondecreasing && rho_mean >= 0.9 && rho_images >= 0.9, s.str()};
}

Outcome criterion11(const fs::path& work) {
  SyntheticOptions opt;
  opt.height = opt.width = 8;
  const DatasetManifest base = make_synthetic_dataset("dof_flowers", 1000, 1111, work / "aug_base", opt);
  TranslatorBundle bundle;
  bundle.generator = Generator::create({Backbone::kResidual, 3, 4}, 3);
  bool ok = true;
  std::ostringstream s;
  for (double p : {0.05, 0.1, 0.5}) {
    AugmentOptions ao;
    ao.p_aug = p;
    ao.seed = 4242;
    const auto out = augment_dataset(base, bundle, FixedRule{}, ao, work / ("aug_" + std::to_string(p)));
    int replaced = 0;
    for (const auto& e : out.entries) replaced += e.provenance.value("replaced", false) ? 1 : 0;
    const int lo = binomial_quantile(1000, p, 0.005);
    const int hi = binomial_quantile(1000, p, 0.995);
    ok = ok && replaced >= lo && replaced <= hi;
    s << "p=" << p << ": " << replaced << " in [" << lo << "," << hi << "]; ";
  }

  // gamma = 0 with a non-identity generator and an interpolating VAE.
  SyntheticOptions so;
  so.height = so.width = 16;
  const DatasetManifest stripes = make_synthetic_dataset("stripes", 20, 5, work / "aug_gamma_base", so);
  Rng rng(11);
  auto gen = Generator::create({Backbone::kGatedInpaint, 3, 4}, 2);
  randomize(gen->params(), rng, 0.3);
  TranslatorBundle gb;
  gb.generator = std::move(gen);
  MaskVaeConfig vc;
  vc.patch_size = 8;
  vc.latent = 4;
  gb.vae = std::make_shared<MaskVae>(vc);
  gb.overlap = 2;
  AugmentOptions ao;
  ao.p_aug = 1.0;
  ao.z_range = std::array<double, 2>{0.35, 0.95};
  ao.gamma_range = {0.0, 0.0};
  ao.seed = 9;
  const auto out = augment_dataset(stripes, gb, LaneRule{}, ao, work / "aug_gamma");
  int identical = 0, replaced = 0;
  for (const auto& e : out.entries) {
    if (!e.provenance.value("replaced", false)) continue;
    ++replaced;
    const auto& src = *std::find_if(stripes.entries.begin(), stripes.entries.end(),
                                    [&](const ManifestEntry& x) { return x.id == e.id; });
    if (load_png(out.resolve(e.image)) == load_png(stripes.resolve(src.image))) ++identical;
  }
  ok = ok && replaced == 20 && identical == replaced;
  s << "gamma=0: " << identical << "/" << replaced << " identical";
  return {ok, s.str()};
}

Outcome criterion12(const StripesRun& a, const StripesRun& b) {
  bool ok = read_file(a.dir / "report.json") == read_file(b.dir / "report.json");
  int compared = 0;
  for (const auto& f : fs::directory_iterator(a.dir / "ckpt")) {
    if (f.path().extension() != ".ldck") continue;
    ok = ok && sha256_file(f.path()) == sha256_file(b.dir / "ckpt" / f.path().filename());
    ++compared;
  }
  return {ok && compared >= 2, "report.json identical; " + std::to_string(compared) + " checkpoint hashes identical"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = fs::temp_directory_path() / ("localdom_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const bool keep = argc > 1 && std::string(argv[1]) == "--keep";

  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "equation identities", criterion1);
  report(2, "loss optima", criterion2);
  report(3, "gradient checks", criterion3);
  report(4, "patch extraction oracle", criterion4);
  report(5, "stitching round trip", criterion5);
  report(6, "locality invariant", criterion6);
  report(7, "pairing oracle", criterion7);

  StripesRun run_a, run_b;
  std::string stripes_error;
  try {
    run_a = run_stripes(work, "stripes_a");
    run_b = run_stripes(work, "stripes_b");
  } catch (const std::exception& e) {
    stripes_error = e.what();
  }
  auto needs_runs = [&](const std::function<Outcome()>& fn) {
    return [&, fn]() -> Outcome {
      if (!stripes_error.empty()) return {false, "stripes pipeline failed: " + stripes_error};
      return fn();
    };
  };
  report(8, "end-to-end stripes translation", needs_runs([&] { return criterion8(run_a, work); }));
  report(9, "deblur direction", [&] { return criterion9(work); });
  report(10, "monotone degradation", needs_runs([&] { return criterion10(run_a); }));
  report(11, "augmentation statistics", [&] { return criterion11(work); });
  report(12, "reproducibility", needs_runs([&] { return criterion12(run_a, run_b); }));

  if (!keep) fs::remove_all(work);
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "localdom/geometry_priors.hpp"
#include "localdom/image.hpp"
#include "localdom/inference.hpp"

namespace localdom {

// Window-pooled |LoG| of the luminance (box mean over window x window,
// clamped borders). Same spatial size as the input, single channel.
Image focus_map(const Image& image, int window = 7, double sigma = 1.0);
double mean_focus(const Image& image);
// Mean over images of the per-image mean focus. Throws EmptySet.
double in_focus_average(std::span<const Image> images);

struct DistanceBackend {
  std::string name;
  std::string descriptor;  // "perceptual" or "pixel"
  std::function<double(const Image&, const Image&)> distance;
};

// Root-mean-square pixel difference.
DistanceBackend pixel_backend();
// RMSE averaged over a 2x box-downsampled pyramid; the offline stand-in for
// a learned perceptual metric.
DistanceBackend multiscale_backend(int levels = 3);

struct Pairing {
  std::size_t clear = 0;
  std::size_t degraded = 0;
  double distance = 0.0;
  friend bool operator==(const Pairing&, const Pairing&) = default;
};

struct PairingResult {
  std::vector<Pairing> pairs;
  std::vector<std::size_t> unmatched_degraded;  // degraded items no clear item chose
};

// Exhaustive argmin per clear item; ties go to the lowest degraded index.
// Degraded items may be chosen more than once.
PairingResult pair_by_distance(std::span<const Image> clear, std::span<const Image> degraded,
                               const DistanceBackend& backend);

struct GridPoint {
  double z = 0.0;
  double gamma = 0.0;
  double distance = 0.0;
};

struct GridSearchResult {
  GridPoint best;
  GridPoint second;
  std::vector<GridPoint> evaluated;  // z-major order
};

// Evaluates hallucinate (deterministic mode) over z_grid x gamma_grid and
// returns the point closest to the reference; the first point wins ties.
GridSearchResult grid_search_edit(const Image& clear, const Image& reference, const GeometricPrior& prior,
                                  const TranslatorBundle& bundle, std::span<const double> z_grid,
                                  std::span<const double> gamma_grid, const DistanceBackend& backend);

// KL(a||b) + KL(b||a) of pooled hard histograms, floored at eps.
double domain_gap_estimate(std::span<const Image> a, std::span<const Image> b, int bins = 32,
                           double eps = 1e-8);

// Pluggable FID/LPIPS-style metrics. Nothing is registered by default.
struct MetricResult {
  std::string name;
  std::string backend;
  double value = 0.0;
};

using ExternalMetricFn = std::function<double(std::span<const Image>, std::span<const Image>)>;
using FeatureExtractor = std::function<std::vector<double>(const Image&)>;

void register_external_metric(const std::string& name, const std::string& backend, ExternalMetricFn fn);
void unregister_external_metric(const std::string& name);
MetricResult external_metric(const std::string& name, std::span<const Image> a, std::span<const Image> b);

// Frechet distance between Gaussians fitted to two feature sets.
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);
// FID-style metric over a caller-supplied feature extractor.
ExternalMetricFn make_frechet_metric(FeatureExtractor features);

}  // namespace localdom

#include "localdom/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "localdom/error.hpp"
#include "localdom/patch_gan.hpp"

namespace localdom {

namespace {

// Box mean along one axis with clamped indices.
std::vector<double> box_rows(const std::vector<double>& in, int h, int w, int radius) {
  std::vector<double> out(in.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += in[static_cast<std::size_t>(r) * w + std::clamp(c + k, 0, w - 1)];
      out[static_cast<std::size_t>(r) * w + c] = acc / (2 * radius + 1);
    }
  }
  return out;
}

std::vector<double> box_cols(const std::vector<double>& in, int h, int w, int radius) {
  std::vector<double> out(in.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += in[static_cast<std::size_t>(std::clamp(r + k, 0, h - 1)) * w + c];
      out[static_cast<std::size_t>(r) * w + c] = acc / (2 * radius + 1);
    }
  }
  return out;
}

Image downsample2(const Image& in) {
  const int h = std::max(1, in.height() / 2);
  const int w = std::max(1, in.width() / 2);
  Image out(h, w, in.channels());
  for (int c = 0; c < in.channels(); ++c) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        double acc = 0.0;
        int n = 0;
        for (int dr = 0; dr < 2; ++dr) {
          for (int dc = 0; dc < 2; ++dc) {
            const int rr = 2 * r + dr;
            const int cc = 2 * col + dc;
            if (rr < in.height() && cc < in.width()) {
              acc += in.at(c, rr, cc);
              ++n;
            }
          }
        }
        out.at(c, r, col) = acc / n;
      }
    }
  }
  return out;
}

double rmse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kShapeMismatch, "distance inputs differ in shape");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace

Image focus_map(const Image& image, int window, double sigma) {
  if (window < 1 || window % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "focus window must be odd");
  const Image gray = to_gray(image);
  std::vector<double> resp = log_filter(gray.plane(0), gray.height(), gray.width(), sigma);
  for (double& v : resp) v = std::abs(v);
  const int radius = window / 2;
  resp = box_cols(box_rows(resp, gray.height(), gray.width(), radius), gray.height(), gray.width(), radius);
  Image out(gray.height(), gray.width(), 1);
  std::copy(resp.begin(), resp.end(), out.data().begin());
  return out;
}

double mean_focus(const Image& image) {
  const Image f = focus_map(image);
  double acc = 0.0;
  for (double v : f.data()) acc += v;
  return f.empty() ? 0.0 : acc / static_cast<double>(f.size());
}

double in_focus_average(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::kEmptySet, "in_focus_average of an empty set");
  double acc = 0.0;
  for (const Image& im : images) acc += mean_focus(im);
  return acc / static_cast<double>(images.size());
}

DistanceBackend pixel_backend() { return {"pixel_rmse", "pixel", rmse}; }

DistanceBackend multiscale_backend(int levels) {
  if (levels < 1) throw Error(ErrorCode::kInvalidArgument, "multiscale backend needs >= 1 level");
  return {"multiscale_l2", "perceptual", [levels](const Image& a, const Image& b) {
            Image x = a;
            Image y = b;
            double acc = rmse(x, y);
            int used = 1;
            for (int l = 1; l < levels && x.height() > 1 && x.width() > 1; ++l) {
              x = downsample2(x);
              y = downsample2(y);
              acc += rmse(x, y);
              ++used;
            }
            return acc / used;
          }};
}

PairingResult pair_by_distance(std::span<const Image> clear, std::span<const Image> degraded,
                               const DistanceBackend& backend) {
  if (clear.empty() || degraded.empty()) throw Error(ErrorCode::kEmptySet, "pairing needs two nonempty sets");
  PairingResult out;
  std::vector<char> used(degraded.size(), 0);
  for (std::size_t i = 0; i < clear.size(); ++i) {
    Pairing best{i, 0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < degraded.size(); ++j) {
      const double d = backend.distance(clear[i], degraded[j]);
      if (!std::isfinite(d)) throw Error(ErrorCode::kInvalidArgument, "distance backend returned a non-finite value");
      if (d < best.distance) best = {i, j, d};
    }
    used[best.degraded] = 1;
    out.pairs.push_back(best);
  }
  for (std::size_t j = 0; j < degraded.size(); ++j) {
    if (!used[j]) out.unmatched_degraded.push_back(j);
  }
  return out;
}

GridSearchResult grid_search_edit(const Image& clear, const Image& reference, const GeometricPrior& prior,
                                  const TranslatorBundle& bundle, std::span<const double> z_grid,
                                  std::span<const double> gamma_grid, const DistanceBackend& backend) {
  if (z_grid.empty() || gamma_grid.empty()) throw Error(ErrorCode::kEmptySet, "empty search grid");
  for (double v : z_grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kOutOfRange, "z grid outside [0,1]");
  }
  for (double v : gamma_grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kOutOfRange, "gamma grid outside [0,1]");
  }
  GridSearchResult res;
  const double inf = std::numeric_limits<double>::infinity();
  res.best.distance = res.second.distance = inf;
  for (double z : z_grid) {
    for (double g : gamma_grid) {
      HallucinateOptions opt;
      opt.z = z;
      opt.gamma = g;
      const Image out = hallucinate(bundle, clear, prior, opt).output;
      const GridPoint p{z, g, backend.distance(out, reference)};
      res.evaluated.push_back(p);
      if (p.distance < res.best.distance) {
        res.second = res.best;
        res.best = p;
      } else if (p.distance < res.second.distance) {
        res.second = p;
      }
    }
  }
  if (res.evaluated.size() == 1) res.second = res.best;
  return res;
}

double domain_gap_estimate(std::span<const Image> a, std::span<const Image> b, int bins, double eps) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptySet, "domain gap needs two nonempty sets");
  const Histogram ha = pooled_histogram(a, bins);
  const Histogram hb = pooled_histogram(b, bins);
  return histogram_kl(ha, hb, eps) + histogram_kl(hb, ha, eps);
}

namespace {

struct Registered {
  std::string backend;
  ExternalMetricFn fn;
};

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, Registered>& registry() {
  static std::map<std::string, Registered> r;
  return r;
}

}  // namespace

void register_external_metric(const std::string& name, const std::string& backend, ExternalMetricFn fn) {
  if (!fn) throw Error(ErrorCode::kInvalidArgument, "metric backend must be callable");
  std::lock_guard lock(registry_mutex());
  registry()[name] = {backend, std::move(fn)};
}

void unregister_external_metric(const std::string& name) {
  std::lock_guard lock(registry_mutex());
  registry().erase(name);
}

MetricResult external_metric(const std::string& name, std::span<const Image> a, std::span<const Image> b) {
  Registered entry;
  {
    std::lock_guard lock(registry_mutex());
    const auto it = registry().find(name);
    if (it == registry().end()) throw Error(ErrorCode::kBackendMissing, "no backend registered for metric '" + name + "'");
    entry = it->second;
  }
  return {name, entry.backend, entry.fn(a, b)};
}

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptySet, "frechet distance needs two nonempty feature sets");
  const std::size_t dim = a.front().size();
  auto fit = [dim](const std::vector<std::vector<double>>& feats, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < feats.size(); ++i) {
      if (feats[i].size() != dim) throw Error(ErrorCode::kShapeMismatch, "feature dimensions differ");
      for (std::size_t k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = feats[i][k];
    }
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    cov = feats.size() > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / static_cast<double>(feats.size() - 1))
                           : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit(a, mu_a, cov_a);
  fit(b, mu_b, cov_b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(cov_a);
  const Eigen::MatrixXd sqrt_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd m = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(0.5 * (m + m.transpose()));
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

ExternalMetricFn make_frechet_metric(FeatureExtractor features) {
  return [features = std::move(features)](std::span<const Image> a, std::span<const Image> b) {
    std::vector<std::vector<double>> fa, fb;
    for (const Image& im : a) fa.push_back(features(im));
    for (const Image& im : b) fb.push_back(features(im));
    return frechet_distance(fa, fb);
  };
}

}  // namespace localdom

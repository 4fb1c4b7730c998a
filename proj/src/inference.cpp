#include "localdom/inference.hpp"

#include <algorithm>

#include "localdom/error.hpp"

namespace localdom {

Grid<int> TilePlan::coverage() const {
  Grid<int> cov(height, width, 0);
  for (const Tile& t : tiles) {
    for (int r = t.top; r < t.top + size; ++r) {
      for (int c = t.left; c < t.left + size; ++c) ++cov.at(r, c);
    }
  }
  return cov;
}

std::vector<int> tile_origins(int dim, int size, int overlap) {
  if (overlap < 0 || overlap >= size) throw Error(ErrorCode::kBadOverlap, "overlap must lie in [0, size)");
  if (size > dim) throw Error(ErrorCode::kTooSmall, "tile larger than image");
  const int stride = size - overlap;
  std::vector<int> out;
  for (int o = 0;; o += stride) {
    if (o + size >= dim) {
      out.push_back(dim - size);
      break;
    }
    out.push_back(o);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TilePlan make_tile_plan(int height, int width, int size, int overlap) {
  if (size < 1) throw Error(ErrorCode::kInvalidArgument, "tile size must be positive");
  TilePlan plan{height, width, size, overlap, {}};
  const auto rows = tile_origins(height, size, overlap);
  const auto cols = tile_origins(width, size, overlap);
  for (int r : rows) {
    for (int c : cols) plan.tiles.push_back({r, c});
  }
  return plan;
}

std::vector<Image> split(const Image& image, const TilePlan& plan) {
  if (image.height() != plan.height || image.width() != plan.width) {
    throw Error(ErrorCode::kPlanMismatch, "image does not match the tile plan");
  }
  std::vector<Image> out;
  out.reserve(plan.tiles.size());
  for (const Tile& t : plan.tiles) out.push_back(crop(image, t.top, t.left, plan.size, plan.size));
  return out;
}

Image stitch_masks(const std::vector<Image>& tiles, const TilePlan& plan) {
  if (tiles.size() != plan.tiles.size() || tiles.empty()) {
    throw Error(ErrorCode::kPlanMismatch, "expected " + std::to_string(plan.tiles.size()) + " tiles, got " +
                                              std::to_string(tiles.size()));
  }
  const int channels = tiles.front().channels();
  for (const Image& t : tiles) {
    if (t.height() != plan.size || t.width() != plan.size || t.channels() != channels) {
      throw Error(ErrorCode::kPlanMismatch, "tile shape does not match the plan");
    }
  }
  Image sum(plan.height, plan.width, channels);
  Image first(plan.height, plan.width, channels);
  Grid<int> count(plan.height, plan.width, 0);
  std::vector<char> agree(sum.size(), 1);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const Tile& t = plan.tiles[k];
    for (int r = 0; r < plan.size; ++r) {
      for (int c = 0; c < plan.size; ++c) {
        const bool seen = count.at(t.top + r, t.left + c) > 0;
        for (int ch = 0; ch < channels; ++ch) {
          const double v = tiles[k].at(ch, r, c);
          const std::size_t idx = ch * sum.plane_size() + static_cast<std::size_t>(t.top + r) * plan.width + t.left + c;
          if (!seen) {
            first.data()[idx] = v;
          } else if (first.data()[idx] != v) {
            agree[idx] = 0;
          }
          sum.data()[idx] += v;
        }
        ++count.at(t.top + r, t.left + c);
      }
    }
  }
  Image out(plan.height, plan.width, channels);
  for (int ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < out.plane_size(); ++i) {
      const std::size_t idx = ch * out.plane_size() + i;
      const int n = count.data()[i];
      if (n == 0) throw Error(ErrorCode::kPlanMismatch, "tile plan leaves pixels uncovered");
      out.data()[idx] = agree[idx] ? first.data()[idx] : sum.data()[idx] / n;
    }
  }
  return out;
}

void TranslatorBundle::validate() const {
  if (!generator) throw Error(ErrorCode::kInvalidArgument, "translator bundle has no generator");
  if (tau_d < 0.0) throw Error(ErrorCode::kBadSchema, "tau_d must be >= 0");
  if (overlap < 0) throw Error(ErrorCode::kBadOverlap, "overlap must be >= 0");
}

Image exclude_foreground(const Image& image, const Image& y, const Image& fg_mask) {
  if (!image.same_shape(y) || !fg_mask.same_size(image) || fg_mask.channels() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "exclude_foreground inputs are not aligned");
  }
  Image out = y;
  const auto fg = fg_mask.plane(0);
  for (int c = 0; c < out.channels(); ++c) {
    auto o = out.plane(c);
    const auto x = image.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (fg[i] > 0.5) o[i] = x[i];
    }
  }
  return out;
}

Hallucination hallucinate(const TranslatorBundle& bundle, const Image& image, const GeometricPrior& prior,
                          const HallucinateOptions& options) {
  bundle.validate();
  if (prior.mask.height() != image.height() || prior.mask.width() != image.width()) {
    throw Error(ErrorCode::kShapeMismatch, "image and prior differ in size");
  }
  if (options.z && !bundle.vae) throw Error(ErrorCode::kMissingVae, "z requested but the bundle has no mask VAE");
  if (!(options.gamma >= 0.0 && options.gamma <= 1.0)) throw Error(ErrorCode::kOutOfRange, "gamma must lie in [0,1]");
  if (options.z && !(*options.z >= 0.0 && *options.z <= 1.0)) {
    throw Error(ErrorCode::kOutOfRange, "z must lie in [0,1]");
  }

  const Image beta = indicator_mask(prior, bundle.beta_id);
  Hallucination h;
  h.translated = translate(*bundle.generator, image, &beta);
  const Image& y = h.translated;

  if (bundle.region == RegionMode::kExcludeForeground) {
    h.output = exclude_foreground(image, y, indicator_mask(prior, bundle.foreground_id));
    return h;
  }

  h.output = image;
  const auto in_beta = beta.plane(0);
  if (!options.z) {
    for (int c = 0; c < image.channels(); ++c) {
      auto o = h.output.plane(c);
      const auto yc = y.plane(c);
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (in_beta[i] > 0.5) o[i] = yc[i];
      }
    }
    return h;
  }

  // Per tile, interpolate between the translation's edit mask and the empty
  // mask, then stitch the decoded masks back to full resolution.
  const MaskVae& vae = *bundle.vae;
  const int s = vae.config().patch_size;
  const TilePlan plan = make_tile_plan(image.height(), image.width(), s, bundle.overlap);
  Image edit = difference_mask(y, image, bundle.tau_d);
  for (std::size_t i = 0; i < edit.size(); ++i) edit.data()[i] *= in_beta[i] > 0.5 ? 1.0 : 0.0;
  const Image empty(s, s, 1, 0.0);
  std::vector<Image> tiles;
  tiles.reserve(plan.tiles.size());
  for (const Tile& t : plan.tiles) {
    const Image bt = crop(beta, t.top, t.left, s, s);
    if (std::none_of(bt.data().begin(), bt.data().end(), [](double v) { return v > 0.5; })) {
      tiles.push_back(empty);
      continue;
    }
    tiles.push_back(interpolated_mask(vae, crop(edit, t.top, t.left, s, s), empty, *options.z, options.mode, options.rng));
  }
  h.p_z = stitch_masks(tiles, plan);

  const auto pz = h.p_z.plane(0);
  for (int c = 0; c < image.channels(); ++c) {
    auto o = h.output.plane(c);
    const auto x = image.plane(c);
    const auto yc = y.plane(c);
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (in_beta[i] <= 0.5) continue;
      const double m = options.gamma * pz[i];
      if (m == 0.0) continue;
      o[i] = std::clamp(yc[i] * m + x[i] * (1.0 - m), std::min(x[i], yc[i]), std::max(x[i], yc[i]));
    }
  }
  return h;
}

}  // namespace localdom

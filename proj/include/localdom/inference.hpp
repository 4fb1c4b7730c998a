#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "localdom/geometry_priors.hpp"
#include "localdom/image.hpp"
#include "localdom/mask_vae.hpp"
#include "localdom/patch_gan.hpp"

namespace localdom {

struct Tile {
  int top = 0;
  int left = 0;
  friend bool operator==(const Tile&, const Tile&) = default;
};

struct TilePlan {
  int height = 0;
  int width = 0;
  int size = 0;
  int overlap = 0;
  std::vector<Tile> tiles;

  // Number of tiles covering each pixel.
  Grid<int> coverage() const;
};

// Tile origins per axis: 0, stride, 2*stride, ... with the last one moved
// inward to dim - size. Row-major tile order.
TilePlan make_tile_plan(int height, int width, int size, int overlap);
std::vector<int> tile_origins(int dim, int size, int overlap);

std::vector<Image> split(const Image& image, const TilePlan& plan);
// Uniform average where tiles overlap; pixels on which all covering tiles
// agree take that value exactly.
Image stitch_masks(const std::vector<Image>& tiles, const TilePlan& plan);

enum class RegionMode { kBeta, kExcludeForeground };

// Deployed translator: generator, optional mask VAE and task defaults.
struct TranslatorBundle {
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const MaskVae> vae;
  int alpha_id = 1;
  int beta_id = 2;
  double tau_d = 0.1;
  int overlap = 4;
  RegionMode region = RegionMode::kBeta;
  int foreground_id = 1;  // domain excluded in kExcludeForeground mode

  bool uses_interpolation() const { return vae != nullptr; }
  void validate() const;
};

struct HallucinateOptions {
  std::optional<double> z;  // interpolation progress; requires a VAE
  double gamma = 1.0;
  EncodeMode mode = EncodeMode::kDeterministic;
  Rng* rng = nullptr;  // stochastic mode only
};

struct Hallucination {
  Image output;
  Image translated;
  Image p_z;  // stitched interpolated mask; empty without interpolation
};

Hallucination hallucinate(const TranslatorBundle& bundle, const Image& image, const GeometricPrior& prior,
                          const HallucinateOptions& options);

// Input on fg_mask, y elsewhere.
Image exclude_foreground(const Image& image, const Image& y, const Image& fg_mask);

}  // namespace localdom

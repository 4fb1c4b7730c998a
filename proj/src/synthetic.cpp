#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "localdom/checkpoint.hpp"
#include "localdom/error.hpp"
#include "localdom/pipeline.hpp"

namespace localdom {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::string entry_id(const std::string& kind, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%04d", i);
  return kind + buf;
}

// Gray ground with a bright lane band along a slanted line near the center.
Image make_stripes(int h, int w, bool plain, Rng& rng, LaneLabels& labels) {
  const double ground = 0.30 + uniform(rng, -0.05, 0.05);
  const double tint = uniform(rng, 0.0, 0.03);
  const double c0 = (w - 1) / 2.0 + uniform(rng, -3.0, 3.0);
  const double slant = uniform(rng, -3.0, 3.0);
  const Polyline lane{{0.0, c0 - slant}, {static_cast<double>(h - 1), c0 + slant}};
  labels = LaneLabels{h, w, {lane}};
  const double paint = 0.85 + uniform(rng, -0.05, 0.05);
  Image img(h, w, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const bool on_lane = !plain && polyline_distance(lane, r, c) < 2.5;
      const double base = on_lane ? paint : ground;
      const double n = 0.03 * standard_normal(rng);
      img.at(0, r, c) = clamp01(base + n);
      img.at(1, r, c) = clamp01(base + n);
      img.at(2, r, c) = clamp01(base + n + tint);
    }
  }
  return img;
}

inline constexpr int kRoadClass = 7;
inline constexpr int kSidewalkClass = 8;

// Sky band on top, snowy sidewalk left of a slanted curb, dark road right of it.
Image make_snowtex(int h, int w, Rng& rng, Grid<int>& classes) {
  classes = Grid<int>(h, w, 0);
  const int horizon = h / 3 + static_cast<int>(uniform(rng, -2.0, 2.0));
  const double curb = w / 3.0 + uniform(rng, -3.0, 3.0);
  const double slope = uniform(rng, -0.3, 0.3);
  const double road = 0.22 + uniform(rng, -0.04, 0.04);
  const double snow = 0.86 + uniform(rng, -0.04, 0.04);
  Image img(h, w, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double n = standard_normal(rng);
      double rgb[3];
      if (r < horizon) {
        rgb[0] = 0.55 + 0.01 * n;
        rgb[1] = 0.65 + 0.01 * n;
        rgb[2] = 0.80 + 0.01 * n;
      } else if (c < curb + slope * (r - horizon)) {
        classes.at(r, c) = kSidewalkClass;
        rgb[0] = rgb[1] = snow + 0.03 * n;
        rgb[2] = snow + 0.03 + 0.03 * n;
      } else {
        classes.at(r, c) = kRoadClass;
        rgb[0] = rgb[1] = rgb[2] = road + 0.05 * n;
      }
      for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = clamp01(rgb[ch]);
    }
  }
  return img;
}

// Sharp textured flower in the center over a defocused textured background.
Image make_dof_flower(int h, int w, Rng& rng) {
  Image bg(h, w, 3);
  const double base[3] = {uniform(rng, 0.2, 0.6), uniform(rng, 0.3, 0.7), uniform(rng, 0.2, 0.5)};
  for (int ch = 0; ch < 3; ++ch) {
    for (double& v : bg.plane(ch)) v = clamp01(base[ch] + 0.25 * standard_normal(rng));
  }
  Image img = gaussian_blur(bg, 2.0);

  const double petal[3] = {uniform(rng, 0.6, 1.0), uniform(rng, 0.1, 0.6), uniform(rng, 0.3, 0.9)};
  const double cr = (h - 1) / 2.0 + uniform(rng, -1.0, 1.0);
  const double cc = (w - 1) / 2.0 + uniform(rng, -1.0, 1.0);
  const double radius = 0.22 * std::min(h, w);
  const int petals = 5 + static_cast<int>(uniform_index(rng, 3));
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dr = r - cr;
      const double dc = c - cc;
      const double rho = std::hypot(dr, dc);
      const double theta = std::atan2(dr, dc);
      const double edge = radius * (0.75 + 0.25 * std::cos(petals * theta + phase));
      if (rho > edge) continue;
      const double tex = 0.65 + 0.35 * ((r + c) % 2 == 0 ? 1.0 : -1.0) * uniform(rng, 0.3, 1.0);
      for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = clamp01(petal[ch] * tex);
    }
  }
  return img;
}

}  // namespace

DatasetManifest make_synthetic_dataset(const std::string& kind, int n, std::uint64_t seed, const fs::path& out_dir,
                                       const SyntheticOptions& options) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic dataset needs n >= 1");
  if (options.n_test < 0) throw Error(ErrorCode::kInvalidArgument, "n_test must be >= 0");
  int h = 64;
  int w = 64;
  std::string rule;
  if (kind == "stripes") {
    rule = "lane";
  } else if (kind == "snowtex") {
    rule = "semantic";
  } else if (kind == "dof_flowers") {
    rule = "fixed";
    h = w = 32;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown synthetic kind '" + kind + "'");
  }
  if (options.height > 0) h = options.height;
  if (options.width > 0) w = options.width;
  if (h < 8 || w < 8) throw Error(ErrorCode::kTooSmall, "synthetic images must be at least 8x8");

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (rule != "fixed") fs::create_directories(out_dir / "labels", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.root = out_dir;
  m.prior_rule = rule;
  if (kind == "snowtex") m.class_ids = {{"road", kRoadClass}, {"sidewalk", kSidewalkClass}};
  for (int i = 0; i < n + options.n_test; ++i) {
    ManifestEntry e;
    e.id = entry_id(kind, i);
    e.split = i < n ? Split::kTrain : Split::kTest;
    e.image = fs::path("images") / (e.id + ".png");
    Rng rng = make_rng(seed, kind + "/" + e.id);
    Image img;
    if (kind == "stripes") {
      LaneLabels labels;
      img = make_stripes(h, w, options.plain, rng, labels);
      e.label = fs::path("labels") / (e.id + ".json");
      save_lane_labels(labels, out_dir / *e.label);
    } else if (kind == "snowtex") {
      Grid<int> classes;
      img = make_snowtex(h, w, rng, classes);
      e.label = fs::path("labels") / (e.id + ".png");
      save_label_png(classes, out_dir / *e.label);
    } else {
      img = make_dof_flower(h, w, rng);
    }
    save_png(img, out_dir / e.image);
    e.image_sha256 = sha256_file(out_dir / e.image);
    if (e.label) e.label_sha256 = sha256_file(out_dir / *e.label);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace localdom

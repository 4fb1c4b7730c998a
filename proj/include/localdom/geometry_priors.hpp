#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "localdom/image.hpp"
#include "localdom/rng.hpp"

namespace localdom {

// Id 0 is reserved for the "other" region that belongs to no named local domain.
inline constexpr int kOtherDomain = 0;

struct LocalDomain {
  int id = kOtherDomain;
  std::string name;
};

// The local domains declared by a task. Ids are unique; id 0 is always present.
class DomainSet {
 public:
  DomainSet();
  explicit DomainSet(const std::vector<LocalDomain>& domains);

  bool contains(int id) const;
  int id_of(const std::string& name) const;
  const std::vector<LocalDomain>& domains() const { return domains_; }

 private:
  std::vector<LocalDomain> domains_;
};

enum class PriorSource { kPerImageLabels, kDatasetFixed };

// M(x): one local-domain id per pixel.
struct GeometricPrior {
  Grid<int> mask;
  PriorSource source = PriorSource::kPerImageLabels;
};

struct Point2 {
  double row = 0.0;
  double col = 0.0;
};
using Polyline = std::vector<Point2>;

struct LaneLabels {
  int height = 0;
  int width = 0;
  std::vector<Polyline> lanes;
};

struct SemanticLabels {
  Grid<int> classes;
  std::map<std::string, int> class_ids;  // class name -> pixel value
};

struct NoLabels {
  int height = 0;
  int width = 0;
};

using LabelRecord = std::variant<LaneLabels, SemanticLabels, NoLabels>;

// Band of half-width w_lane around each polyline; asphalt ring of width
// w_asphalt outside it. w_asphalt <= 0 selects the default 3 * w_lane.
struct LaneRule {
  int lane_id = 1;
  int asphalt_id = 2;
  double w_lane = 4.0;
  double w_asphalt = -1.0;

  double asphalt_width() const { return w_asphalt > 0.0 ? w_asphalt : 3.0 * w_lane; }
};

// Relabels named semantic classes to local-domain ids; everything else is 0.
struct SemanticRule {
  std::map<std::string, int> class_to_domain;
};

// Dataset-wide prior: centered disc (radius r_c * min side) and four corner
// squares (side floor(r_k * min side)).
struct FixedRule {
  int in_focus_id = 1;
  int out_of_focus_id = 2;
  double r_c = 0.25;
  double r_k = 0.2;
};

using PriorRule = std::variant<LaneRule, SemanticRule, FixedRule>;

GeometricPrior build_lane_prior(const LaneLabels& labels, const LaneRule& rule);
GeometricPrior build_semantic_prior(const SemanticLabels& labels, const SemanticRule& rule);
GeometricPrior build_fixed_prior(int height, int width, const FixedRule& rule);
GeometricPrior build_prior(const LabelRecord& labels, const PriorRule& rule);

// Distance from a pixel center to the closest segment of a polyline.
double polyline_distance(const Polyline& line, double row, double col);

// Iverson bracket [M(x) == domain] as a single-channel 0/1 image.
Image indicator_mask(const GeometricPrior& prior, int domain);

struct PatchCenter {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchCenter&, const PatchCenter&) = default;
};

struct PatchSpec {
  int size = 16;
  int per_image = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Patch {
  Image pixels;
  PatchCenter center;
  std::string image_id;
  int domain = kOtherDomain;
};

struct PatchSet {
  int size = 0;
  int domain = kOtherDomain;
  std::vector<Patch> patches;

  void append(const PatchSet& other);
};

// Same geometry as PatchSet; pixels are single-channel 0/1 masks.
using MaskPatchSet = PatchSet;

// Top-left corner of the size x size window centered at c.
inline int patch_origin(int center, int size) { return center - size / 2; }

// Positive pixels whose size x size window stays inside the image
// (centers at least size/2 from every border), in row-major order.
std::vector<PatchCenter> valid_centers(const Image& indicator, int size);

// Uniform sampling with replacement over valid_centers. Throws EmptyDomain.
std::vector<PatchCenter> sample_patch_centers(const Image& indicator, const PatchSpec& spec, Rng& rng);

struct ExtractedPatches {
  PatchSet patches;
  MaskPatchSet masks;
};

// Crops image and indicator at sampled centers (index-aligned). The sampling
// stream is derived from (spec.seed, image_id, domain, size).
ExtractedPatches extract_patches(const Image& image, const GeometricPrior& prior, int domain, const PatchSpec& spec,
                                 const std::string& image_id);
ExtractedPatches extract_patches(const Image& image, const GeometricPrior& prior, int domain, const PatchSpec& spec,
                                 const std::string& image_id, Rng& rng);

}  // namespace localdom

#include "localdom/geometry_priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "localdom/error.hpp"

namespace localdom {

DomainSet::DomainSet() : domains_{{kOtherDomain, "other"}} {}

DomainSet::DomainSet(const std::vector<LocalDomain>& domains) : DomainSet() {
  std::set<int> ids{kOtherDomain};
  std::set<std::string> names{"other"};
  for (const auto& d : domains) {
    if (d.id == kOtherDomain) {
      throw Error(ErrorCode::kBadSchema, "local domain id 0 is reserved for 'other'");
    }
    if (d.id < 0 || !ids.insert(d.id).second) {
      throw Error(ErrorCode::kBadSchema, "duplicate or negative local domain id " + std::to_string(d.id));
    }
    if (!names.insert(d.name).second) throw Error(ErrorCode::kBadSchema, "duplicate local domain name " + d.name);
    domains_.push_back(d);
  }
}

bool DomainSet::contains(int id) const {
  return std::any_of(domains_.begin(), domains_.end(), [id](const LocalDomain& d) { return d.id == id; });
}

int DomainSet::id_of(const std::string& name) const {
  for (const auto& d : domains_) {
    if (d.name == name) return d.id;
  }
  throw Error(ErrorCode::kUnknownClass, "undeclared local domain " + name);
}

double polyline_distance(const Polyline& line, double row, double col) {
  if (line.empty()) return std::numeric_limits<double>::infinity();
  if (line.size() == 1) return std::hypot(row - line[0].row, col - line[0].col);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Point2& a = line[i];
    const Point2& b = line[i + 1];
    const double dr = b.row - a.row;
    const double dc = b.col - a.col;
    const double len2 = dr * dr + dc * dc;
    double t = len2 > 0.0 ? ((row - a.row) * dr + (col - a.col) * dc) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(row - (a.row + t * dr), col - (a.col + t * dc)));
  }
  return best;
}

GeometricPrior build_lane_prior(const LaneLabels& labels, const LaneRule& rule) {
  if (labels.height <= 0 || labels.width <= 0) throw Error(ErrorCode::kBadSchema, "lane labels need image size");
  if (rule.w_lane <= 0.0) throw Error(ErrorCode::kDegenerateGeometry, "lane band width must be positive");
  const double ring = rule.w_lane + rule.asphalt_width();
  GeometricPrior prior{Grid<int>(labels.height, labels.width, kOtherDomain), PriorSource::kPerImageLabels};
  std::size_t lane_px = 0;
  std::size_t asphalt_px = 0;
  for (int r = 0; r < labels.height; ++r) {
    for (int c = 0; c < labels.width; ++c) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& lane : labels.lanes) d = std::min(d, polyline_distance(lane, r, c));
      if (d < rule.w_lane) {
        prior.mask.at(r, c) = rule.lane_id;
        ++lane_px;
      } else if (d < ring) {
        prior.mask.at(r, c) = rule.asphalt_id;
        ++asphalt_px;
      }
    }
  }
  if (lane_px == 0) throw Error(ErrorCode::kDegenerateGeometry, "lane band covers no pixel");
  if (asphalt_px == 0) throw Error(ErrorCode::kDegenerateGeometry, "asphalt ring covers no pixel");
  return prior;
}

GeometricPrior build_semantic_prior(const SemanticLabels& labels, const SemanticRule& rule) {
  std::map<int, int> value_to_domain;
  for (const auto& [name, domain] : rule.class_to_domain) {
    const auto it = labels.class_ids.find(name);
    if (it == labels.class_ids.end()) throw Error(ErrorCode::kUnknownClass, "semantic class '" + name + "'");
    value_to_domain[it->second] = domain;
  }
  GeometricPrior prior{Grid<int>(labels.classes.height(), labels.classes.width(), kOtherDomain),
                       PriorSource::kPerImageLabels};
  for (std::size_t i = 0; i < labels.classes.data().size(); ++i) {
    const auto it = value_to_domain.find(labels.classes.data()[i]);
    if (it != value_to_domain.end()) prior.mask.data()[i] = it->second;
  }
  return prior;
}

GeometricPrior build_fixed_prior(int height, int width, const FixedRule& rule) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::kBadSchema, "fixed prior needs image size");
  const int min_side = std::min(height, width);
  const double radius = rule.r_c * min_side;
  const int corner = static_cast<int>(std::floor(rule.r_k * min_side));
  if (radius <= 0.0) throw Error(ErrorCode::kDegenerateGeometry, "in-focus disc has zero area");
  if (corner <= 0) throw Error(ErrorCode::kDegenerateGeometry, "corner squares have zero area");

  GeometricPrior prior{Grid<int>(height, width, kOtherDomain), PriorSource::kDatasetFixed};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const bool top = r < corner;
      const bool bottom = r >= height - corner;
      const bool left = c < corner;
      const bool right = c >= width - corner;
      if ((top || bottom) && (left || right)) prior.mask.at(r, c) = rule.out_of_focus_id;
    }
  }
  const double cr = (height - 1) / 2.0;
  const double cc = (width - 1) / 2.0;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double dr = r - cr;
      const double dc = c - cc;
      if (dr * dr + dc * dc <= radius * radius) prior.mask.at(r, c) = rule.in_focus_id;
    }
  }
  return prior;
}

GeometricPrior build_prior(const LabelRecord& labels, const PriorRule& rule) {
  if (const auto* lane = std::get_if<LaneRule>(&rule)) {
    const auto* rec = std::get_if<LaneLabels>(&labels);
    if (!rec) throw Error(ErrorCode::kBadSchema, "lane rule needs polyline labels");
    return build_lane_prior(*rec, *lane);
  }
  if (const auto* sem = std::get_if<SemanticRule>(&rule)) {
    const auto* rec = std::get_if<SemanticLabels>(&labels);
    if (!rec) throw Error(ErrorCode::kBadSchema, "semantic rule needs a semantic map");
    return build_semantic_prior(*rec, *sem);
  }
  const auto& fixed = std::get<FixedRule>(rule);
  return std::visit(
      [&](const auto& rec) {
        using T = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<T, SemanticLabels>) {
          return build_fixed_prior(rec.classes.height(), rec.classes.width(), fixed);
        } else {
          return build_fixed_prior(rec.height, rec.width, fixed);
        }
      },
      labels);
}

Image indicator_mask(const GeometricPrior& prior, int domain) {
  Image out(prior.mask.height(), prior.mask.width(), 1);
  auto plane = out.plane(0);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = prior.mask.data()[i] == domain ? 1.0 : 0.0;
  return out;
}

void PatchSpec::validate() const {
  if (size < 1) throw Error(ErrorCode::kInvalidArgument, "patch size must be positive");
  if (per_image < 1) throw Error(ErrorCode::kInvalidArgument, "patches per image must be >= 1");
}

void PatchSet::append(const PatchSet& other) {
  if (other.patches.empty()) return;
  if (patches.empty()) {
    size = other.size;
    domain = other.domain;
  } else if (size != other.size || domain != other.domain) {
    throw Error(ErrorCode::kShapeMismatch, "patch sets differ in size or domain");
  }
  patches.insert(patches.end(), other.patches.begin(), other.patches.end());
}

std::vector<PatchCenter> valid_centers(const Image& indicator, int size) {
  const int half = size / 2;
  std::vector<PatchCenter> out;
  for (int r = half; r <= indicator.height() - 1 - half; ++r) {
    for (int c = half; c <= indicator.width() - 1 - half; ++c) {
      if (indicator.at(0, r, c) != 0.0) out.push_back({r, c});
    }
  }
  return out;
}

std::vector<PatchCenter> sample_patch_centers(const Image& indicator, const PatchSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.size > std::min(indicator.height(), indicator.width())) {
    throw Error(ErrorCode::kTooSmall, "patch larger than image");
  }
  const auto candidates = valid_centers(indicator, spec.size);
  if (candidates.empty()) throw Error(ErrorCode::kEmptyDomain, "no valid positive pixel for patch centers");
  std::vector<PatchCenter> out;
  out.reserve(spec.per_image);
  for (int i = 0; i < spec.per_image; ++i) out.push_back(candidates[uniform_index(rng, candidates.size())]);
  return out;
}

ExtractedPatches extract_patches(const Image& image, const GeometricPrior& prior, int domain, const PatchSpec& spec,
                                 const std::string& image_id) {
  Rng rng = make_rng(spec.seed, image_id + "/" + std::to_string(domain) + "/" + std::to_string(spec.size));
  return extract_patches(image, prior, domain, spec, image_id, rng);
}

ExtractedPatches extract_patches(const Image& image, const GeometricPrior& prior, int domain, const PatchSpec& spec,
                                 const std::string& image_id, Rng& rng) {
  if (image.height() != prior.mask.height() || image.width() != prior.mask.width()) {
    throw Error(ErrorCode::kShapeMismatch, "image and prior differ in size");
  }
  const Image indicator = indicator_mask(prior, domain);
  const auto centers = sample_patch_centers(indicator, spec, rng);
  ExtractedPatches out;
  out.patches.size = out.masks.size = spec.size;
  out.patches.domain = out.masks.domain = domain;
  for (const auto& c : centers) {
    const int top = patch_origin(c.row, spec.size);
    const int left = patch_origin(c.col, spec.size);
    out.patches.patches.push_back({crop(image, top, left, spec.size, spec.size), c, image_id, domain});
    out.masks.patches.push_back({crop(indicator, top, left, spec.size, spec.size), c, image_id, domain});
  }
  return out;
}

}  // namespace localdom

#include "localdom/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "localdom/checkpoint.hpp"
#include "localdom/error.hpp"
#include "localdom/evalkit.hpp"

namespace localdom {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadSchema, what + ": " + e.what());
  }
}

template <typename F>
auto schema_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadSchema, what + ": " + e.what());
  }
}

std::string rel_string(const fs::path& p, const fs::path& base) { return p.lexically_relative(base).generic_string(); }

void save_png_atomic(const Image& image, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  save_png(image, tmp);
  fs::rename(tmp, path);
}

void write_json_atomic(const json& j, const fs::path& path) { write_file_atomic(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw Error(ErrorCode::kBadSchema, "unknown split '" + name + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingFile, "manifest " + path.string());
  const json j = parse_json(read_file(path), "manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  schema_guard("manifest", [&] {
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) {
      throw Error(ErrorCode::kBadSchema, "unsupported manifest schema_version");
    }
    m.prior_rule = j.at("prior_rule").get<std::string>();
    if (m.prior_rule != "lane" && m.prior_rule != "semantic" && m.prior_rule != "fixed") {
      throw Error(ErrorCode::kBadSchema, "unknown prior_rule '" + m.prior_rule + "'");
    }
    if (j.contains("class_ids")) m.class_ids = j.at("class_ids").get<std::map<std::string, int>>();
    std::set<std::string> ids;
    std::map<std::string, Split> images;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.image = je.at("image").get<std::string>();
      e.split = split_from_string(je.at("split").get<std::string>());
      e.image_sha256 = je.at("sha256").get<std::string>();
      if (je.contains("label") && !je.at("label").is_null()) {
        e.label = je.at("label").get<std::string>();
        e.label_sha256 = je.at("label_sha256").get<std::string>();
      }
      if (je.contains("provenance")) e.provenance = je.at("provenance");
      if (!ids.insert(e.id).second) throw Error(ErrorCode::kBadSchema, "duplicate entry id '" + e.id + "'");
      const std::string key = e.image.lexically_normal().generic_string();
      if (!images.emplace(key, e.split).second) {
        throw Error(ErrorCode::kBadSchema, "image '" + key + "' listed more than once");
      }
      m.entries.push_back(std::move(e));
    }
    return 0;
  });
  for (const auto& e : m.entries) {
    const fs::path img = m.resolve(e.image);
    if (!fs::exists(img)) throw Error(ErrorCode::kMissingFile, img.string());
    if (sha256_file(img) != e.image_sha256) throw Error(ErrorCode::kChecksumMismatch, img.string());
    if (e.label) {
      const fs::path lbl = m.resolve(*e.label);
      if (!fs::exists(lbl)) throw Error(ErrorCode::kMissingFile, lbl.string());
      if (sha256_file(lbl) != e.label_sha256) throw Error(ErrorCode::kChecksumMismatch, lbl.string());
    }
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json entries = json::array();
  std::vector<const ManifestEntry*> sorted;
  for (const auto& e : manifest.entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  for (const auto* e : sorted) {
    json je{{"id", e->id},
            {"image", e->image.generic_string()},
            {"label", e->label ? json(e->label->generic_string()) : json(nullptr)},
            {"split", to_string(e->split)},
            {"sha256", e->image_sha256}};
    if (e->label) je["label_sha256"] = e->label_sha256;
    if (!e->provenance.is_null()) je["provenance"] = e->provenance;
    entries.push_back(std::move(je));
  }
  json j{{"schema_version", kSchemaVersion}, {"prior_rule", manifest.prior_rule}, {"entries", entries}};
  if (!manifest.class_ids.empty()) j["class_ids"] = manifest.class_ids;
  write_json_atomic(j, path);
}

void save_lane_labels(const LaneLabels& labels, const fs::path& path) {
  json lanes = json::array();
  for (const auto& lane : labels.lanes) {
    json pts = json::array();
    for (const auto& p : lane) pts.push_back({p.row, p.col});
    lanes.push_back(pts);
  }
  write_json_atomic(json{{"height", labels.height}, {"width", labels.width}, {"lanes", lanes}}, path);
}

LabelRecord load_labels(const DatasetManifest& manifest, const ManifestEntry& entry, const Image& image) {
  if (manifest.prior_rule == "fixed") return NoLabels{image.height(), image.width()};
  if (!entry.label) throw Error(ErrorCode::kBadSchema, "entry '" + entry.id + "' has no label file");
  const fs::path path = manifest.resolve(*entry.label);
  if (manifest.prior_rule == "lane") {
    const json j = parse_json(read_file(path), "lane labels " + path.string());
    return schema_guard("lane labels", [&] {
      LaneLabels l{j.at("height").get<int>(), j.at("width").get<int>(), {}};
      for (const auto& lane : j.at("lanes")) {
        Polyline pl;
        for (const auto& p : lane) pl.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        l.lanes.push_back(std::move(pl));
      }
      return LabelRecord{l};
    });
  }
  SemanticLabels s{load_label_png(path), manifest.class_ids};
  if (s.classes.height() != image.height() || s.classes.width() != image.width()) {
    throw Error(ErrorCode::kShapeMismatch, "semantic map size differs from image " + entry.id);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Task configuration

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kLaneDegradation:
      return "lane_degradation";
    case TaskKind::kSnowAddition:
      return "snow_addition";
    case TaskKind::kDeblurring:
      return "deblurring";
    case TaskKind::kCustom:
      return "custom";
  }
  return "custom";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "lane_degradation") return TaskKind::kLaneDegradation;
  if (name == "snow_addition") return TaskKind::kSnowAddition;
  if (name == "deblurring") return TaskKind::kDeblurring;
  if (name == "custom") return TaskKind::kCustom;
  throw Error(ErrorCode::kBadSchema, "unknown task '" + name + "'");
}

DomainSet TaskConfig::domains() const { return DomainSet({alpha, beta}); }

void TaskConfig::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (schema_version != kSchemaVersion) throw Error(ErrorCode::kBadSchema, "unsupported schema_version");
  domains();
  if (dataset.manifest.has_value() == dataset.synthetic.has_value()) {
    throw Error(ErrorCode::kBadSchema, "dataset needs exactly one of 'manifest' or 'synthetic'");
  }
  if (train_images < 0) throw Error(ErrorCode::kBadSchema, "train_images must be >= 0");
  if (patches.empty()) throw Error(ErrorCode::kBadSchema, "at least one patch spec is required");
  for (const auto& p : patches) p.validate();
  gan.validate();
  if (!in01(p_aug)) throw Error(ErrorCode::kBadSchema, "p_aug must lie in [0,1]");
  const bool interp = inference.z.has_value() && inference.z_range.has_value();
  if ((inference.z.has_value() || inference.z_range.has_value()) && !vae.enabled) {
    throw Error(ErrorCode::kBadSchema, "z / z_range given but the VAE is disabled");
  }
  if (vae.enabled && !interp) throw Error(ErrorCode::kBadSchema, "VAE enabled but z / z_range missing");
  if (!in01(inference.gamma)) throw Error(ErrorCode::kBadSchema, "gamma must lie in [0,1]");
  auto check_range = [&](const std::array<double, 2>& r, const char* name) {
    if (!in01(r[0]) || !in01(r[1]) || r[0] > r[1]) {
      throw Error(ErrorCode::kBadSchema, std::string(name) + " must be an ordered pair in [0,1]");
    }
  };
  check_range(inference.gamma_range, "gamma_range");
  if (inference.overlap < 0) throw Error(ErrorCode::kBadSchema, "overlap must be >= 0");
  if (vae.enabled) {
    if (!in01(*inference.z)) throw Error(ErrorCode::kBadSchema, "z must lie in [0,1]");
    check_range(*inference.z_range, "z_range");
    vae.config.validate();
    if (!(vae.tau_d >= 0.0 && vae.tau_d <= 1.0)) throw Error(ErrorCode::kBadSchema, "tau_d must lie in [0,1]");
    if (vae.mask_source != "difference" && vae.mask_source != "indicator") {
      throw Error(ErrorCode::kBadSchema, "vae.mask_source must be 'difference' or 'indicator'");
    }
    if (vae.per_image < 1) throw Error(ErrorCode::kBadSchema, "vae.per_image must be >= 1");
    if (inference.overlap >= vae.config.patch_size) {
      throw Error(ErrorCode::kBadSchema, "overlap must be smaller than vae.patch_size");
    }
  }
}

TaskConfig TaskConfig::resolved() const {
  TaskConfig c = *this;
  for (std::size_t i = 0; i < c.patches.size(); ++i) c.patches[i].seed = derive_seed(seed, "patches/" + std::to_string(i));
  c.gan.seed = derive_seed(seed, "gan");
  c.vae.config.seed = derive_seed(seed, "vae");
  return c;
}

namespace {

json prior_to_json(const PriorRule& rule) {
  if (const auto* l = std::get_if<LaneRule>(&rule)) {
    return {{"rule", "lane"}, {"w_lane", l->w_lane}, {"w_asphalt", l->asphalt_width()}};
  }
  if (const auto* s = std::get_if<SemanticRule>(&rule)) return {{"rule", "semantic"}, {"classes", s->class_to_domain}};
  const auto& f = std::get<FixedRule>(rule);
  return {{"rule", "fixed"}, {"r_c", f.r_c}, {"r_k", f.r_k}};
}

PriorRule prior_from_json(const json& j, const TaskConfig& c) {
  const std::string rule = j.at("rule").get<std::string>();
  if (rule == "lane") {
    LaneRule l;
    l.lane_id = c.beta.id;
    l.asphalt_id = c.alpha.id;
    l.w_lane = j.value("w_lane", l.w_lane);
    l.w_asphalt = j.value("w_asphalt", l.w_asphalt);
    return l;
  }
  if (rule == "semantic") {
    SemanticRule s;
    const DomainSet ds = c.domains();
    for (const auto& [name, v] : j.at("classes").items()) {
      int id = 0;
      if (v.is_number_integer()) {
        id = v.get<int>();
        if (!ds.contains(id)) throw Error(ErrorCode::kUnknownClass, "undeclared domain id " + std::to_string(id));
      } else {
        const std::string d = v.get<std::string>();
        id = d == "alpha" ? c.alpha.id : d == "beta" ? c.beta.id : ds.id_of(d);
      }
      s.class_to_domain[name] = id;
    }
    return s;
  }
  if (rule == "fixed") {
    FixedRule f;
    f.in_focus_id = c.alpha.id;
    f.out_of_focus_id = c.beta.id;
    f.r_c = j.value("r_c", f.r_c);
    f.r_k = j.value("r_k", f.r_k);
    return f;
  }
  throw Error(ErrorCode::kBadSchema, "unknown prior rule '" + rule + "'");
}

std::array<double, 2> range_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kBadSchema, "ranges are [lo, hi] pairs");
  return {j[0].get<double>(), j[1].get<double>()};
}

const std::set<std::string> kTopLevelKeys{"schema_version", "task",     "seed",      "dataset", "train_images",
                                          "domains",        "direction", "prior",    "patches", "gan",
                                          "vae",            "inference", "augment",  "output_dir"};

}  // namespace

TaskConfig task_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::kBadSchema, "task config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kTopLevelKeys.count(key)) throw Error(ErrorCode::kBadSchema, "unknown config key '" + key + "'");
  }
  TaskConfig c = schema_guard("task config", [&] {
    TaskConfig c;
    c.base_dir = base_dir;
    c.schema_version = j.at("schema_version").get<int>();
    c.task = task_from_string(j.value("task", std::string("custom")));
    c.seed = j.value("seed", std::uint64_t{0});
    const json& ds = j.at("dataset");
    if (ds.contains("manifest")) c.dataset.manifest = fs::path(ds.at("manifest").get<std::string>());
    if (ds.contains("synthetic")) {
      const json& s = ds.at("synthetic");
      SyntheticSource src;
      src.kind = s.at("kind").get<std::string>();
      src.n = s.value("n", src.n);
      src.n_test = s.value("n_test", src.n_test);
      src.seed = s.value("seed", src.seed);
      src.height = s.value("height", 0);
      src.width = s.value("width", 0);
      c.dataset.synthetic = src;
    }
    c.train_images = j.value("train_images", 0);
    const json& dom = j.at("domains");
    c.alpha = {dom.at("alpha").at("id").get<int>(), dom.at("alpha").at("name").get<std::string>()};
    c.beta = {dom.at("beta").at("id").get<int>(), dom.at("beta").at("name").get<std::string>()};
    const std::string dir = j.value("direction", std::string("beta_to_alpha"));
    if (dir != "beta_to_alpha" && dir != "alpha_to_beta") throw Error(ErrorCode::kBadSchema, "unknown direction");
    c.beta_to_alpha = dir == "beta_to_alpha";
    c.domains();
    c.prior = prior_from_json(j.at("prior"), c);
    for (const auto& p : j.at("patches")) {
      PatchSpec s;
      s.size = p.at("size").get<int>();
      s.per_image = p.at("per_image").get<int>();
      c.patches.push_back(s);
    }
    if (j.contains("gan")) c.gan = j.at("gan").get<GanConfig>();
    if (j.contains("vae")) {
      const json& v = j.at("vae");
      c.vae.enabled = v.value("enabled", false);
      c.vae.tau_d = v.value("tau_d", c.vae.tau_d);
      c.vae.mask_source = v.value("mask_source", c.vae.mask_source);
      c.vae.per_image = v.value("per_image", c.vae.per_image);
      json rest = v;
      for (const char* k : {"enabled", "tau_d", "mask_source", "per_image"}) rest.erase(k);
      c.vae.config = rest.get<MaskVaeConfig>();
    }
    if (j.contains("inference")) {
      const json& inf = j.at("inference");
      if (inf.contains("z")) c.inference.z = inf.at("z").get<double>();
      c.inference.gamma = inf.value("gamma", c.inference.gamma);
      if (inf.contains("z_range")) c.inference.z_range = range_from_json(inf.at("z_range"));
      if (inf.contains("gamma_range")) c.inference.gamma_range = range_from_json(inf.at("gamma_range"));
      c.inference.overlap = inf.value("overlap", c.inference.overlap);
      const std::string region = inf.value("region", std::string("beta"));
      if (region != "beta" && region != "exclude_foreground") throw Error(ErrorCode::kBadSchema, "unknown region mode");
      c.inference.region = region == "beta" ? RegionMode::kBeta : RegionMode::kExcludeForeground;
    }
    if (j.contains("augment")) c.p_aug = j.at("augment").value("p_aug", 0.0);
    c.output_dir = j.value("output_dir", std::string("run"));
    return c;
  });
  c.validate();
  return c;
}

json task_config_to_json(const TaskConfig& c) {
  json ds;
  if (c.dataset.manifest) ds["manifest"] = c.dataset.manifest->generic_string();
  if (c.dataset.synthetic) {
    const auto& s = *c.dataset.synthetic;
    ds["synthetic"] = {{"kind", s.kind},     {"n", s.n},          {"n_test", s.n_test},
                       {"seed", s.seed},     {"height", s.height}, {"width", s.width}};
  }
  json patches = json::array();
  for (const auto& p : c.patches) patches.push_back({{"size", p.size}, {"per_image", p.per_image}});
  json vae = c.vae.config;
  vae["enabled"] = c.vae.enabled;
  vae["tau_d"] = c.vae.tau_d;
  vae["mask_source"] = c.vae.mask_source;
  vae["per_image"] = c.vae.per_image;
  json inf{{"gamma", c.inference.gamma},
           {"gamma_range", c.inference.gamma_range},
           {"overlap", c.inference.overlap},
           {"region", c.inference.region == RegionMode::kBeta ? "beta" : "exclude_foreground"}};
  if (c.inference.z) inf["z"] = *c.inference.z;
  if (c.inference.z_range) inf["z_range"] = *c.inference.z_range;
  return {{"schema_version", c.schema_version},
          {"task", to_string(c.task)},
          {"seed", c.seed},
          {"dataset", ds},
          {"train_images", c.train_images},
          {"domains", {{"alpha", {{"id", c.alpha.id}, {"name", c.alpha.name}}},
                       {"beta", {{"id", c.beta.id}, {"name", c.beta.name}}}}},
          {"direction", c.beta_to_alpha ? "beta_to_alpha" : "alpha_to_beta"},
          {"prior", prior_to_json(c.prior)},
          {"patches", patches},
          {"gan", c.gan},
          {"vae", vae},
          {"inference", inf},
          {"augment", {{"p_aug", c.p_aug}}},
          {"output_dir", c.output_dir.generic_string()}};
}

TaskConfig load_task_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingFile, "config " + path.string());
  return task_config_from_json(parse_json(read_file(path), "config " + path.string()), path.parent_path());
}

std::vector<std::string> preset_names() { return {"lane", "snow", "deblur", "stripes", "snowtex", "dof_flowers"}; }

TaskConfig preset_config(const std::string& name) {
  TaskConfig c;
  c.seed = 7;
  if (name == "lane" || name == "stripes") {
    c.task = TaskKind::kLaneDegradation;
    c.alpha = {2, "asphalt"};
    c.beta = {1, "lane_marking"};
    c.prior = LaneRule{1, 2, 4.0, 12.0};
    c.gan.backbone = Backbone::kGatedInpaint;
    c.vae.enabled = true;
    c.inference.z = 0.65;
    c.inference.gamma = 0.75;
    c.inference.z_range = std::array<double, 2>{0.35, 0.95};
    c.inference.gamma_range = {0.2, 1.0};
    c.p_aug = 0.05;
    if (name == "lane") {
      c.dataset.manifest = fs::path("manifest.json");
      c.train_images = 15;
      c.patches = {{128, 30, 0}, {200, 30, 0}, {256, 30, 0}};
      c.vae.config.patch_size = 128;
      c.inference.overlap = 32;
    } else {
      c.dataset.synthetic = SyntheticSource{"stripes", 15, 10, 7, 64, 64};
      c.train_images = 15;
      c.patches = {{16, 30, 0}};
      c.gan.steps = 120;
      c.vae.per_image = 8;
      c.vae.config.patch_size = 16;
      c.vae.config.latent = 8;
      c.vae.config.steps = 300;
      c.inference.overlap = 4;
    }
  } else if (name == "snow" || name == "snowtex") {
    c.task = TaskKind::kSnowAddition;
    c.alpha = {1, "sidewalk"};
    c.beta = {2, "road"};
    c.prior = SemanticRule{{{"road", 2}, {"sidewalk", 1}}};
    c.gan.backbone = Backbone::kResidual;
    c.p_aug = 0.1;
    if (name == "snow") {
      c.dataset.manifest = fs::path("manifest.json");
      c.train_images = 15;
      c.patches = {{128, 30, 0}};
    } else {
      c.dataset.synthetic = SyntheticSource{"snowtex", 15, 5, 7, 64, 64};
      c.train_images = 15;
      c.patches = {{16, 30, 0}};
      c.gan.steps = 100;
    }
  } else if (name == "deblur" || name == "dof_flowers") {
    c.task = TaskKind::kDeblurring;
    c.alpha = {1, "in_focus"};
    c.beta = {2, "out_of_focus"};
    c.prior = FixedRule{1, 2, 0.25, 0.2};
    c.gan.backbone = Backbone::kResidual;
    c.gan.task_loss = TaskLoss::kDeblur;
    c.gan.lambda_task = 0.05;
    c.gan.jitter = {0.05, 0.1, 0.02};
    c.inference.region = RegionMode::kExcludeForeground;
    c.p_aug = 0.0;
    if (name == "deblur") {
      c.dataset.manifest = fs::path("manifest.json");
      c.train_images = 400;
      c.patches = {{128, 4, 0}};
    } else {
      c.dataset.synthetic = SyntheticSource{"dof_flowers", 400, 50, 7, 32, 32};
      c.train_images = 400;
      c.patches = {{8, 4, 0}};
      c.gan.steps = 300;
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentDecision augment_decision(const AugmentOptions& options, const std::string& image_id) {
  Rng rng = make_rng(options.seed, "augment/" + image_id);
  AugmentDecision d;
  d.replaced = uniform(rng, 0.0, 1.0) < options.p_aug;
  if (d.replaced) {
    if (options.z_range) d.z = uniform(rng, (*options.z_range)[0], (*options.z_range)[1]);
    d.gamma = uniform(rng, options.gamma_range[0], options.gamma_range[1]);
  }
  return d;
}

DatasetManifest augment_dataset(const DatasetManifest& manifest, const TranslatorBundle& bundle,
                                const PriorRule& rule, const AugmentOptions& options, const fs::path& out_dir) {
  if (!(options.p_aug >= 0.0 && options.p_aug <= 1.0)) throw Error(ErrorCode::kOutOfRange, "p_aug must lie in [0,1]");
  if (options.z_range && !bundle.vae) throw Error(ErrorCode::kMissingVae, "z_range requested without a mask VAE");
  ensure_dir(out_dir / "images");
  DatasetManifest out;
  out.root = out_dir;
  out.prior_rule = manifest.prior_rule;
  out.class_ids = manifest.class_ids;
  for (const ManifestEntry* src : manifest.split(Split::kTrain)) {
    const AugmentDecision d = augment_decision(options, src->id);
    ManifestEntry e = *src;
    e.image = fs::path("images") / (src->id + ".png");
    const fs::path in_path = manifest.resolve(src->image);
    const fs::path out_path = out_dir / e.image;
    if (d.replaced) {
      const Image image = load_png(in_path);
      const GeometricPrior prior = build_prior(load_labels(manifest, *src, image), rule);
      Rng noise = make_rng(options.seed, "augment-noise/" + src->id);
      HallucinateOptions opt;
      opt.z = d.z;
      opt.gamma = d.gamma;
      opt.mode = options.mode;
      opt.rng = &noise;
      save_png_atomic(hallucinate(bundle, image, prior, opt).output, out_path);
    } else {
      write_file_atomic(out_path, read_file(in_path));
    }
    e.image_sha256 = sha256_file(out_path);
    if (src->label) {
      e.label = fs::path("labels") / src->label->filename();
      ensure_dir(out_dir / "labels");
      write_file_atomic(out_dir / *e.label, read_file(manifest.resolve(*src->label)));
    }
    e.provenance = {{"replaced", d.replaced},
                    {"z", d.z ? json(*d.z) : json(nullptr)},
                    {"gamma", d.replaced ? json(d.gamma) : json(nullptr)},
                    {"source_sha256", src->image_sha256}};
    out.entries.push_back(std::move(e));
  }
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

// ---------------------------------------------------------------------------
// Access audit

namespace {

std::string normalized(const fs::path& p) { return fs::absolute(p).lexically_normal().generic_string(); }

}  // namespace

void AccessAudit::allow(const fs::path& path) { allowed_.insert(normalized(path)); }

void AccessAudit::check(const fs::path& path) {
  const std::string p = normalized(path);
  for (const auto& a : allowed_) {
    if (p == a || (p.size() > a.size() && p.compare(0, a.size(), a) == 0 && p[a.size()] == '/')) {
      reads_.push_back(p);
      return;
    }
  }
  throw Error(ErrorCode::kAccessViolation, "read outside the source split: " + path.string());
}

// ---------------------------------------------------------------------------
// Stages

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kExtract:
      return "extract";
    case Stage::kTrainGan:
      return "train-gan";
    case Stage::kTrainVae:
      return "train-vae";
    case Stage::kTranslate:
      return "translate";
    case Stage::kEvaluate:
      return "evaluate";
    case Stage::kAugment:
      return "augment";
    case Stage::kAll:
      return "all";
  }
  return "all";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::kExtract, Stage::kTrainGan, Stage::kTrainVae, Stage::kTranslate, Stage::kEvaluate,
                  Stage::kAugment, Stage::kAll}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown stage '" + name + "'");
}

namespace {

struct Run {
  TaskConfig cfg;  // resolved
  fs::path dir;
  json snapshot;

  fs::path patches() const { return dir / "patches"; }
  fs::path ckpt() const { return dir / "ckpt"; }
  fs::path out() const { return dir / "out"; }
  fs::path aug() const { return dir / "aug"; }

  fs::path manifest_path() const {
    if (cfg.dataset.synthetic) return dir / "data" / "manifest.json";
    const fs::path& m = *cfg.dataset.manifest;
    return m.is_absolute() ? m : cfg.base_dir / m;
  }
};

fs::path marker_path(const Run& run, Stage stage) {
  switch (stage) {
    case Stage::kExtract:
      return run.patches() / "extract.stage.json";
    case Stage::kTrainGan:
      return run.ckpt() / "train-gan.stage.json";
    case Stage::kTrainVae:
      return run.ckpt() / "train-vae.stage.json";
    case Stage::kTranslate:
      return run.out() / "translate.stage.json";
    case Stage::kEvaluate:
      return run.dir / "evaluate.stage.json";
    case Stage::kAugment:
      return run.aug() / "augment.stage.json";
    case Stage::kAll:
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "no marker for stage all");
}

std::vector<Stage> dependencies(const Run& run, Stage stage) {
  const bool vae = run.cfg.vae.enabled;
  switch (stage) {
    case Stage::kExtract:
      return {};
    case Stage::kTrainGan:
      return {Stage::kExtract};
    case Stage::kTrainVae:
      return {Stage::kExtract, Stage::kTrainGan};
    case Stage::kTranslate:
    case Stage::kAugment:
      if (vae) return {Stage::kTrainGan, Stage::kTrainVae};
      return {Stage::kTrainGan};
    case Stage::kEvaluate:
      return {Stage::kTranslate};
    case Stage::kAll:
      break;
  }
  return {};
}

std::optional<json> read_marker(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(read_file(path));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::string outputs_hash(const json& outputs) { return sha256_hex(outputs.dump()); }

json describe_outputs(const Run& run, std::vector<fs::path> files) {
  std::sort(files.begin(), files.end());
  json out = json::array();
  for (const auto& f : files) out.push_back({{"path", rel_string(f, run.dir)}, {"sha256", sha256_file(f)}});
  return out;
}

bool outputs_intact(const Run& run, const json& outputs) {
  for (const auto& o : outputs) {
    const fs::path p = run.dir / o.at("path").get<std::string>();
    if (!fs::exists(p) || sha256_file(p) != o.at("sha256").get<std::string>()) return false;
  }
  return true;
}

json seeds_json(const TaskConfig& c) {
  json patches = json::array();
  for (const auto& p : c.patches) patches.push_back(p.seed);
  return {{"task", c.seed}, {"patches", patches}, {"gan", c.gan.seed}, {"vae", c.vae.config.seed}};
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& skip_suffix = ".stage.json") {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() >= skip_suffix.size() && name.compare(name.size() - skip_suffix.size(), skip_suffix.size(), skip_suffix) == 0) {
      continue;
    }
    out.push_back(e.path());
  }
  return out;
}

// --- extract ---------------------------------------------------------------

json save_group(const PatchSet& set, const fs::path& dir, const fs::path& root) {
  ensure_dir(dir);
  json files = json::array();
  for (std::size_t i = 0; i < set.patches.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    const Patch& p = set.patches[i];
    save_png_atomic(p.pixels, dir / name);
    files.push_back({{"file", rel_string(dir / name, root)},
                     {"image_id", p.image_id},
                     {"row", p.center.row},
                     {"col", p.center.col}});
  }
  return {{"size", set.size}, {"domain", set.domain}, {"files", files}};
}

PatchSet load_group(const json& g, const fs::path& root, AccessAudit& audit) {
  PatchSet set;
  set.size = g.at("size").get<int>();
  set.domain = g.at("domain").get<int>();
  for (const auto& f : g.at("files")) {
    const fs::path p = root / f.at("file").get<std::string>();
    audit.check(p);
    set.patches.push_back(
        {load_png(p), {f.at("row").get<int>(), f.at("col").get<int>()}, f.at("image_id").get<std::string>(), set.domain});
  }
  return set;
}

std::vector<const ManifestEntry*> train_entries(const Run& run, const DatasetManifest& m) {
  auto train = m.split(Split::kTrain);
  if (run.cfg.train_images > 0) {
    if (static_cast<int>(train.size()) < run.cfg.train_images) {
      throw Error(ErrorCode::kBadSchema, "config needs " + std::to_string(run.cfg.train_images) +
                                             " train images, manifest has " + std::to_string(train.size()));
    }
    train.resize(static_cast<std::size_t>(run.cfg.train_images));
  }
  if (train.empty()) throw Error(ErrorCode::kEmptySet, "manifest has no train entries");
  return train;
}

std::vector<fs::path> stage_extract(const Run& run, json& info) {
  const TaskConfig& c = run.cfg;
  if (c.dataset.synthetic) {
    const auto& s = *c.dataset.synthetic;
    make_synthetic_dataset(s.kind, s.n, s.seed, run.dir / "data", {s.n_test, s.height, s.width});
  }
  const DatasetManifest m = load_manifest(run.manifest_path());
  const auto train = train_entries(run, m);

  AccessAudit audit;
  for (const auto* e : train) {
    audit.allow(m.resolve(e->image));
    if (e->label) audit.allow(m.resolve(*e->label));
  }

  std::vector<PatchSet> src(c.patches.size()), src_mask(c.patches.size()), tgt(c.patches.size());
  PatchSet vae_src, vae_src_mask, vae_tgt_mask;
  for (const auto* e : train) {
    const fs::path img_path = m.resolve(e->image);
    audit.check(img_path);
    const Image image = load_png(img_path);
    if (e->label) audit.check(m.resolve(*e->label));
    const GeometricPrior prior = build_prior(load_labels(m, *e, image), c.prior);
    for (std::size_t k = 0; k < c.patches.size(); ++k) {
      const ExtractedPatches s = extract_patches(image, prior, c.source_id(), c.patches[k], e->id);
      const ExtractedPatches t = extract_patches(image, prior, c.target_id(), c.patches[k], e->id);
      src[k].append(s.patches);
      src_mask[k].append(s.masks);
      tgt[k].append(t.patches);
    }
    if (c.vae.enabled) {
      const PatchSpec vs{c.vae.config.patch_size, c.vae.per_image, derive_seed(c.seed, "vae-patches")};
      const ExtractedPatches s = extract_patches(image, prior, c.source_id(), vs, e->id);
      vae_src.append(s.patches);
      vae_src_mask.append(s.masks);
      if (c.vae.mask_source == "indicator") vae_tgt_mask.append(extract_patches(image, prior, c.target_id(), vs, e->id).masks);
    }
  }

  std::error_code ec;
  for (const auto& f : list_files(run.patches())) fs::remove(f, ec);
  json groups = json::array();
  for (std::size_t k = 0; k < c.patches.size(); ++k) {
    const fs::path base = run.patches() / ("size" + std::to_string(c.patches[k].size) + "_" + std::to_string(k));
    groups.push_back({{"index", k},
                      {"src", save_group(src[k], base / "src", run.patches())},
                      {"src_mask", save_group(src_mask[k], base / "src_mask", run.patches())},
                      {"tgt", save_group(tgt[k], base / "tgt", run.patches())}});
  }
  json index{{"groups", groups}};
  if (c.vae.enabled) {
    json v{{"src", save_group(vae_src, run.patches() / "vae" / "src", run.patches())},
           {"src_mask", save_group(vae_src_mask, run.patches() / "vae" / "src_mask", run.patches())}};
    if (c.vae.mask_source == "indicator") {
      v["tgt_mask"] = save_group(vae_tgt_mask, run.patches() / "vae" / "tgt_mask", run.patches());
    }
    index["vae"] = v;
  }
  write_json_atomic(index, run.patches() / "index.json");

  json reads = json::array();
  for (const auto& r : audit.reads()) reads.push_back(rel_string(r, m.root));
  info["reads"] = reads;
  info["train_images"] = train.size();
  std::size_t total = 0;
  for (const auto& s : src) total += s.patches.size();
  info["source_patches"] = total;
  return list_files(run.patches());
}

// --- train-gan -------------------------------------------------------------

std::vector<fs::path> stage_train_gan(const Run& run, json& info) {
  AccessAudit audit;
  audit.allow(run.patches());
  audit.check(run.patches() / "index.json");
  const json index = parse_json(read_file(run.patches() / "index.json"), "patch index");
  GanTrainingData data;
  for (const auto& g : index.at("groups")) {
    data.source.push_back(load_group(g.at("src"), run.patches(), audit));
    data.source_masks.push_back(load_group(g.at("src_mask"), run.patches(), audit));
    data.target.push_back(load_group(g.at("tgt"), run.patches(), audit));
  }
  if (data.source.empty() || data.source.front().patches.empty()) throw Error(ErrorCode::kEmptySet, "no source patches");
  const int channels = data.source.front().patches.front().pixels.channels();
  GanModel model(run.cfg.gan, channels);
  ensure_dir(run.ckpt());
  const fs::path latest = run.ckpt() / "gan_latest.ldck";
  model.train(data, [&](const GanModel& m) { write_archive(m.to_archive(), latest); });
  const fs::path ckpt = run.ckpt() / "gan.ldck";
  write_archive(model.to_archive(), ckpt);
  write_loss_csv(model.state().log, run.ckpt() / "gan_loss.csv");
  std::vector<fs::path> outputs{ckpt, run.ckpt() / "gan_loss.csv"};
  if (fs::exists(latest)) outputs.push_back(latest);
  if (!model.state().log.empty()) {
    const auto& last = model.state().log.back();
    info["final"] = {{"L_G", last.l_g}, {"L_D", last.l_d}, {"L_task", last.l_task}};
  }
  info["steps"] = model.state().step;
  info["reads"] = audit.reads().size();
  return outputs;
}

// --- train-vae -------------------------------------------------------------

std::vector<fs::path> stage_train_vae(const Run& run, json& info) {
  const TaskConfig& c = run.cfg;
  if (!c.vae.enabled) throw Error(ErrorCode::kMissingVae, "the task config disables the mask VAE");
  AccessAudit audit;
  audit.allow(run.patches());
  audit.allow(run.ckpt() / "gan.ldck");
  audit.check(run.patches() / "index.json");
  const json index = parse_json(read_file(run.patches() / "index.json"), "patch index");
  const json& v = index.at("vae");
  const PatchSet src = load_group(v.at("src"), run.patches(), audit);
  const PatchSet src_mask = load_group(v.at("src_mask"), run.patches(), audit);

  MaskPatchSet masks;
  masks.size = c.vae.config.patch_size;
  masks.domain = c.source_id();
  if (c.vae.mask_source == "difference") {
    audit.check(run.ckpt() / "gan.ldck");
    const auto generator = GanModel::load_generator(read_archive(run.ckpt() / "gan.ldck"));
    for (std::size_t i = 0; i < src.patches.size(); ++i) {
      const Image& hole = src_mask.patches[i].pixels;
      const Image y = translate(*generator, src.patches[i].pixels, &hole);
      Image d = difference_mask(y, src.patches[i].pixels, c.vae.tau_d);
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] *= hole.data()[k];
      masks.patches.push_back({std::move(d), src.patches[i].center, src.patches[i].image_id, masks.domain});
    }
    // Empty masks anchor the far end of the interpolation path.
    const std::size_t empties = std::max<std::size_t>(1, src.patches.size() / 4);
    for (std::size_t i = 0; i < empties; ++i) {
      masks.patches.push_back({Image(masks.size, masks.size, 1, 0.0), {}, "empty", masks.domain});
    }
  } else {
    masks.append(src_mask);
    PatchSet tgt_mask = load_group(v.at("tgt_mask"), run.patches(), audit);
    for (auto& p : tgt_mask.patches) {
      p.domain = masks.domain;
      masks.patches.push_back(std::move(p));
    }
  }
  const MaskVaeBundle bundle = train_vae(masks, c.vae.config);
  ensure_dir(run.ckpt());
  const fs::path ckpt = run.ckpt() / "vae.ldck";
  write_archive(bundle.vae->to_archive(), ckpt);
  write_vae_loss_csv(bundle.log, run.ckpt() / "vae_loss.csv");
  info["heldout_iou"] = bundle.heldout_iou;
  info["heldout_count"] = bundle.heldout_count;
  info["mask_count"] = masks.patches.size();
  return {ckpt, run.ckpt() / "vae_loss.csv"};
}

// --- translate -------------------------------------------------------------

std::vector<const ManifestEntry*> eval_entries(const DatasetManifest& m) {
  for (Split s : {Split::kTest, Split::kVal, Split::kTrain}) {
    auto e = m.split(s);
    if (!e.empty()) return e;
  }
  return {};
}

std::vector<fs::path> stage_translate(const Run& run, json& info) {
  const TaskConfig& c = run.cfg;
  const TranslatorBundle bundle = load_translator(c, run.dir);
  const DatasetManifest m = load_manifest(run.manifest_path());
  const auto entries = eval_entries(m);
  std::error_code ec;
  for (const auto& f : list_files(run.out())) fs::remove(f, ec);
  ensure_dir(run.out());
  std::vector<fs::path> outputs;
  json items = json::array();
  for (const auto* e : entries) {
    const Image image = load_png(m.resolve(e->image));
    const GeometricPrior prior = build_prior(load_labels(m, *e, image), c.prior);
    HallucinateOptions opt;
    opt.z = c.inference.z;
    opt.gamma = c.inference.gamma;
    const Hallucination h = hallucinate(bundle, image, prior, opt);
    const fs::path out = run.out() / (e->id + ".png");
    save_png_atomic(h.output, out);
    outputs.push_back(out);
    json item{{"id", e->id}, {"split", to_string(e->split)}, {"output", rel_string(out, run.dir)}};
    if (!h.p_z.empty()) {
      const fs::path pz = run.out() / (e->id + "_pz.png");
      save_png_atomic(h.p_z, pz);
      outputs.push_back(pz);
      item["p_z"] = rel_string(pz, run.dir);
    }
    items.push_back(item);
  }
  const fs::path index = run.out() / "index.json";
  write_json_atomic(json{{"items", items}}, index);
  outputs.push_back(index);
  info["images"] = entries.size();
  return outputs;
}

// --- evaluate --------------------------------------------------------------

std::vector<fs::path> stage_evaluate(const Run& run, json& info) {
  const TaskConfig& c = run.cfg;
  const DatasetManifest m = load_manifest(run.manifest_path());
  const json index = parse_json(read_file(run.out() / "index.json"), "translation index");
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.entries) by_id[e.id] = &e;

  std::vector<Image> inputs, outputs;
  std::ostringstream csv;
  csv.precision(10);
  csv << "id,focus_in,focus_out,edit_source,distance\n";
  const DistanceBackend backend = multiscale_backend();
  double edit_total = 0.0;
  std::size_t improved = 0;
  std::string hashes;
  for (const auto& item : index.at("items")) {
    const std::string id = item.at("id").get<std::string>();
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::kBadSchema, "translated id '" + id + "' not in manifest");
    const fs::path in_path = m.resolve(it->second->image);
    const fs::path out_path = run.dir / item.at("output").get<std::string>();
    Image in = load_png(in_path);
    Image out = load_png(out_path);
    hashes += sha256_file(in_path) + sha256_file(out_path);
    const GeometricPrior prior = build_prior(load_labels(m, *it->second, in), c.prior);
    const Image src = indicator_mask(prior, c.source_id());
    double edit = 0.0;
    double area = 0.0;
    for (int ch = 0; ch < in.channels(); ++ch) {
      for (std::size_t i = 0; i < in.plane_size(); ++i) {
        if (src.data()[i] <= 0.5) continue;
        edit += std::abs(out.plane(ch)[i] - in.plane(ch)[i]);
        area += 1.0;
      }
    }
    edit = area > 0.0 ? edit / area : 0.0;
    edit_total += edit;
    const double f_in = mean_focus(in);
    const double f_out = mean_focus(out);
    if (f_out > f_in) ++improved;
    csv << id << ',' << f_in << ',' << f_out << ',' << edit << ',' << backend.distance(in, out) << '\n';
    inputs.push_back(std::move(in));
    outputs.push_back(std::move(out));
  }
  if (inputs.empty()) throw Error(ErrorCode::kEmptySet, "nothing was translated");

  // Target-domain training patches serve as the target-like reference set.
  std::vector<Image> reference;
  const json pidx = parse_json(read_file(run.patches() / "index.json"), "patch index");
  AccessAudit audit;
  audit.allow(run.patches());
  for (const auto& g : pidx.at("groups")) {
    for (auto& p : load_group(g.at("tgt"), run.patches(), audit).patches) reference.push_back(std::move(p.pixels));
  }

  const std::string inputs_hash = sha256_hex(hashes);
  json metrics = json::array();
  auto metric = [&](const std::string& name, const std::string& backend_name, double value) {
    metrics.push_back({{"name", name}, {"backend", backend_name}, {"value", value}, {"inputs_hash", inputs_hash}});
  };
  const double n = static_cast<double>(inputs.size());
  metric("in_focus_average_input", "log_energy", in_focus_average(inputs));
  metric("in_focus_average_output", "log_energy", in_focus_average(outputs));
  metric("in_focus_improved_fraction", "log_energy", static_cast<double>(improved) / n);
  metric("mean_source_edit", "pixel", edit_total / n);
  if (!reference.empty()) {
    metric("domain_gap_reference_input", "histogram", domain_gap_estimate(reference, inputs));
    metric("domain_gap_reference_output", "histogram", domain_gap_estimate(reference, outputs));
  }
  json external = json::array();
  for (const char* name : {"fid", "lpips"}) {
    try {
      const MetricResult r = external_metric(name, reference.empty() ? inputs : reference, outputs);
      metric(r.name, r.backend, r.value);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackendMissing) throw;
      external.push_back({{"name", name}, {"status", "backend_missing"}});
    }
  }

  json checkpoints;
  for (const char* f : {"gan.ldck", "vae.ldck"}) {
    if (fs::exists(run.ckpt() / f)) checkpoints[f] = sha256_file(run.ckpt() / f);
  }
  json report{{"schema_version", kSchemaVersion},
              {"task", to_string(c.task)},
              {"config_sha256", sha256_hex(run.snapshot.dump())},
              {"images", inputs.size()},
              {"metrics", metrics},
              {"external_metrics", external},
              {"checkpoints", checkpoints}};
  if (const auto vm = read_marker(marker_path(run, Stage::kTrainVae)); vm && c.vae.enabled) {
    report["vae_heldout_iou"] = vm->at("info").value("heldout_iou", 0.0);
  }
  const fs::path report_path = run.dir / "report.json";
  write_json_atomic(report, report_path);
  write_file_atomic(run.dir / "report.csv", csv.str());
  info["images"] = inputs.size();
  return {report_path, run.dir / "report.csv"};
}

// --- augment ---------------------------------------------------------------

std::vector<fs::path> stage_augment(const Run& run, json& info) {
  const TaskConfig& c = run.cfg;
  const TranslatorBundle bundle = load_translator(c, run.dir);
  const DatasetManifest m = load_manifest(run.manifest_path());
  AugmentOptions opt;
  opt.p_aug = c.p_aug;
  opt.z_range = c.vae.enabled ? c.inference.z_range : std::nullopt;
  opt.gamma_range = c.inference.gamma_range;
  opt.seed = derive_seed(c.seed, "augment");
  std::error_code ec;
  for (const auto& f : list_files(run.aug())) fs::remove(f, ec);
  const DatasetManifest out = augment_dataset(m, bundle, c.prior, opt, run.aug());
  std::size_t replaced = 0;
  for (const auto& e : out.entries) replaced += e.provenance.value("replaced", false) ? 1 : 0;
  info["entries"] = out.entries.size();
  info["replaced"] = replaced;
  return list_files(run.aug());
}

std::vector<fs::path> run_stage(const Run& run, Stage stage, json& info) {
  switch (stage) {
    case Stage::kExtract:
      return stage_extract(run, info);
    case Stage::kTrainGan:
      return stage_train_gan(run, info);
    case Stage::kTrainVae:
      return stage_train_vae(run, info);
    case Stage::kTranslate:
      return stage_translate(run, info);
    case Stage::kEvaluate:
      return stage_evaluate(run, info);
    case Stage::kAugment:
      return stage_augment(run, info);
    case Stage::kAll:
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "bad stage");
}

StageResult execute(const Run& run, Stage stage) {
  std::string input = to_string(stage) + "\n" + run.snapshot.dump() + "\n";
  for (Stage dep : dependencies(run, stage)) {
    const auto marker = read_marker(marker_path(run, dep));
    if (!marker) {
      throw Error(ErrorCode::kStageOrder, "stage '" + to_string(stage) + "' needs '" + to_string(dep) + "' first");
    }
    input += to_string(dep) + ":" + marker->value("output_hash", std::string()) + "\n";
  }
  if (stage == Stage::kExtract && run.cfg.dataset.manifest) input += sha256_file(run.manifest_path());
  const std::string input_hash = sha256_hex(input);

  const fs::path marker = marker_path(run, stage);
  if (const auto prev = read_marker(marker)) {
    if (prev->value("input_hash", std::string()) == input_hash && prev->contains("outputs") &&
        outputs_intact(run, prev->at("outputs"))) {
      return {stage, true};
    }
  }
  // Invalidate first so an interrupted run never looks complete.
  std::error_code ec;
  fs::remove(marker, ec);
  json info = json::object();
  const std::vector<fs::path> files = run_stage(run, stage, info);
  const json outputs = describe_outputs(run, files);
  ensure_dir(marker.parent_path());
  write_json_atomic(json{{"stage", to_string(stage)},
                         {"input_hash", input_hash},
                         {"output_hash", outputs_hash(outputs)},
                         {"outputs", outputs},
                         {"config", run.snapshot},
                         {"seeds", seeds_json(run.cfg)},
                         {"info", info}},
                    marker);
  return {stage, false};
}

Run make_run(const TaskConfig& config, const RunOptions& options) {
  TaskConfig c = config;
  if (options.seed) c.seed = *options.seed;
  c.validate();
  Run run;
  run.cfg = c.resolved();
  if (options.out_dir) {
    run.dir = *options.out_dir;
  } else {
    run.dir = c.output_dir.is_absolute() ? c.output_dir : c.base_dir / c.output_dir;
  }
  run.dir = fs::absolute(run.dir).lexically_normal();
  run.snapshot = task_config_to_json(run.cfg);
  run.snapshot.erase("output_dir");
  ensure_dir(run.dir);
  return run;
}

}  // namespace

TranslatorBundle load_translator(const TaskConfig& config, const fs::path& run_dir) {
  const fs::path gan = run_dir / "ckpt" / "gan.ldck";
  if (!fs::exists(gan)) throw Error(ErrorCode::kStageOrder, "no trained generator under " + run_dir.string());
  TranslatorBundle b;
  b.generator = GanModel::load_generator(read_archive(gan));
  if (config.vae.enabled) {
    const fs::path vae = run_dir / "ckpt" / "vae.ldck";
    if (!fs::exists(vae)) throw Error(ErrorCode::kStageOrder, "no trained mask VAE under " + run_dir.string());
    b.vae = MaskVae::from_archive(read_archive(vae));
  }
  b.alpha_id = config.target_id();
  b.beta_id = config.source_id();
  b.foreground_id = config.target_id();
  b.tau_d = config.vae.tau_d;
  b.overlap = config.inference.overlap;
  b.region = config.inference.region;
  return b;
}

std::vector<StageResult> run_recipe(const TaskConfig& config, Stage stage, const RunOptions& options) {
  const Run run = make_run(config, options);
  std::vector<StageResult> results;
  if (stage != Stage::kAll) {
    results.push_back(execute(run, stage));
    return results;
  }
  for (Stage s : {Stage::kExtract, Stage::kTrainGan, Stage::kTrainVae, Stage::kTranslate, Stage::kEvaluate,
                  Stage::kAugment}) {
    if (s == Stage::kTrainVae && !run.cfg.vae.enabled) continue;
    results.push_back(execute(run, s));
  }
  return results;
}

std::vector<StageResult> run_recipe(const fs::path& config_path, Stage stage, const RunOptions& options) {
  return run_recipe(load_task_config(config_path), stage, options);
}

}  // namespace localdom

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "localdom/geometry_priors.hpp"
#include "localdom/inference.hpp"
#include "localdom/mask_vae.hpp"
#include "localdom/patch_gan.hpp"

namespace localdom {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Dataset manifest

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ManifestEntry {
  std::string id;
  fs::path image;                // relative to the manifest directory
  std::optional<fs::path> label;
  Split split = Split::kTrain;
  std::string image_sha256;
  std::string label_sha256;
  nlohmann::json provenance;     // null unless produced by augmentation
};

// JSON layout:
//   {"schema_version": 1, "prior_rule": "lane"|"semantic"|"fixed",
//    "class_ids": {"road": 7, ...},
//    "entries": [{"id", "image", "label", "split", "sha256", "label_sha256"}]}
struct DatasetManifest {
  fs::path root;
  std::string prior_rule;
  std::map<std::string, int> class_ids;
  std::vector<ManifestEntry> entries;  // sorted by id

  fs::path resolve(const fs::path& rel) const { return root / rel; }
  std::vector<const ManifestEntry*> split(Split s) const;
};

// Throws MissingFile, ChecksumMismatch or BadSchema.
DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const DatasetManifest& manifest, const fs::path& path);

// Lane labels are JSON {"height", "width", "lanes": [[[row, col], ...], ...]};
// semantic labels are PNGs of class values; fixed-prior entries carry none.
LabelRecord load_labels(const DatasetManifest& manifest, const ManifestEntry& entry, const Image& image);
void save_lane_labels(const LaneLabels& labels, const fs::path& path);

// ---------------------------------------------------------------------------
// Synthetic datasets

struct SyntheticOptions {
  int n_test = 0;
  int height = 0;  // 0 picks the kind's default
  int width = 0;
  bool plain = false;  // stripes only: bare ground, labels still written
};

// kind: stripes | snowtex | dof_flowers. Writes images/, labels/ and
// manifest.json under out_dir; ids are <kind>_NNNN, train first then test.
DatasetManifest make_synthetic_dataset(const std::string& kind, int n, std::uint64_t seed, const fs::path& out_dir,
                                       const SyntheticOptions& options = {});

// ---------------------------------------------------------------------------
// Task configuration

enum class TaskKind { kLaneDegradation, kSnowAddition, kDeblurring, kCustom };

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& name);

struct SyntheticSource {
  std::string kind;
  int n = 15;
  int n_test = 5;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
};

struct DatasetSource {
  std::optional<fs::path> manifest;  // relative to the config file
  std::optional<SyntheticSource> synthetic;
};

struct VaeSettings {
  bool enabled = false;
  double tau_d = 0.1;
  std::string mask_source = "difference";  // difference | indicator
  int per_image = 8;
  MaskVaeConfig config;
};

struct InferenceDefaults {
  std::optional<double> z;
  double gamma = 1.0;
  std::optional<std::array<double, 2>> z_range;
  std::array<double, 2> gamma_range{0.2, 1.0};
  int overlap = 4;
  RegionMode region = RegionMode::kBeta;
};

struct TaskConfig {
  int schema_version = kSchemaVersion;
  TaskKind task = TaskKind::kCustom;
  std::uint64_t seed = 0;
  DatasetSource dataset;
  int train_images = 0;  // 0 uses every train entry
  LocalDomain alpha{1, "alpha"};
  LocalDomain beta{2, "beta"};
  bool beta_to_alpha = true;
  PriorRule prior = FixedRule{};
  std::vector<PatchSpec> patches;
  GanConfig gan;
  VaeSettings vae;
  InferenceDefaults inference;
  double p_aug = 0.0;
  fs::path output_dir = "run";
  fs::path base_dir;  // directory of the config file; not serialized

  void validate() const;
  DomainSet domains() const;
  // Translation source/target domain ids after applying the direction.
  int source_id() const { return beta_to_alpha ? beta.id : alpha.id; }
  int target_id() const { return beta_to_alpha ? alpha.id : beta.id; }
  // Sub-seeds for patches, GAN and VAE derived from the task seed.
  TaskConfig resolved() const;
};

TaskConfig task_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {});
nlohmann::json task_config_to_json(const TaskConfig& config);
TaskConfig load_task_config(const fs::path& path);

// lane | snow | deblur reproduce the published recipe knobs against a user
// manifest; stripes | snowtex | dof_flowers are desk-scale synthetic recipes.
TaskConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOptions {
  double p_aug = 0.0;
  std::optional<std::array<double, 2>> z_range;
  std::array<double, 2> gamma_range{0.2, 1.0};
  std::uint64_t seed = 0;
  EncodeMode mode = EncodeMode::kStochastic;
};

struct AugmentDecision {
  bool replaced = false;
  std::optional<double> z;
  double gamma = 0.0;
};

// Depends only on (seed, image_id).
AugmentDecision augment_decision(const AugmentOptions& options, const std::string& image_id);

// Replaces each train image with its hallucination with probability p_aug.
// Labels are copied unchanged; every entry records its provenance.
DatasetManifest augment_dataset(const DatasetManifest& manifest, const TranslatorBundle& bundle,
                                const PriorRule& rule, const AugmentOptions& options, const fs::path& out_dir);

// ---------------------------------------------------------------------------
// Orchestration

enum class Stage { kExtract, kTrainGan, kTrainVae, kTranslate, kEvaluate, kAugment, kAll };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

// Restricts reads to an allow-list of files and directories.
class AccessAudit {
 public:
  void allow(const fs::path& path);
  void check(const fs::path& path);
  const std::vector<std::string>& reads() const { return reads_; }

 private:
  std::set<std::string> allowed_;
  std::vector<std::string> reads_;
};

struct StageResult {
  Stage stage = Stage::kAll;
  bool skipped = false;  // inputs unchanged since the last run
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
};

// Runs one stage (or all, in dependency order). Throws StageOrder when a
// prerequisite stage has not completed.
std::vector<StageResult> run_recipe(const TaskConfig& config, Stage stage, const RunOptions& options = {});
std::vector<StageResult> run_recipe(const fs::path& config_path, Stage stage, const RunOptions& options = {});

// Builds the deployed translator from a completed run directory.
TranslatorBundle load_translator(const TaskConfig& config, const fs::path& run_dir);

}  // namespace localdom

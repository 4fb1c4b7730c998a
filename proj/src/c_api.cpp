#include "localdom/localdom.h"

#include <cstring>
#include <exception>
#include <string>

#include "localdom/error.hpp"
#include "localdom/evalkit.hpp"
#include "localdom/pipeline.hpp"

struct ld_image {
  localdom::Image image;
};

struct ld_translator {
  localdom::TaskConfig config;
  localdom::TranslatorBundle bundle;
  localdom::DatasetManifest manifest;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
ld_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return LD_OK;
  } catch (const localdom::Error& e) {
    g_last_error = e.what();
    return static_cast<ld_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return LD_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw localdom::Error(localdom::ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<localdom::Image> load_all(const char* const* paths, size_t count) {
  require(paths != nullptr || count == 0, "null path list");
  std::vector<localdom::Image> out;
  for (size_t i = 0; i < count; ++i) {
    require(paths[i] != nullptr, "null path");
    out.push_back(localdom::load_png(paths[i]));
  }
  return out;
}

localdom::Image run_translator(const ld_translator* t, const localdom::Image& image, const localdom::GeometricPrior& prior,
                               int has_z, double z, double gamma) {
  localdom::HallucinateOptions opt;
  if (has_z) opt.z = z;
  opt.gamma = gamma;
  return localdom::hallucinate(t->bundle, image, prior, opt).output;
}

}  // namespace

extern "C" {

const char* ld_version(void) { return "1.0.0"; }

const char* ld_status_name(ld_status status) {
  if (status == LD_OK) return "Ok";
  if (status == LD_ERR_INTERNAL) return "Internal";
  return localdom::error_name(static_cast<localdom::ErrorCode>(status));
}

const char* ld_last_error(void) { return g_last_error.c_str(); }

void ld_string_free(char* s) { delete[] s; }

ld_status ld_image_create(int height, int width, int channels, const double* data, ld_image** out) {
  return guarded([&] {
    require(out != nullptr, "null output handle");
    require(height > 0 && width > 0 && (channels == 1 || channels == 3), "bad image shape");
    auto img = std::make_unique<ld_image>();
    img->image = localdom::Image(height, width, channels);
    if (data) std::memcpy(img->image.data().data(), data, img->image.size() * sizeof(double));
    *out = img.release();
  });
}

ld_status ld_image_load(const char* path, ld_image** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    auto img = std::make_unique<ld_image>();
    img->image = localdom::load_png(path);
    *out = img.release();
  });
}

ld_status ld_image_save(const ld_image* image, const char* path) {
  return guarded([&] {
    require(image != nullptr && path != nullptr, "null argument");
    localdom::save_png(image->image, path);
  });
}

void ld_image_free(ld_image* image) { delete image; }
int ld_image_height(const ld_image* image) { return image ? image->image.height() : 0; }
int ld_image_width(const ld_image* image) { return image ? image->image.width() : 0; }
int ld_image_channels(const ld_image* image) { return image ? image->image.channels() : 0; }
const double* ld_image_data(const ld_image* image) { return image ? image->image.data().data() : nullptr; }

ld_status ld_run_stage(const char* config_path, const char* stage, const uint64_t* seed, const char* out_dir,
                       int* skipped) {
  return guarded([&] {
    require(config_path != nullptr && stage != nullptr, "null argument");
    localdom::RunOptions opt;
    if (seed) opt.seed = *seed;
    if (out_dir) opt.out_dir = std::filesystem::path(out_dir);
    const auto results = localdom::run_recipe(std::filesystem::path(config_path), localdom::stage_from_string(stage), opt);
    if (skipped) {
      *skipped = 0;
      for (const auto& r : results) *skipped += r.skipped ? 1 : 0;
    }
  });
}

ld_status ld_validate_config(const char* config_path) {
  return guarded([&] {
    require(config_path != nullptr, "null argument");
    localdom::load_task_config(config_path);
  });
}

ld_status ld_preset_config(const char* name, char** json_out) {
  return guarded([&] {
    require(name != nullptr && json_out != nullptr, "null argument");
    *json_out = dup_string(localdom::task_config_to_json(localdom::preset_config(name)).dump(2));
  });
}

ld_status ld_make_synthetic(const char* kind, int n, int n_test, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(kind != nullptr && out_dir != nullptr, "null argument");
    localdom::make_synthetic_dataset(kind, n, seed, out_dir, {n_test, 0, 0});
  });
}

ld_status ld_translator_open(const char* config_path, const char* run_dir, ld_translator** out) {
  return guarded([&] {
    require(config_path != nullptr && out != nullptr, "null argument");
    auto t = std::make_unique<ld_translator>();
    t->config = localdom::load_task_config(config_path);
    std::filesystem::path dir = run_dir ? std::filesystem::path(run_dir) : t->config.base_dir / t->config.output_dir;
    t->bundle = localdom::load_translator(t->config, dir);
    const std::filesystem::path manifest =
        t->config.dataset.synthetic ? dir / "data" / "manifest.json" : t->config.base_dir / *t->config.dataset.manifest;
    if (std::filesystem::exists(manifest)) t->manifest = localdom::load_manifest(manifest);
    *out = t.release();
  });
}

void ld_translator_free(ld_translator* translator) { delete translator; }

ld_status ld_translator_apply(const ld_translator* translator, const ld_image* image, const int* prior, int has_z,
                              double z, double gamma, ld_image** out) {
  return guarded([&] {
    require(translator && image && prior && out, "null argument");
    localdom::GeometricPrior p{localdom::Grid<int>(image->image.height(), image->image.width()),
                               localdom::PriorSource::kPerImageLabels};
    std::memcpy(p.mask.data().data(), prior, p.mask.data().size() * sizeof(int));
    auto img = std::make_unique<ld_image>();
    img->image = run_translator(translator, image->image, p, has_z, z, gamma);
    *out = img.release();
  });
}

ld_status ld_translator_apply_entry(const ld_translator* translator, const char* entry_id, int has_z, double z,
                                    double gamma, ld_image** out) {
  return guarded([&] {
    require(translator && entry_id && out, "null argument");
    const localdom::ManifestEntry* entry = nullptr;
    for (const auto& e : translator->manifest.entries) {
      if (e.id == entry_id) entry = &e;
    }
    if (!entry) throw localdom::Error(localdom::ErrorCode::kMissingFile, std::string("no manifest entry ") + entry_id);
    const localdom::Image image = localdom::load_png(translator->manifest.resolve(entry->image));
    const auto prior =
        localdom::build_prior(localdom::load_labels(translator->manifest, *entry, image), translator->config.prior);
    auto img = std::make_unique<ld_image>();
    img->image = run_translator(translator, image, prior, has_z, z, gamma);
    *out = img.release();
  });
}

ld_status ld_focus_average(const char* const* paths, size_t count, double* out) {
  return guarded([&] {
    require(out != nullptr, "null output");
    *out = localdom::in_focus_average(load_all(paths, count));
  });
}

ld_status ld_domain_gap(const char* const* paths_a, size_t count_a, const char* const* paths_b, size_t count_b, int bins,
                        double* out) {
  return guarded([&] {
    require(out != nullptr, "null output");
    *out = localdom::domain_gap_estimate(load_all(paths_a, count_a), load_all(paths_b, count_b), bins);
  });
}

}  // extern "C"

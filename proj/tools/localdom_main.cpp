#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "localdom/localdom.h"

namespace {

int report(ld_status status) {
  if (status != LD_OK) std::cerr << "localdom: " << ld_last_error() << "\n";
  return static_cast<int>(status);
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-domain patch translation toolkit"};
  app.require_subcommand(1);

  struct StageArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
  };
  const std::vector<std::string> stages{"extract", "train-gan", "train-vae", "translate", "evaluate", "augment", "all"};
  std::vector<StageArgs> stage_args(stages.size());
  std::vector<CLI::App*> stage_cmds;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    auto* cmd = app.add_subcommand(stages[i], "Run the " + stages[i] + " stage");
    cmd->add_option("--config", stage_args[i].config, "Task config (JSON)")->required();
    cmd->add_option("--seed", stage_args[i].seed, "Override the task seed");
    cmd->add_option("--out", stage_args[i].out, "Run directory");
    stage_cmds.push_back(cmd);
  }

  std::string synth_kind = "stripes";
  int synth_n = 15;
  int synth_test = 0;
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--kind", synth_kind, "stripes | snowtex | dof_flowers");
  synth->add_option("--n", synth_n, "Train images");
  synth->add_option("--n-test", synth_test, "Test images");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string preset_name;
  std::string preset_out;
  auto* preset = app.add_subcommand("preset", "Print a preset task config");
  preset->add_option("name", preset_name, "lane | snow | deblur | stripes | snowtex | dof_flowers")->required();
  preset->add_option("--out", preset_out, "Write to a file instead of stdout");

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Validate a task config");
  validate->add_option("--config", validate_config, "Task config (JSON)")->required();

  std::vector<std::string> focus_paths;
  auto* focus = app.add_subcommand("focus", "In-focus average of PNG images");
  focus->add_option("images", focus_paths, "PNG files")->required();

  std::vector<std::string> gap_a;
  std::vector<std::string> gap_b;
  int gap_bins = 32;
  auto* gap = app.add_subcommand("gap", "Histogram domain gap between two image sets");
  gap->add_option("--a", gap_a, "First set")->required();
  gap->add_option("--b", gap_b, "Second set")->required();
  gap->add_option("--bins", gap_bins, "Histogram bins");

  std::string apply_config;
  std::string apply_run;
  std::string apply_entry;
  std::optional<double> apply_z;
  double apply_gamma = 1.0;
  std::string apply_out;
  auto* apply = app.add_subcommand("apply", "Hallucinate one manifest entry with a trained run");
  apply->add_option("--config", apply_config, "Task config (JSON)")->required();
  apply->add_option("--run", apply_run, "Run directory");
  apply->add_option("--entry", apply_entry, "Manifest entry id")->required();
  apply->add_option("--z", apply_z, "Domainness z in [0,1]");
  apply->add_option("--gamma", apply_gamma, "Blending gamma in [0,1]");
  apply->add_option("--out", apply_out, "Output PNG")->required();

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!stage_cmds[i]->parsed()) continue;
    const auto& a = stage_args[i];
    int skipped = 0;
    const ld_status st = ld_run_stage(a.config.c_str(), stages[i].c_str(), a.seed ? &*a.seed : nullptr,
                                      a.out ? a.out->c_str() : nullptr, &skipped);
    if (st == LD_OK && skipped > 0) std::cout << skipped << " stage(s) up to date\n";
    return report(st);
  }
  if (synth->parsed()) {
    return report(ld_make_synthetic(synth_kind.c_str(), synth_n, synth_test, synth_seed, synth_out.c_str()));
  }
  if (preset->parsed()) {
    char* text = nullptr;
    const ld_status st = ld_preset_config(preset_name.c_str(), &text);
    if (st != LD_OK) return report(st);
    if (preset_out.empty()) {
      std::cout << text << "\n";
    } else {
      std::ofstream(preset_out) << text << "\n";
    }
    ld_string_free(text);
    return 0;
  }
  if (validate->parsed()) {
    const ld_status st = ld_validate_config(validate_config.c_str());
    if (st == LD_OK) std::cout << "ok\n";
    return report(st);
  }
  if (focus->parsed()) {
    const auto paths = c_strings(focus_paths);
    double value = 0.0;
    const ld_status st = ld_focus_average(paths.data(), paths.size(), &value);
    if (st == LD_OK) std::printf("%.6f\n", value);
    return report(st);
  }
  if (gap->parsed()) {
    const auto a = c_strings(gap_a);
    const auto b = c_strings(gap_b);
    double value = 0.0;
    const ld_status st = ld_domain_gap(a.data(), a.size(), b.data(), b.size(), gap_bins, &value);
    if (st == LD_OK) std::printf("%.6f\n", value);
    return report(st);
  }
  if (apply->parsed()) {
    ld_translator* t = nullptr;
    ld_status st = ld_translator_open(apply_config.c_str(), apply_run.empty() ? nullptr : apply_run.c_str(), &t);
    if (st != LD_OK) return report(st);
    ld_image* out = nullptr;
    st = ld_translator_apply_entry(t, apply_entry.c_str(), apply_z.has_value(), apply_z.value_or(0.0), apply_gamma, &out);
    if (st == LD_OK) st = ld_image_save(out, apply_out.c_str());
    ld_image_free(out);
    ld_translator_free(t);
    return report(st);
  }
  return 0;
}

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "localdom/localdom.h"
#include "localdom/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string("\"") + LOCALDOM_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(log);
  return r;
}

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("localdom_capi_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Tiny stripes task written next to the run directory.
  fs::path write_tiny_config() {
    char* text = nullptr;
    EXPECT_EQ(ld_preset_config("stripes", &text), LD_OK);
    json j = json::parse(text);
    ld_string_free(text);
    j["dataset"]["synthetic"] = {{"kind", "stripes"}, {"n", 3}, {"n_test", 2}, {"seed", 5}, {"height", 32}, {"width", 32}};
    j["train_images"] = 3;
    j["patches"] = json::array({{{"size", 8}, {"per_image", 4}}});
    j["gan"]["steps"] = 3;
    j["gan"]["width"] = 4;
    j["vae"]["patch_size"] = 8;
    j["vae"]["latent"] = 4;
    j["vae"]["steps"] = 3;
    j["vae"]["per_image"] = 2;
    j["inference"]["overlap"] = 2;
    const fs::path p = dir_ / "task.json";
    std::ofstream(p) << j.dump(2);
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CApi, StatusNamesAndLastError) {
  EXPECT_STREQ(ld_status_name(LD_OK), "Ok");
  EXPECT_STREQ(ld_status_name(LD_ERR_STAGE_ORDER), "StageOrder");
  EXPECT_NE(std::string(ld_version()), "");
  EXPECT_EQ(ld_validate_config((dir_ / "missing.json").c_str()), LD_ERR_MISSING_FILE);
  EXPECT_NE(std::string(ld_last_error()).find("missing.json"), std::string::npos);
  EXPECT_EQ(ld_validate_config(nullptr), LD_ERR_INVALID_ARGUMENT);
  char* text = nullptr;
  EXPECT_EQ(ld_preset_config("nope", &text), LD_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(text, nullptr);
}

TEST_F(CApi, ImageLifecycle) {
  std::vector<double> px(2 * 3 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i) / 20.0;
  ld_image* img = nullptr;
  ASSERT_EQ(ld_image_create(2, 3, 3, px.data(), &img), LD_OK);
  EXPECT_EQ(ld_image_height(img), 2);
  EXPECT_EQ(ld_image_width(img), 3);
  EXPECT_EQ(ld_image_channels(img), 3);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_EQ(ld_image_data(img)[i], px[i]);

  const fs::path png = dir_ / "x.png";
  ASSERT_EQ(ld_image_save(img, png.c_str()), LD_OK);
  ld_image* back = nullptr;
  ASSERT_EQ(ld_image_load(png.c_str(), &back), LD_OK);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(ld_image_data(back)[i], px[i], 0.5 / 255.0 + 1e-12);
  ld_image_free(back);
  ld_image_free(img);

  ld_image* bad = nullptr;
  EXPECT_EQ(ld_image_create(0, 3, 3, px.data(), &bad), LD_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ld_image_create(2, 3, 2, px.data(), &bad), LD_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ld_image_create(2, 3, 3, px.data(), nullptr), LD_ERR_INVALID_ARGUMENT);
  ld_image* zeros = nullptr;
  ASSERT_EQ(ld_image_create(2, 3, 1, nullptr, &zeros), LD_OK);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(ld_image_data(zeros)[i], 0.0);
  ld_image_free(zeros);
  EXPECT_EQ(ld_image_load((dir_ / "none.png").c_str(), &bad), LD_ERR_MISSING_FILE);
}

TEST_F(CApi, PresetValidateAndRunThroughLibrary) {
  const fs::path cfg = write_tiny_config();
  EXPECT_EQ(ld_validate_config(cfg.c_str()), LD_OK);
  EXPECT_EQ(ld_run_stage(cfg.c_str(), "translate", nullptr, nullptr, nullptr), LD_ERR_STAGE_ORDER);
  EXPECT_EQ(ld_run_stage(cfg.c_str(), "teleport", nullptr, nullptr, nullptr), LD_ERR_INVALID_ARGUMENT);
  int skipped = -1;
  ASSERT_EQ(ld_run_stage(cfg.c_str(), "all", nullptr, nullptr, &skipped), LD_OK) << ld_last_error();
  EXPECT_EQ(skipped, 0);
  ASSERT_EQ(ld_run_stage(cfg.c_str(), "all", nullptr, nullptr, &skipped), LD_OK);
  EXPECT_GT(skipped, 0);

  ld_translator* t = nullptr;
  ASSERT_EQ(ld_translator_open(cfg.c_str(), (dir_ / "run").c_str(), &t), LD_OK) << ld_last_error();
  ld_image* out = nullptr;
  ASSERT_EQ(ld_translator_apply_entry(t, "stripes_0003", 1, 0.5, 0.0, &out), LD_OK) << ld_last_error();
  ld_image* src = nullptr;
  ASSERT_EQ(ld_image_load((dir_ / "run" / "data" / "images" / "stripes_0003.png").c_str(), &src), LD_OK);
  const std::size_t n = static_cast<std::size_t>(ld_image_height(src) * ld_image_width(src) * ld_image_channels(src));
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(ld_image_data(out)[i], ld_image_data(src)[i]);
  ld_image_free(out);
  EXPECT_EQ(ld_translator_apply_entry(t, "stripes_0003", 1, 2.0, 0.5, &out), LD_ERR_OUT_OF_RANGE);

  std::vector<int> prior(static_cast<std::size_t>(ld_image_height(src) * ld_image_width(src)), 1);
  ASSERT_EQ(ld_translator_apply(t, src, prior.data(), 0, 0.0, 1.0, &out), LD_OK) << ld_last_error();
  EXPECT_EQ(ld_image_height(out), ld_image_height(src));
  ld_image_free(out);
  ld_image_free(src);
  ld_translator_free(t);

  const std::string a = (dir_ / "run" / "data" / "images" / "stripes_0000.png").string();
  const char* paths[] = {a.c_str()};
  double focus = -1.0;
  EXPECT_EQ(ld_focus_average(paths, 1, &focus), LD_OK);
  EXPECT_GT(focus, 0.0);
  EXPECT_EQ(ld_focus_average(paths, 0, &focus), LD_ERR_EMPTY_SET);
  double gap = -1.0;
  EXPECT_EQ(ld_domain_gap(paths, 1, paths, 1, 32, &gap), LD_OK);
  EXPECT_NEAR(gap, 0.0, 1e-12);
}

TEST_F(CApi, CliSubcommands) {
  auto r = cli("preset stripes", dir_);
  EXPECT_EQ(r.code, 0);
  EXPECT_NO_THROW(localdom::task_config_from_json(json::parse(r.out)));

  r = cli("preset stripes --out \"" + (dir_ / "p.json").string() + "\"", dir_);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(cli("validate --config \"" + (dir_ / "p.json").string() + "\"", dir_).code, 0);

  const fs::path cfg = write_tiny_config();
  EXPECT_EQ(cli("translate --config \"" + cfg.string() + "\"", dir_).code, LD_ERR_STAGE_ORDER);
  r = cli("all --config \"" + cfg.string() + "\" --out \"" + (dir_ / "cli_run").string() + "\"", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "cli_run" / "report.json"));

  const fs::path png = dir_ / "applied.png";
  r = cli("apply --config \"" + cfg.string() + "\" --run \"" + (dir_ / "cli_run").string() +
              "\" --entry stripes_0004 --z 0.5 --gamma 0.5 --out \"" + png.string() + "\"",
          dir_);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(png));

  r = cli("synth --kind dof_flowers --n 2 --n-test 1 --seed 3 --out \"" + (dir_ / "syn").string() + "\"", dir_);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NO_THROW(localdom::load_manifest(dir_ / "syn" / "manifest.json"));
  r = cli("focus \"" + (dir_ / "syn" / "images" / "dof_flowers_0000.png").string() + "\"", dir_);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_GT(std::stod(r.out), 0.0);

  EXPECT_NE(cli("", dir_).code, 0);
  EXPECT_NE(cli("bogus", dir_).code, 0);
  EXPECT_NE(cli("all", dir_).code, 0);
  EXPECT_EQ(cli("validate --config \"" + (dir_ / "missing.json").string() + "\"", dir_).code, LD_ERR_MISSING_FILE);
}

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>

#include "lcip/pipeline.hpp"
#include "test_util.hpp"

namespace lcip {
namespace {

const char* kTiny = R"({
  "seed": 3,
  "populations": [
    {"tag": "A", "synth": {"preset": "A", "n_tracks": 160, "duration_s": 240}},
    {"tag": "B", "synth": {"preset": "B", "n_tracks": 160, "duration_s": 240}}],
  "refpath": {"c": 10, "gamma": 0.001, "max_points": 500, "grid_step": 1.0, "smoothing_window": 41, "spacing": 0.5},
  "features": {"per_class_lc": 12},
  "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "pooling": "cls"},
  "train": {"lr": 0.003, "batch_size": 16, "max_epochs": 2, "patience": 2},
  "experiment": {"seeds": [1, 2]}
})";

PipelineConfig tiny_config(const fs::path& out, std::size_t threads = 1) {
  auto cfg = PipelineConfig::from_json(nlohmann::json::parse(kTiny));
  cfg.out = out;
  cfg.threads = threads;
  return cfg;
}

// Relative path -> contents of every regular file under root.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = csv::read_text(e.path());
  }
  return out;
}

struct CliResult {
  int exit_code = 0;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(LCIP_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), csv::read_text(err)};
}

TEST(Config, DefaultsAreValidAndEmptyJsonMatchesThem) {
  const PipelineConfig d;
  EXPECT_NO_THROW(d.validate());
  const auto from_empty = PipelineConfig::from_json(nlohmann::json::object());
  EXPECT_EQ(from_empty.hash(), d.hash());
  EXPECT_EQ(d.per_class_lc, 827u);
  EXPECT_EQ(d.plan.populations, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(d.frenet.ldot_formula, LdotFormula::Sin);
}

TEST(Config, PartialOverridesMergeOntoDefaults) {
  const auto cfg = PipelineConfig::from_json(nlohmann::json::parse(
      R"({"populations": [{"tag": "B", "synth": {"preset": "B", "n_tracks": 12}}], "model": {"d_model": 16}})"));
  ASSERT_EQ(cfg.populations.size(), 1u);
  const auto& b = *cfg.population("B").synth;
  EXPECT_EQ(b.n_tracks, 12);
  EXPECT_DOUBLE_EQ(b.lc_duration_s, population_b().lc_duration_s);
  EXPECT_EQ(b.drive_side, DriveSide::Left);
  EXPECT_EQ(cfg.model.d_model, 16u);
  EXPECT_EQ(cfg.model.n_heads, ModelConfig{}.n_heads);
  EXPECT_EQ(cfg.plan.populations, std::vector<std::string>{"B"});
  EXPECT_EQ(PipelineConfig::from_json(cfg.to_json()).hash(), cfg.hash());
}

TEST(Config, HashTracksContentNotLocation) {
  PipelineConfig a, b;
  b.out = "/elsewhere";
  b.threads = 4;
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = a.seed + 1;
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  b.frenet.ldot_formula = LdotFormula::PaperCos;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, InvalidValuesRejected) {
  auto expect_invalid = [](const char* text) {
    try {
      PipelineConfig::from_json(nlohmann::json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig) << text;
    }
  };
  expect_invalid(R"({"refpath": {"smoothing_window": 8}})");
  expect_invalid(R"({"model": {"d_model": 10, "n_heads": 4}})");
  expect_invalid(R"({"experiment": {"populations": ["Z"]}})");
  expect_invalid(R"({"populations": []})");
  expect_invalid(R"({"seed": "seven"})");
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"populations": [{"tag": "A", "synth": {"lc_duration_s": 12}}]})")),
               Error);
}

TEST(Stages, MissingArtifactNamesFileAndStage) {
  test::TempDir dir("pipeline_missing");
  const auto cfg = tiny_config(dir.path());
  try {
    run_population_stage(cfg, "features", "A");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "features");
    EXPECT_EQ(e.code(), ErrorCode::MissingArtifact);
    EXPECT_NE(e.detail().find("segments.csv"), std::string::npos);
  }
  EXPECT_THROW(run_experiment_stage(cfg, "report"), StageError);
}

TEST(Cli, MissingArtifactGivesJsonErrorAndNonzeroExit) {
  test::TempDir dir("pipeline_cli");
  csv::write_text(dir / "tiny.json", kTiny);
  const auto r = run_cli("features --config " + (dir / "tiny.json").string() + " --out " + (dir / "run").string(),
                         dir.path());
  EXPECT_NE(r.exit_code, 0);
  const auto line = r.err.substr(0, r.err.find('\n'));
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("stage"), "features");
  EXPECT_EQ(j.at("error"), "MissingArtifact");
  EXPECT_NE(j.at("message").get<std::string>().find("segments.csv"), std::string::npos);

  const auto bad = run_cli("run-all --config " + (dir / "absent.json").string(), dir.path());
  EXPECT_NE(bad.exit_code, 0);
  const auto first = nlohmann::json::parse(bad.err.substr(0, bad.err.find('\n')), nullptr, false);
  EXPECT_FALSE(first.is_discarded()) << bad.err;

  EXPECT_EQ(run_cli("--help", dir.path()).exit_code, 0);
  EXPECT_NE(run_cli("no-such-stage", dir.path()).exit_code, 0);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("pipeline_tiny");
    run_all(tiny_config(*dir_ / "first"));
    first_ = snapshot(*dir_ / "first");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static inline test::TempDir* dir_ = nullptr;
  static inline std::map<std::string, std::string> first_;
};

TEST_F(TinyRun, ProducesEveryStageArtifact) {
  for (const char* f : {"config.json", "A/raw/tracks.csv", "A/raw/groundtruth_lc.csv", "A/ingest/tracks_index.csv",
                        "A/refpath/forward.csv", "B/refpath/backward.csv", "A/convert/frenet.csv",
                        "B/segment/segments.csv", "B/features/samples.lcds", "train/train-joint_seed2.ckpt",
                        "evaluate/predictions.csv", "evaluate/audit.json", "report/accuracy_matrix.csv",
                        "report/report.json", "report/accuracy_matrix.svg"}) {
    EXPECT_TRUE(first_.count(f)) << f;
  }
  const auto audit = nlohmann::json::parse(first_.at("evaluate/audit.json"));
  EXPECT_TRUE(audit.at("passed").get<bool>());
  EXPECT_EQ(audit.at("runs").size(), 6u);
}

TEST_F(TinyRun, EveryManifestCarriesConfigHashAndSeed) {
  const std::string hash = tiny_config("x").hash();
  std::size_t manifests = 0;
  for (const auto& [name, text] : first_) {
    if (fs::path(name).filename() != "manifest.json") continue;
    ++manifests;
    const auto j = nlohmann::json::parse(text);
    EXPECT_EQ(j.at("config_hash"), hash) << name;
    EXPECT_EQ(j.at("seed"), 3) << name;
    for (const auto& [out, h] : j.at("outputs").items()) {
      EXPECT_EQ(h, hex64(fnv1a(first_.at((fs::path(name).parent_path() / out).string())))) << out;
    }
  }
  EXPECT_EQ(manifests, 2u * 6u + 3u);
  const auto report = nlohmann::json::parse(first_.at("report/report.json"));
  EXPECT_EQ(report.at("config_hash"), hash);
}

TEST_F(TinyRun, RerunIsByteIdentical) {
  run_all(tiny_config(*dir_ / "second"));
  const auto second = snapshot(*dir_ / "second");
  ASSERT_EQ(second.size(), first_.size());
  for (const auto& [name, text] : first_) EXPECT_EQ(second.at(name), text) << name;
}

TEST_F(TinyRun, StagesRerunInPlaceAreByteIdentical) {
  const auto cfg = tiny_config(*dir_ / "first");
  run_population_stage(cfg, "segment", "B");
  run_population_stage(cfg, "features", "B");
  run_experiment_stage(cfg, "evaluate");
  run_experiment_stage(cfg, "report");
  const auto again = snapshot(*dir_ / "first");
  for (const auto& [name, text] : first_) EXPECT_EQ(again.at(name), text) << name;
}

// Drops every "threads" key so that documents differing only in the
// recorded thread count compare equal.
nlohmann::json without_threads(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("threads");
    for (auto& [k, v] : j.items()) v = without_threads(v);
  }
  return j;
}

TEST_F(TinyRun, ThreadCountOnlyChangesRecordedThreads) {
  run_all(tiny_config(*dir_ / "threaded", 2));
  const auto threaded = snapshot(*dir_ / "threaded");
  ASSERT_EQ(threaded.size(), first_.size());
  for (const auto& [name, text] : first_) {
    const auto ext = fs::path(name).extension();
    if (ext == ".ckpt") {
      const auto a = decode_checkpoint(text), b = decode_checkpoint(threaded.at(name));
      EXPECT_EQ(without_threads(a.header), without_threads(b.header)) << name;
      for (const auto& [t, v] : a.params.tensors) EXPECT_EQ(b.params.at(t).data, v.data) << name << " " << t;
    } else if (ext == ".json") {
      EXPECT_EQ(without_threads(nlohmann::json::parse(threaded.at(name))), without_threads(nlohmann::json::parse(text)))
          << name;
    } else {
      EXPECT_EQ(threaded.at(name), text) << name;
    }
  }
}

// The same population generated for left-hand traffic is the mirror image;
// after drive-side mirroring the pipeline yields the same windows and samples.
TEST(Equivariance, MirroredPopulationGivesSameSamples) {
  test::TempDir dir("pipeline_mirror");
  auto make = [&](DriveSide side, const std::string& sub) {
    auto j = nlohmann::json::parse(kTiny);
    j["populations"] = nlohmann::json::array({j["populations"][0]});
    j["populations"][0]["synth"]["drive_side"] = side == DriveSide::Right ? "Right" : "Left";
    auto cfg = PipelineConfig::from_json(j);
    cfg.out = dir / sub;
    for (const auto& stage : population_stages()) run_population_stage(cfg, stage, "A");
    return read_dataset(cfg.out / "A" / "features" / "samples.lcds").samples;
  };
  const auto right = make(DriveSide::Right, "right");
  const auto left = make(DriveSide::Left, "left");
  ASSERT_EQ(right.size(), left.size());
  for (std::size_t i = 0; i < right.size(); ++i) {
    EXPECT_EQ(right[i].id(), left[i].id());
    ASSERT_EQ(right[i].matrix.data.size(), left[i].matrix.data.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < right[i].matrix.data.size(); ++k) {
      worst = std::max(worst, std::abs(right[i].matrix.data[k] - left[i].matrix.data[k]));
    }
    EXPECT_LT(worst, 1e-6) << right[i].id();
  }
}

}  // namespace
}  // namespace lcip

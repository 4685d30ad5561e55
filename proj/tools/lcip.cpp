#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lcip/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> population;
  std::optional<std::size_t> threads;
};

lcip::PipelineConfig resolve(const Overrides& o) {
  lcip::PipelineConfig cfg = o.config.empty() ? lcip::PipelineConfig{} : lcip::load_pipeline_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.threads) cfg.threads = std::max<std::size_t>(1, *o.threads);
  if (o.population) cfg.population(*o.population);
  return cfg;
}

void print_error(const std::string& stage, const std::string& code, const std::string& message) {
  nlohmann::json j = {{"stage", stage}, {"error", code}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-change intention prediction pipeline"};
  app.require_subcommand(1);
  app.footer("Defaults (used when no --config is given, and for any key a config omits):\n" +
             lcip::PipelineConfig{}.to_json().dump(2));

  Overrides o;
  std::string stage;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate synthetic recordings into <out>/<tag>/raw"},
      {"ingest", "validate recordings and write a track index"},
      {"refpath", "fit the SVM lane-separation boundary and build reference paths"},
      {"convert", "convert tracks to Frenet coordinates"},
      {"segment", "detect lane changes and cut LC/LK windows"},
      {"features", "build, balance and store 50x36 samples"},
      {"train", "train one model per regime and split seed"},
      {"evaluate", "predict every test split and audit split hygiene"},
      {"report", "write the accuracy matrix, confusion matrices and chart"},
      {"run-all", "run every stage in order"},
      {"config", "print the effective merged config and its hash"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "pipeline config (JSON)");
    sub->add_option("--seed", o.seed, "global seed override");
    sub->add_option("--out", o.out, "output root override");
    sub->add_option("--threads", o.threads, "worker threads for training (recorded in manifests)");
    if (name == "synth" || name == "ingest" || name == "refpath" || name == "convert" || name == "segment" ||
        name == "features") {
      sub->add_option("--population", o.population, "restrict to one population tag (default: all)");
    }
    sub->callback([&stage, name = name] { stage = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("cli", "UsageError", e.what());
    return 2;
  }

  try {
    const auto cfg = resolve(o);
    if (stage == "config") {
      auto j = cfg.to_json();
      j["config_hash"] = cfg.hash();
      std::cout << j.dump(2) << std::endl;
      return 0;
    }
    if (stage == "run-all") {
      lcip::run_all(cfg);
    } else if (stage == "train" || stage == "evaluate" || stage == "report") {
      lcip::write_effective_config(cfg);
      lcip::run_experiment_stage(cfg, stage);
    } else {
      lcip::write_effective_config(cfg);
      for (const auto& p : cfg.populations) {
        if (o.population && p.tag != *o.population) continue;
        lcip::run_population_stage(cfg, stage, p.tag);
      }
    }
  } catch (const lcip::StageError& e) {
    print_error(e.stage(), std::string(lcip::error_code_name(e.code())), e.detail());
    return 1;
  } catch (const lcip::Error& e) {
    print_error(stage, std::string(lcip::error_code_name(e.code())), e.detail());
    return 1;
  } catch (const std::exception& e) {
    print_error(stage, "Exception", e.what());
    return 1;
  }
  return 0;
}

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fedsdr/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string suite = "all";
  std::int64_t seed = -1;
  bool has_seed = false;
};

fedsdr::ExperimentConfig resolve_config(const CommonArgs& args) {
  if (args.config_path.empty()) {
    // no file: all defaults
    return fedsdr::config_from_json_text("{}");
  }
  return fedsdr::load_config(args.config_path);
}

fs::path resolve_out(const CommonArgs& args, const fedsdr::ExperimentConfig& cfg) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("FEDSDR_OUT"); env != nullptr && *env != '\0') return env;
  throw fedsdr::ConfigError("no output directory: pass --out, set out_dir in the config, "
                            "or export FEDSDR_OUT");
}

std::uint64_t resolve_seed(const CommonArgs& args, const fedsdr::ExperimentConfig& cfg) {
  if (args.has_seed) return static_cast<std::uint64_t>(args.seed);
  return cfg.seeds.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsdr: desk-scale federated self-distillation with rectification"};
  app.require_subcommand(1);

  CommonArgs args;
  const auto add_common = [&](CLI::App* sub, bool with_checkpoint = false,
                              bool with_suite = false) {
    sub->add_option("--config", args.config_path, "experiment config (JSON)");
    sub->add_option("--out", args.out_dir, "output directory (fallback: config, $FEDSDR_OUT)");
    sub->add_option("--seed", args.seed, "run seed (default: first entry of config seeds)")
        ->each([&](const std::string&) { args.has_seed = true; });
    if (with_checkpoint) {
      sub->add_option("--checkpoint", args.checkpoint, "checkpoint to evaluate");
    }
    if (with_suite) {
      sub->add_option("--suite", args.suite,
                      "table1-direction | table2-direction | hetero-sweep | "
                      "fedsd-vs-baseline | paradox | all");
    }
  };

  CLI::App* partition = app.add_subcommand("partition", "sample domains and split clients");
  CLI::App* distill = app.add_subcommand("distill", "run the self-distillation refinery");
  CLI::App* train = app.add_subcommand("train", "run federated training rounds");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  CLI::App* metrics = app.add_subcommand("metrics", "corpus divergence and paradox metrics");
  CLI::App* reproduce = app.add_subcommand("reproduce", "run a directional reproduction suite");
  add_common(partition);
  add_common(distill);
  add_common(train);
  add_common(eval, true);
  add_common(metrics);
  add_common(reproduce, false, true);

  CLI11_PARSE(app, argc, argv);

  try {
    const fedsdr::ExperimentConfig cfg = resolve_config(args);
    const fs::path out = resolve_out(args, cfg);
    const std::uint64_t seed = resolve_seed(args, cfg);
    fs::create_directories(out);

    fedsdr::RunArtifacts artifacts;
    if (partition->parsed()) {
      artifacts = fedsdr::cmd_partition(cfg, seed, out);
    } else if (distill->parsed()) {
      artifacts = fedsdr::cmd_distill(cfg, seed, out);
    } else if (train->parsed()) {
      artifacts = fedsdr::cmd_train(cfg, seed, out);
    } else if (eval->parsed()) {
      artifacts = fedsdr::cmd_eval(cfg, seed, out, args.checkpoint);
    } else if (metrics->parsed()) {
      artifacts = fedsdr::cmd_metrics(cfg, seed, out);
    } else if (reproduce->parsed()) {
      artifacts = fedsdr::cmd_reproduce(cfg, args.suite, out);
      std::cout << fedsdr::read_text_file(out / "verdict.csv");
    }
    for (const fs::path& p : artifacts.files) std::cerr << "wrote " << p.string() << "\n";
    return 0;
  } catch (const fedsdr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

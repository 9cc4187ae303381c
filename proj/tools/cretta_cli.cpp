#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "cretta/checkpoint.hpp"
#include "cretta/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitCellFailure = 2;

struct RunOptions {
  std::string config_path;
  std::string out;
  std::string seeds;
  bool overwrite = false;
  std::size_t threads = 0;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw cretta::ConfigError("--seeds: bad value '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw cretta::ConfigError("--seeds: at least one seed is required");
  return seeds;
}

int execute(std::optional<cretta::ExperimentKind> kind, const RunOptions& opt) {
  cretta::ExperimentConfig config;
  try {
    std::optional<cretta::ExperimentConfig> base;
    if (kind) base = cretta::preset(*kind);
    if (!opt.config_path.empty()) {
      config = cretta::parse_config(cretta::read_text_file(opt.config_path), base);
    } else if (base) {
      config = *base;
    } else {
      throw cretta::ConfigError("run: --config is required");
    }
    if (!opt.seeds.empty()) config.seeds = parse_seeds(opt.seeds);
    if (opt.threads > 0) config.threads = opt.threads;
    cretta::validate(config);
  } catch (const cretta::ConfigError& e) {
    std::cerr << "config error:\n" << e.what();
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::string root = opt.out.empty() ? cretta::default_output_root() : opt.out;
  const std::string dir = root + "/" + config.name;
  if (!opt.overwrite && std::filesystem::exists(dir)) {
    std::cerr << "config error: output directory '" << dir
              << "' already exists (use --overwrite to replace it)\n";
    return kExitConfig;
  }

  const auto result = cretta::run_experiment(config, config.threads);
  try {
    cretta::write_results(result, root, opt.overwrite);
  } catch (const cretta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::size_t failed = 0;
  for (const auto& c : result.cells) {
    if (c.error.empty()) continue;
    ++failed;
    std::cerr << "cell failed: " << result.arms[c.arm].name << "/"
              << result.conditions[c.condition].label() << "/seed" << c.seed << ": " << c.error
              << "\n";
  }
  std::cout << "wrote " << dir << " (" << result.cells.size() << " cells, " << failed
            << " failed)\n";
  return failed > 0 ? kExitCellFailure : kExitOk;
}

void add_run_flags(CLI::App* cmd, RunOptions& opt, bool config_required) {
  auto* c = cmd->add_option("--config", opt.config_path, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", opt.out, "output root (default: $CRETTA_OUT or ./results)");
  cmd->add_option("--seeds", opt.seeds, "comma-separated seed list, overrides the config");
  cmd->add_flag("--overwrite", opt.overwrite, "replace an existing results directory");
  cmd->add_option("--threads", opt.threads, "worker threads (default: config value)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive residual-energy test-time adaptation experiments"};
  app.require_subcommand(1);

  RunOptions opt;
  std::optional<cretta::ExperimentKind> kind;
  auto* run = app.add_subcommand("run", "run the experiment described by --config");
  add_run_flags(run, opt, true);
  run->callback([&] { kind.reset(); });

  const std::pair<const char*, cretta::ExperimentKind> presets[] = {
      {"compare", cretta::ExperimentKind::compare},
      {"ablate", cretta::ExperimentKind::ablate},
      {"sweep", cretta::ExperimentKind::sweep},
      {"gradual", cretta::ExperimentKind::gradual},
      {"noniid", cretta::ExperimentKind::noniid}};
  for (const auto& [name, k] : presets) {
    auto* cmd = app.add_subcommand(name, std::string("built-in ") + name +
                                             " grid; --config overlays it");
    add_run_flags(cmd, opt, false);
    cmd->callback([&kind, k = k] { kind = k; });
  }

  std::string verify_dir;
  auto* verify = app.add_subcommand("verify", "recompute summary.tsv from raw logs");
  verify->add_option("dir", verify_dir, "results/<experiment> directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (verify->parsed()) {
    std::string report;
    const bool ok = cretta::verify_results(verify_dir, report);
    (ok ? std::cout : std::cerr) << report << "\n";
    return ok ? kExitOk : kExitConfig;
  }
  return execute(kind, opt);
}

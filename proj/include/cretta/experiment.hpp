#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cretta/buffer.hpp"
#include "cretta/engine.hpp"
#include "cretta/model.hpp"
#include "cretta/record.hpp"
#include "cretta/stream.hpp"

namespace cretta {

inline constexpr int kConfigFormatVersion = 1;

/// Schema violations; what() lists every problem found, one per line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { single, compare, ablate, sweep, gradual, noniid };

const char* to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

struct BufferConfig {
  double fraction = 0.10;
  bool balanced = true;
  BufferOrigin origin = BufferOrigin::source_train;
  /// Share of the source set kept by the confidence-filtered origins.
  double confidence_fraction = 0.10;
  AugmentationSpec augmentation;

  bool operator==(const BufferConfig&) const = default;
};

enum class StreamMode { iid, dirichlet, gradual };

const char* to_string(StreamMode mode);
StreamMode parse_stream_mode(const std::string& text);

struct StreamConfig {
  StreamMode mode = StreamMode::iid;
  std::size_t num_batches = 50;
  std::vector<double> deltas{10.0, 1.0, 0.1, 0.01};
  std::vector<int> gradual_severities{1, 2, 3, 4, 5};
  std::size_t batches_per_stage = 10;
  std::size_t post_eval_batches = 10;

  bool operator==(const StreamConfig&) const = default;
};

/// A named method: overrides (JSON object text) layered on the base
/// adaptation and buffer settings.
struct ArmSpec {
  std::string name;
  std::string adapt_overrides = "{}";
  std::string buffer_overrides = "{}";

  bool operator==(const ArmSpec&) const = default;
};

struct ExperimentConfig {
  int format_version = kConfigFormatVersion;
  ExperimentKind kind = ExperimentKind::single;
  std::string name = "single";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Source-domain generator; the per-seed draw replaces `seed`.
  DatasetSpec dataset;
  std::size_t target_size = 10000;
  std::vector<std::size_t> hidden{32, 32};
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;
  PretrainConfig pretrain;
  std::vector<CorruptionKind> corruptions{CorruptionKind::rotation};
  std::vector<int> severities{5};
  StreamConfig stream;
  AdaptConfig adapt;
  BufferConfig buffer;
  std::vector<ArmSpec> arms{{"cretta", R"({"loss":"cretta"})", "{}"}};
  /// Sweep experiments run every arm once per value.
  std::vector<double> betas;
  std::size_t threads = 1;

  Architecture architecture() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Built-in grid for each experiment kind.
ExperimentConfig preset(ExperimentKind kind);

/// Overlays a JSON document on the preset for its "experiment" kind (or on
/// `base` when given). Unknown keys and invalid values raise ConfigError.
ExperimentConfig parse_config(const std::string& text,
                              const std::optional<ExperimentConfig>& base = std::nullopt);
/// Canonical, fully-expanded JSON; parse_config(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& config);
/// Throws ConfigError listing every violation.
void validate(const ExperimentConfig& config);

struct Arm {
  std::string name;
  AdaptConfig adapt;
  BufferConfig buffer;
};

std::vector<Arm> resolve_arms(const ExperimentConfig& config);

struct Condition {
  CorruptionKind kind = CorruptionKind::rotation;
  int severity = 5;
  std::optional<double> delta;

  /// Directory name: <corruption>_<severity>[_delta<d>].
  std::string label() const;
};

std::vector<Condition> conditions(const ExperimentConfig& config);

struct CellResult {
  std::size_t arm = 0;
  std::size_t condition = 0;
  std::uint64_t seed = 0;
  std::vector<RunRecord> records;
  /// Non-empty when the cell failed (e.g. a non-finite loss).
  std::string error;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<Arm> arms;
  std::vector<Condition> conditions;
  std::vector<CellResult> cells;  // arm-major, then condition, then seed

  bool any_failed() const;
  /// Records of one cell; throws std::out_of_range when absent.
  const CellResult& cell(const std::string& arm, const std::string& condition,
                         std::uint64_t seed) const;
};

/// Source dataset and pretrained frozen model for one seed.
struct SourceSetup {
  Dataset data;
  Classifier model = Classifier::initialize({}, 0);
};

SourceSetup prepare_source(const ExperimentConfig& config, std::uint64_t seed);

/// Builds the buffer for an arm from its configuration.
SourceBuffer build_buffer(const ExperimentConfig& config, const BufferConfig& buffer,
                          const SourceSetup& source, std::uint64_t seed);

/// Target stream for one condition and seed.
std::vector<StreamBatch> build_stream(const ExperimentConfig& config,
                                      const Condition& condition, std::uint64_t seed);

/// Runs every (arm, condition, seed) cell on `threads` workers. Cells are
/// independent, so the result does not depend on the thread count.
ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t threads = 1);

/// Per-seed cell metrics, all derived from the records alone.
struct CellSummary {
  std::size_t batches = 0;
  double acc = 0.0;          // percent, mean online accuracy
  double acc_last10 = 0.0;
  double ece_first = 0.0;    // percent, running ECE after the first batch
  double ece_final = 0.0;
  double energy_first = 0.0;
  double energy_last = 0.0;
  double conf_first = 0.0;
  double conf_last = 0.0;
  double conf_spearman = 0.0;
  std::optional<double> weight_first;
  std::optional<double> weight_last;
  double forward_per_batch = 0.0;
  double backward_per_batch = 0.0;
  std::optional<double> post_acc;  // frozen batches, percent
  std::optional<double> ref_acc;
};

std::vector<std::string> plot_metrics();

CellSummary summarize_cell(const std::vector<RunRecord>& records);

std::string summary_tsv(const ExperimentResult& result);
/// Long-format rows (method, condition, seed, batch, metric, value) for every
/// record of every successful cell. Unknown metric names throw
/// std::invalid_argument naming the metric.
std::string plot_tsv(const ExperimentResult& result,
                     const std::vector<std::string>& metrics = plot_metrics());

/// results/<name>/<arm>/<condition>/seed<k>.log plus config.json,
/// summary.tsv, plot.tsv, environment.json. Refuses to touch an existing
/// directory unless overwrite is set.
void write_results(const ExperimentResult& result, const std::string& root,
                   bool overwrite);

/// Recomputes summary.tsv from the raw logs under `dir`; returns true when
/// byte-identical. `report` receives the mismatch description.
bool verify_results(const std::string& dir, std::string& report);

/// Default output root: $CRETTA_OUT or "results".
std::string default_output_root();

}  // namespace cretta

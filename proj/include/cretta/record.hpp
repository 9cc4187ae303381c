#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cretta {

struct CostCounters {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::uint64_t updates = 0;
  /// Source-model forwards over buffer batches, done once per distinct
  /// cursor position and cached afterwards.
  std::uint64_t precompute_forward = 0;

  bool operator==(const CostCounters&) const = default;
};

/// One row per processed batch. Quantities a method does not compute are
/// left empty (written as null).
struct RunRecord {
  std::size_t batch = 0;
  std::string stage;
  bool frozen = false;
  std::size_t batch_size = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double mean_entropy = 0.0;
  std::optional<double> loss;
  std::optional<double> mean_weight;
  double mean_energy_target = 0.0;  // E_theta(x_t) at prediction time
  std::optional<double> mean_energy_source;       // E_theta(x_s)
  std::optional<double> mean_phi_energy_target;   // E_phi(x_t)
  /// Frozen batches only: accuracy of the source model (running-stat BN) on
  /// the same inputs, the pre-adaptation reference.
  std::optional<double> reference_accuracy;
  std::size_t retained = 0;
  std::size_t substitutions = 0;
  /// Running ECE over every adapted batch so far in the episode.
  double ece_running = 0.0;
  /// This batch's ECE bin sums (count, confidence sum, correct count).
  std::vector<std::uint64_t> ece_count;
  std::vector<double> ece_confidence;
  std::vector<std::uint64_t> ece_correct;
  /// Max abs difference between the applied and the autodiff gradient when
  /// the spot check ran on this batch.
  std::optional<double> grad_check;
  CostCounters cost;

  bool operator==(const RunRecord&) const = default;
};

std::string record_to_json_line(const RunRecord& record);
RunRecord record_from_json_line(const std::string& line);

}  // namespace cretta

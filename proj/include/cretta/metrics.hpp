#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cretta/record.hpp"
#include "cretta/tensor.hpp"

namespace cretta {

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

struct CalibrationInput {
  std::vector<double> confidences;
  std::vector<bool> correct;
  std::size_t bins = 10;
};

/// 1-based bin of confidence c: (m-1)/M < c <= m/M, with c = 0 in bin 1.
std::size_t ece_bin(double confidence, std::size_t bins);

/// Streaming ECE bin sums; value() reproduces ece() on the same samples.
class EceAccumulator {
 public:
  explicit EceAccumulator(std::size_t bins = 10);
  void add(double confidence, bool correct);
  /// Merges per-bin sums (e.g. one batch's contribution).
  void add_bins(std::span<const std::uint64_t> count,
                std::span<const double> confidence_sum,
                std::span<const std::uint64_t> correct);
  double value() const;
  std::size_t total() const { return total_; }
  std::size_t bins() const { return count_.size(); }

  const std::vector<std::uint64_t>& count() const { return count_; }
  const std::vector<double>& confidence_sum() const { return conf_; }
  const std::vector<std::uint64_t>& correct() const { return correct_; }

 private:
  std::vector<std::uint64_t> count_;
  std::vector<double> conf_;
  std::vector<std::uint64_t> correct_;
  std::size_t total_ = 0;
};

/// sum_m (|bin_m| / N) |conf_m - acc_m| over equal-width bins.
double ece(const CalibrationInput& input);

/// Error rates [corruption][severity] for the evaluated model and the base.
struct CorruptionErrorTable {
  std::vector<std::vector<double>> model_error;
  std::vector<std::vector<double>> base_error;
};

/// 100 * mean_c (sum_s E_cs(f) / sum_s E_cs(f0)).
double mce(const CorruptionErrorTable& table);

struct ConfidenceStats {
  double mean_confidence = 0.0;
  double mean_entropy = 0.0;
};

ConfidenceStats confidence_stats(const Tensor& logits);

std::vector<std::size_t> default_trajectory_indices();

struct TrajectoryRow {
  std::size_t batch = 0;
  double target_energy = 0.0;
  double mean_weight = 0.0;  // 0 for methods without pair weights
  double ece = 0.0;
};

struct EnergyTrajectory {
  std::vector<TrajectoryRow> rows;
  double delta_energy = 0.0;
  double delta_weight = 0.0;
  double delta_ece = 0.0;
};

EnergyTrajectory energy_trajectory(std::span<const RunRecord> records,
                                   std::span<const std::size_t> batch_indices);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace cretta

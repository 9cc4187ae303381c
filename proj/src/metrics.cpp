#include "cretta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cretta/model.hpp"
#include "cretta/objectives.hpp"

namespace cretta {

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size())
    throw std::invalid_argument("accuracy: logits/labels mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty batch");
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (static_cast<int>(pred[i]) == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::size_t ece_bin(double c, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ece: confidence outside [0, 1]");
  const double M = static_cast<double>(bins);
  auto m = static_cast<std::size_t>(std::ceil(c * M));
  m = std::clamp<std::size_t>(m, 1, bins);
  // Exact boundary comparisons guard against rounding in c * M.
  while (m > 1 && c <= static_cast<double>(m - 1) / M) --m;
  while (m < bins && c > static_cast<double>(m) / M) ++m;
  return m;
}

EceAccumulator::EceAccumulator(std::size_t bins)
    : count_(bins, 0), conf_(bins, 0.0), correct_(bins, 0) {
  if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
}

void EceAccumulator::add(double confidence, bool correct) {
  const std::size_t m = ece_bin(confidence, count_.size()) - 1;
  count_[m] += 1;
  conf_[m] += confidence;
  correct_[m] += correct ? 1 : 0;
  ++total_;
}

void EceAccumulator::add_bins(std::span<const std::uint64_t> count,
                              std::span<const double> confidence_sum,
                              std::span<const std::uint64_t> correct) {
  if (count.size() != count_.size() || confidence_sum.size() != conf_.size() ||
      correct.size() != correct_.size())
    throw std::invalid_argument("EceAccumulator: bin count mismatch");
  for (std::size_t m = 0; m < count_.size(); ++m) {
    count_[m] += count[m];
    conf_[m] += confidence_sum[m];
    correct_[m] += correct[m];
    total_ += count[m];
  }
}

double EceAccumulator::value() const {
  if (total_ == 0) return 0.0;
  const double n = static_cast<double>(total_);
  double out = 0.0;
  for (std::size_t m = 0; m < count_.size(); ++m) {
    if (count_[m] == 0) continue;
    const double k = static_cast<double>(count_[m]);
    out += (k / n) * std::abs(conf_[m] / k - static_cast<double>(correct_[m]) / k);
  }
  return out;
}

double ece(const CalibrationInput& input) {
  if (input.confidences.size() != input.correct.size())
    throw std::invalid_argument("ece: confidences/correctness length mismatch");
  EceAccumulator acc(input.bins);
  for (std::size_t i = 0; i < input.confidences.size(); ++i)
    acc.add(input.confidences[i], input.correct[i]);
  return acc.value();
}

double mce(const CorruptionErrorTable& table) {
  const auto& f = table.model_error;
  const auto& f0 = table.base_error;
  if (f.empty() || f.size() != f0.size())
    throw std::invalid_argument("mce: table shapes differ or are empty");
  double total = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c) {
    if (f[c].size() != f0[c].size() || f[c].empty())
      throw std::invalid_argument("mce: missing severity cells");
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < f[c].size(); ++s) {
      num += f[c][s];
      den += f0[c][s];
    }
    if (den == 0.0)
      throw std::invalid_argument("mce: base model has zero error on corruption " +
                                  std::to_string(c));
    total += num / den;
  }
  return 100.0 * total / static_cast<double>(f.size());
}

ConfidenceStats confidence_stats(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() == 0)
    throw std::invalid_argument("confidence_stats: need non-empty [n x C]");
  const std::size_t n = logits.rows(), c = logits.cols();
  const auto p = softmax_rows(logits);
  ConfidenceStats s;
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0, h = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double q = p[i * c + k];
      best = std::max(best, q);
      if (q > 0.0) h -= q * std::log(q);
    }
    s.mean_confidence += best;
    s.mean_entropy += h;
  }
  s.mean_confidence /= static_cast<double>(n);
  s.mean_entropy /= static_cast<double>(n);
  return s;
}

std::vector<std::size_t> default_trajectory_indices() { return {0, 9, 19, 29, 39, 49}; }

EnergyTrajectory energy_trajectory(std::span<const RunRecord> records,
                                   std::span<const std::size_t> batch_indices) {
  if (batch_indices.empty()) throw std::invalid_argument("energy_trajectory: no indices");
  EnergyTrajectory t;
  for (std::size_t idx : batch_indices) {
    if (idx >= records.size())
      throw std::out_of_range("energy_trajectory: batch index " + std::to_string(idx) +
                              " beyond " + std::to_string(records.size()) + " records");
    const auto& r = records[idx];
    t.rows.push_back({idx, r.mean_energy_target, r.mean_weight.value_or(0.0), r.ece_running});
  }
  t.delta_energy = t.rows.back().target_energy - t.rows.front().target_energy;
  t.delta_weight = t.rows.back().mean_weight - t.rows.front().mean_weight;
  t.delta_ece = t.rows.back().ece - t.rows.front().ece;
  return t;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series, n >= 2");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cretta

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cretta/model.hpp"
#include "cretta/objectives.hpp"
#include "cretta/stream.hpp"
#include "cretta/tensor.hpp"

namespace cretta {

class Rng;

enum class BufferOrigin { source_train, surrogate_dataset, confidence_high, confidence_low };

const char* to_string(BufferOrigin origin);
BufferOrigin parse_buffer_origin(const std::string& text);

/// Per-sample transform applied on read: with `probability`, rotate the
/// (0, 1) plane by U(-max_rotation_deg, max_rotation_deg) and add N(0, jitter^2).
struct AugmentationSpec {
  double probability = 0.0;
  double max_rotation_deg = 5.0;
  double jitter_sd = 0.05;

  bool enabled() const { return probability > 0.0; }
  bool operator==(const AugmentationSpec&) const = default;
};

struct SourceBuffer {
  Tensor samples;          // [m x d], never modified after init
  std::vector<int> labels; // init / filtering only; never read by a loss
  std::size_t cursor = 0;
  AugmentationSpec augmentation;
  BufferOrigin origin = BufferOrigin::source_train;

  std::size_t size() const { return labels.size(); }
};

/// round(fraction * N) samples in seeded random order. Balanced mode draws
/// classes round-robin so per-class counts differ by at most one (classes
/// that run out are skipped).
SourceBuffer init_buffer(const Dataset& source, double fraction, bool balanced,
                         std::uint64_t seed);

struct SourceBatch {
  Tensor inputs;
  std::vector<std::size_t> indices;
  std::size_t start = 0;
  bool augmented = false;
};

/// Next batch_size rows from the cursor with wraparound; advances the cursor.
/// `rng` is required only when augmentation is enabled.
SourceBatch next_source_batch(SourceBuffer& buffer, std::size_t batch_size,
                              Rng* rng = nullptr);

/// Rows next_source_batch would return from a given cursor, without moving it.
std::vector<std::size_t> buffer_rows(const SourceBuffer& buffer,
                                     std::size_t start, std::size_t batch_size);

enum class PairingMode { aligned, cartesian };

const char* to_string(PairingMode mode);
PairingMode parse_pairing_mode(const std::string& text);

/// aligned: (i, i) for i < n, requires equal sizes; cartesian: all n * k.
std::vector<PairIndex> make_pairs(std::size_t target_rows,
                                  std::size_t source_rows, PairingMode mode);
std::vector<PairIndex> make_pairs(const Tensor& target_batch,
                                  const Tensor& source_batch, PairingMode mode);

enum class ConfidenceKeep { top_fraction, bottom_fraction };

/// Max softmax probability of the frozen source model per row.
std::vector<double> source_confidence(const Classifier& source,
                                      const Dataset& data);

/// Keeps round(fraction * N) rows (at least 1) ranked by source confidence;
/// ties resolved by dataset index.
Dataset confidence_filter(const Dataset& data, const Classifier& source,
                          ConfidenceKeep keep, double fraction);

}  // namespace cretta

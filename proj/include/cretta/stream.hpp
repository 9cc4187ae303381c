#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cretta/tensor.hpp"

namespace cretta {

enum class DatasetKind { blobs, moons };

const char* to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

/// Generator for the synthetic classification tasks. Blob geometry (class
/// axis, offset) is fixed; only the sample draw depends on the seed.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::blobs;
  std::size_t n = 10000;
  std::size_t dim = 10;
  std::size_t num_classes = 2;
  double separation = 4.0;
  /// Constant shift along coordinate 0, so a rotation moves data off-axis.
  double offset = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  Tensor inputs;  // [N x d]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  DatasetSpec spec;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

Dataset make_dataset(const DatasetSpec& spec);

enum class CorruptionKind { gaussian_noise, feature_scale, rotation, occlusion, shear };

const char* to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(const std::string& text);
std::vector<CorruptionKind> all_corruption_kinds();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::rotation;
  int severity = 0;  // 0 is the identity, 1..5 increasing intensity

  bool operator==(const CorruptionSpec&) const = default;
};

/// Severity-dependent intensity: noise sd, scale factor, angle (radians),
/// occluded-coordinate count (for width d), or shear coefficient.
double corruption_intensity(const CorruptionSpec& spec, std::size_t dim);

Tensor corrupt(const Tensor& inputs, const CorruptionSpec& spec,
               std::uint64_t seed);
Dataset corrupt(const Dataset& data, const CorruptionSpec& spec,
                std::uint64_t seed);

/// Rotation of the (0, 1) coordinate plane by `radians`.
Tensor rotate_plane(const Tensor& inputs, double radians);

/// One emitted stream batch with its stage tag.
struct StreamBatch {
  Tensor inputs;
  std::vector<int> labels;
  std::string stage = "P";
  int severity = 0;
  /// Frozen evaluation: running-stat BN, no updates.
  bool frozen = false;
  /// Samples drawn from a different class than the Dirichlet draw asked for.
  std::size_t substitutions = 0;

  std::size_t size() const { return labels.size(); }
};

/// Sequential read of seeded permutations; a fresh permutation each epoch.
std::vector<StreamBatch> iid_stream(const Dataset& data, std::size_t batch_size,
                                    std::size_t num_batches, std::uint64_t seed);

/// Per batch: class proportions ~ Dir(delta * 1), class of each slot drawn
/// from them, samples taken per class without replacement within an epoch.
std::vector<StreamBatch> dirichlet_stream(const Dataset& data, double delta,
                                          std::size_t batch_size,
                                          std::size_t num_batches,
                                          std::uint64_t seed);

struct GradualSpec {
  CorruptionKind kind = CorruptionKind::rotation;
  std::vector<int> severities{1, 2, 3, 4, 5};
  std::size_t batches_per_stage = 10;
  std::size_t post_eval_batches = 10;
};

/// Clean stage "Q", then one stage per severity (the last tagged "P"), then
/// frozen evaluation batches on clean data tagged "Q_post".
std::vector<StreamBatch> gradual_stream(const Dataset& clean,
                                        const GradualSpec& spec,
                                        std::size_t batch_size,
                                        std::uint64_t seed);

}  // namespace cretta

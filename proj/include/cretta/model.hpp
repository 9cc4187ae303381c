#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cretta/tensor.hpp"

namespace cretta {

enum class Role { source, target };
enum class BnMode { batch_stats, running_stats };

const char* to_string(Role role);
const char* to_string(BnMode mode);
BnMode parse_bn_mode(const std::string& text);

struct Architecture {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t num_classes = 2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  bool operator==(const Architecture&) const = default;
};

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  bool operator==(const BatchNormStats&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Which parameters receive updates during adaptation, aligned with
/// Classifier::parameter_names().
struct ParamMask {
  std::vector<bool> adaptable;

  std::size_t count() const;
  bool operator==(const ParamMask&) const = default;
};

class Classifier;

ParamMask bn_affine_mask(const Classifier& model);
ParamMask all_parameters_mask(const Classifier& model);

/// MLP of hidden blocks (affine -> batch-norm -> ReLU) and a final affine
/// head. Plays the frozen source model or the adaptable target model.
class Classifier {
 public:
  /// Fresh model (uniform +-1/sqrt(fan_in) affine init, unit BN) in the
  /// target role, ready to train.
  static Classifier initialize(const Architecture& arch, std::uint64_t seed);

  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  Role role() const { return role_; }
  const Architecture& architecture() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::span<const double> parameter_values(std::size_t index) const;
  const Shape& parameter_shape(std::size_t index) const;
  std::size_t parameter_index(const std::string& name) const;
  /// Live handles for optimization. Throws std::logic_error on a source model.
  std::vector<NamedTensor> parameters();

  const std::vector<BatchNormStats>& bn_stats() const { return bn_stats_; }

  Tensor forward(const Tensor& x, BnMode mode) const;
  /// Batch-statistics forward that also folds the batch moments into the
  /// running statistics (pretraining only).
  Tensor forward_train(const Tensor& x);

  /// Marks parameters differentiable according to the mask.
  void set_mask(const ParamMask& mask);
  ParamMask mask() const;

  /// FNV-1a over every parameter and running-statistic byte.
  std::uint64_t fingerprint() const;

  bool operator==(const Classifier& other) const;

  // Restoration from serialized form; see checkpoint.hpp.
  static Classifier from_parts(Architecture arch, Role role, std::uint64_t seed,
                               std::vector<std::vector<double>> values,
                               std::vector<BatchNormStats> stats);

  friend Classifier clone_as_target(const Classifier& source);
  friend Classifier freeze_as_source(Classifier model);

 private:
  Classifier() = default;
  void require_mutable(const char* what) const;
  Tensor run(const Tensor& x, BnMode mode,
             std::vector<BatchNormStats>* update_stats) const;
  void build_names();

  Architecture arch_;
  Role role_ = Role::target;
  std::uint64_t seed_ = 0;
  // Order per hidden block: weight, bias, bn.gamma, bn.beta; then head weight,
  // head bias.
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::vector<BatchNormStats> bn_stats_;
};

/// Deep copy in the target role with bitwise-equal parameters.
Classifier clone_as_target(const Classifier& source);
/// Seals a trained model as the immutable source model.
Classifier freeze_as_source(Classifier model);

/// Per-row free energy -T log sum_k exp(logit_k / T) -> {n}.
Tensor energy(const Tensor& logits, double temperature = 1.0);

/// dE/dlogit_k = -softmax(logits / T)_k, the closed form used to check
/// autodiff through energy().
std::vector<double> energy_logit_grad(std::span<const double> logits,
                                      double temperature = 1.0);

/// Row-wise softmax probabilities of a logit matrix (no tape).
std::vector<double> softmax_rows(const Tensor& logits);

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 200;
  double lr = 1e-2;

  bool operator==(const PretrainConfig&) const = default;
};

/// Supervised cross-entropy training with Adam on all parameters; returns the
/// model frozen as source.
Classifier pretrain_source(const Architecture& arch, const Tensor& inputs,
                           std::span<const int> labels,
                           const PretrainConfig& config, std::uint64_t seed);

}  // namespace cretta

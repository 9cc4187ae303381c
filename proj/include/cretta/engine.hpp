#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cretta/buffer.hpp"
#include "cretta/metrics.hpp"
#include "cretta/model.hpp"
#include "cretta/numerics.hpp"
#include "cretta/objectives.hpp"
#include "cretta/record.hpp"
#include "cretta/stream.hpp"

namespace cretta {

enum class WeightMode { analytic, uniform_random };
enum class EvalOrder { predict_then_adapt, adapt_then_predict };
enum class MaskPolicy { bn_affine, all };

const char* to_string(WeightMode mode);
const char* to_string(EvalOrder order);
const char* to_string(MaskPolicy policy);
WeightMode parse_weight_mode(const std::string& text);
EvalOrder parse_eval_order(const std::string& text);
MaskPolicy parse_mask_policy(const std::string& text);

struct AdaptConfig {
  LossVariant loss = LossVariant::cretta;
  double beta = 1.0;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 200;
  MaskPolicy mask = MaskPolicy::bn_affine;
  /// BN statistics used by both models while adapting.
  BnMode bn_mode = BnMode::batch_stats;
  WeightMode weight_mode = WeightMode::analytic;
  PairingMode pairing = PairingMode::aligned;
  EvalOrder eval_order = EvalOrder::predict_then_adapt;
  double temperature = 1.0;
  double pl_threshold = 0.9;
  double nce_constant = 0.0;
  /// Compare the assembled gradient with autodiff every this many batches
  /// (0 disables).
  std::size_t grad_check_interval = 10;
  std::size_t ece_bins = 10;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const AdaptConfig&) const = default;
};

/// Raised when a loss evaluates to NaN or infinity; the episode stops.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-form per-batch counts for a configuration (cached source-buffer
/// energies assumed; augmentation adds one source-model forward).
CostCounters expected_cost_per_batch(const AdaptConfig& config,
                                     bool augmentation = false);

/// Analytic multiply-add estimate of one forward pass of `arch` per sample.
double forward_flops(const Architecture& arch);

/// Per-sample cost in forward-pass units (backward = 2 forward) of one
/// adaptation step for `config`, or of an SGLD-sampling pipeline with
/// `sgld_steps` energy-gradient steps plus one likelihood update.
double step_cost_units(const AdaptConfig& config);
double sgld_step_cost_units(std::size_t sgld_steps);

class Engine {
 public:
  using WeightSampler = std::function<double()>;

  Engine(const Classifier& source, SourceBuffer buffer, AdaptConfig config);

  /// Processes one stream batch: predicts (logged) and, unless the batch is
  /// frozen or the method has no loss, takes one masked Adam step.
  RunRecord step(const StreamBatch& batch);

  /// Episodic reset: target back to the source copy, fresh optimizer state,
  /// buffer cursor and running ECE cleared. Cost counters keep counting.
  void reset();

  /// Replaces the U[0, 1) draws of the uniform-weight ablation.
  void set_weight_sampler(WeightSampler sampler) { sampler_ = std::move(sampler); }

  const Classifier& source() const { return source_; }
  const Classifier& target() const { return target_; }
  const AdaptConfig& config() const { return config_; }
  const SourceBuffer& buffer() const { return buffer_; }
  const CostCounters& cost() const { return cost_; }
  std::size_t batches_processed() const { return batch_; }
  double running_ece() const { return ece_.value(); }

  /// Full state as versioned JSON; restore() reproduces later records bitwise.
  std::string snapshot() const;
  static Engine restore(const std::string& text);

 private:
  Engine() = default;
  void init_optimizer();
  std::vector<double> cached_phi_energies(const SourceBatch& batch);
  RunRecord frozen_eval(const StreamBatch& batch);

  Classifier source_ = Classifier::initialize({}, 0);
  Classifier target_ = Classifier::initialize({}, 0);
  AdaptConfig config_;
  SourceBuffer buffer_;
  std::vector<AdamState> adam_;  // one per parameter; empty m/v when frozen
  Rng rng_;
  WeightSampler sampler_;
  CostCounters cost_;
  std::size_t batch_ = 0;
  EceAccumulator ece_;
  std::map<std::size_t, std::vector<double>> phi_cache_;
};

/// Runs the batches in order; an empty stream leaves the target untouched.
std::vector<RunRecord> run_episode(Engine& engine,
                                   std::span<const StreamBatch> batches);

}  // namespace cretta

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cretta/tensor.hpp"

namespace cretta {

/// Adaptation methods. Every tag except `source` is a loss surface (or, for
/// bn_only, the absence of one) applied to the target model.
enum class LossVariant {
  source,
  bn_only,
  entropy_tent,
  pseudo_label,
  cretta,
  no_contrastive,
  no_contrastive_sigma,
  pairwise_non_residual,
  nce_residual,
  nce_non_residual,
};

const char* to_string(LossVariant variant);
LossVariant parse_loss_variant(const std::string& tag);
std::vector<LossVariant> all_loss_variants();

/// Index pair (target row, source row) that forms one contrastive pair.
struct PairIndex {
  std::size_t target;
  std::size_t source;
  bool operator==(const PairIndex&) const = default;
};

/// Aligned source/target pairs with their four energies (already gathered per
/// pair) and the contrastive logit. Source-model energies carry no history.
struct PairBatch {
  Tensor source_inputs;
  Tensor target_inputs;
  Tensor e_phi_s;
  Tensor e_phi_t;
  Tensor e_theta_s;
  Tensor e_theta_t;
  Tensor logits;
  double beta = 1.0;
  std::vector<PairIndex> pairs;

  std::size_t size() const { return logits.size(); }
};

/// beta*(E_phi(x_t) - E_phi(x_s)) - beta*(E_theta(x_t) - E_theta(x_s)).
double cretta_logit(double e_phi_s, double e_phi_t, double e_theta_s,
                    double e_theta_t, double beta);

/// Builds a PairBatch from per-sample energies and a pair list. Energies are
/// vectors over the rows of the respective batch.
PairBatch make_pair_batch(const Tensor& source_inputs,
                          const Tensor& target_inputs, const Tensor& e_phi_s,
                          const Tensor& e_phi_t, const Tensor& e_theta_s,
                          const Tensor& e_theta_t, double beta,
                          std::vector<PairIndex> pairs);

/// -(1/|B|) sum log sigma(l).
Tensor cretta_loss(const PairBatch& batch);

/// sigma(-l): the per-pair factor multiplying each pair's gradient.
double gradient_weight(double logit);
std::vector<double> gradient_weights(const PairBatch& batch);

/// Closed-form gradient (beta/|B|) sum_i w_i (dE_theta(x_t,i) - dE_theta(x_s,i))
/// from per-pair Jacobians. jac_s / jac_t are [pairs x P] matrices of
/// dE_theta/dparams for each pair's source / target member. Returns {P}.
std::vector<double> assemble_cretta_gradient(const PairBatch& batch,
                                             const Tensor& jac_s,
                                             const Tensor& jac_t,
                                             std::span<const double> weights);
std::vector<double> assemble_cretta_gradient(const PairBatch& batch,
                                             const Tensor& jac_s,
                                             const Tensor& jac_t);

/// Cotangents for e_theta_s / e_theta_t that make a reverse pass produce the
/// assembled gradient with the given weights (VJP form of the above).
std::pair<std::vector<double>, std::vector<double>> cretta_energy_seeds(
    const PairBatch& batch, std::span<const double> weights);

/// Mean target energy, the "w/o contrastive" reading used by default.
Tensor no_contrastive_loss(const Tensor& e_theta_t);
/// Alternative reading: drop only the source terms inside the sigmoid.
Tensor no_contrastive_sigma_loss(const Tensor& e_phi_t, const Tensor& e_theta_t,
                                 double beta);

/// -mean log sigma(E_theta(x_s) - E_theta(x_t)); no source-model terms.
Tensor pairwise_non_residual_loss(const Tensor& e_theta_s,
                                  const Tensor& e_theta_t);

enum class NceVariant { residual, non_residual };

struct PopulationEnergies {
  Tensor theta;
  Tensor phi;
};

struct NceParams {
  double beta = 1.0;
  double constant = 0.0;
};

/// Reward per sample: non-residual r = -(E_theta - E_phi) + C; residual
/// r = -(1/beta) R + c with residual energy R = E_theta - E_phi. The two
/// coincide when beta = 1.
Tensor nce_reward(const PopulationEnergies& population, NceVariant variant,
                  const NceParams& params);

/// -E_t[log sigma(r)] - E_s[log(1 - sigma(r))].
Tensor nce_loss(const PopulationEnergies& source,
                const PopulationEnergies& target, NceVariant variant,
                const NceParams& params);

/// Mean Shannon entropy (nats) of the softmax rows.
Tensor entropy_loss(const Tensor& logits);

struct PseudoLabelResult {
  Tensor loss;
  std::size_t retained = 0;
};

/// Cross-entropy of each row against its own argmax (lowest index on ties),
/// restricted to rows whose max softmax probability reaches the threshold.
PseudoLabelResult pseudo_label_loss(const Tensor& logits,
                                    double confidence_threshold);

/// Argmax per row, lowest index wins ties.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace cretta

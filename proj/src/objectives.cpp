#include "cretta/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "cretta/model.hpp"
#include "cretta/numerics.hpp"

namespace cretta {

namespace {

struct VariantName {
  LossVariant variant;
  const char* tag;
};

constexpr VariantName kVariantNames[] = {
    {LossVariant::source, "source"},
    {LossVariant::bn_only, "bn_only"},
    {LossVariant::entropy_tent, "entropy_tent"},
    {LossVariant::pseudo_label, "pseudo_label"},
    {LossVariant::cretta, "cretta"},
    {LossVariant::no_contrastive, "no_contrastive"},
    {LossVariant::no_contrastive_sigma, "no_contrastive_sigma"},
    {LossVariant::pairwise_non_residual, "pairwise_non_residual"},
    {LossVariant::nce_residual, "nce_residual"},
    {LossVariant::nce_non_residual, "nce_non_residual"},
};

void require_nonempty(const char* what, const Tensor& t) {
  if (t.size() == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
}

}  // namespace

const char* to_string(LossVariant variant) {
  for (const auto& v : kVariantNames)
    if (v.variant == variant) return v.tag;
  return "unknown";
}

LossVariant parse_loss_variant(const std::string& tag) {
  for (const auto& v : kVariantNames)
    if (tag == v.tag) return v.variant;
  throw std::invalid_argument("unknown loss variant '" + tag + "'");
}

std::vector<LossVariant> all_loss_variants() {
  std::vector<LossVariant> out;
  for (const auto& v : kVariantNames) out.push_back(v.variant);
  return out;
}

double cretta_logit(double e_phi_s, double e_phi_t, double e_theta_s,
                    double e_theta_t, double beta) {
  return beta * (e_phi_t - e_phi_s) - beta * (e_theta_t - e_theta_s);
}

PairBatch make_pair_batch(const Tensor& source_inputs,
                          const Tensor& target_inputs, const Tensor& e_phi_s,
                          const Tensor& e_phi_t, const Tensor& e_theta_s,
                          const Tensor& e_theta_t, double beta,
                          std::vector<PairIndex> pairs) {
  if (!(beta > 0.0)) throw std::invalid_argument("PairBatch: beta must be > 0");
  if (pairs.empty()) throw std::invalid_argument("PairBatch: no pairs");
  if (e_phi_s.size() != e_theta_s.size() || e_phi_t.size() != e_theta_t.size())
    throw std::invalid_argument("PairBatch: energy length mismatch");
  std::vector<std::size_t> ti, si;
  ti.reserve(pairs.size());
  si.reserve(pairs.size());
  for (const auto& p : pairs) {
    ti.push_back(p.target);
    si.push_back(p.source);
  }
  PairBatch b;
  b.source_inputs = source_inputs;
  b.target_inputs = target_inputs;
  b.beta = beta;
  b.e_phi_s = gather(e_phi_s.detach(), si);
  b.e_phi_t = gather(e_phi_t.detach(), ti);
  b.e_theta_s = gather(e_theta_s, si);
  b.e_theta_t = gather(e_theta_t, ti);
  // beta * (E_phi(x_t) - E_phi(x_s)) is a constant offset; the trainable part
  // enters through -beta * (E_theta(x_t) - E_theta(x_s)).
  Tensor bias = scale(sub(b.e_phi_t, b.e_phi_s), beta);
  b.logits = sub(bias, scale(sub(b.e_theta_t, b.e_theta_s), beta));
  b.pairs = std::move(pairs);
  return b;
}

Tensor cretta_loss(const PairBatch& batch) {
  require_nonempty("cretta_loss", batch.logits);
  return neg(mean(log_sigmoid(batch.logits)));
}

double gradient_weight(double logit) { return sigmoid(-logit); }

std::vector<double> gradient_weights(const PairBatch& batch) {
  std::vector<double> w(batch.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = gradient_weight(batch.logits.at(i));
  return w;
}

std::vector<double> assemble_cretta_gradient(const PairBatch& batch,
                                             const Tensor& jac_s,
                                             const Tensor& jac_t,
                                             std::span<const double> weights) {
  const std::size_t n = batch.size();
  if (jac_s.rank() != 2 || jac_s.shape() != jac_t.shape() || jac_s.rows() != n ||
      weights.size() != n)
    throw std::invalid_argument(
        "assemble_cretta_gradient: Jacobians must be [pairs x P] and match");
  const std::size_t p = jac_s.cols();
  std::vector<double> grad(p, 0.0);
  const double scale_factor = batch.beta / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = scale_factor * weights[i];
    for (std::size_t k = 0; k < p; ++k)
      grad[k] += c * (jac_t.at(i, k) - jac_s.at(i, k));
  }
  return grad;
}

std::vector<double> assemble_cretta_gradient(const PairBatch& batch,
                                             const Tensor& jac_s,
                                             const Tensor& jac_t) {
  return assemble_cretta_gradient(batch, jac_s, jac_t, gradient_weights(batch));
}

std::pair<std::vector<double>, std::vector<double>> cretta_energy_seeds(
    const PairBatch& batch, std::span<const double> weights) {
  const std::size_t n = batch.size();
  if (weights.size() != n)
    throw std::invalid_argument("cretta_energy_seeds: one weight per pair");
  const double c = batch.beta / static_cast<double>(n);
  std::vector<double> seed_s(n), seed_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    seed_t[i] = c * weights[i];
    seed_s[i] = -c * weights[i];
  }
  return {std::move(seed_s), std::move(seed_t)};
}

Tensor no_contrastive_loss(const Tensor& e_theta_t) {
  require_nonempty("no_contrastive_loss", e_theta_t);
  return mean(e_theta_t);
}

Tensor no_contrastive_sigma_loss(const Tensor& e_phi_t, const Tensor& e_theta_t,
                                 double beta) {
  require_nonempty("no_contrastive_sigma_loss", e_theta_t);
  Tensor l = scale(sub(e_phi_t.detach(), e_theta_t), beta);
  return neg(mean(log_sigmoid(l)));
}

Tensor pairwise_non_residual_loss(const Tensor& e_theta_s,
                                  const Tensor& e_theta_t) {
  require_nonempty("pairwise_non_residual_loss", e_theta_t);
  return neg(mean(log_sigmoid(sub(e_theta_s, e_theta_t))));
}

Tensor nce_reward(const PopulationEnergies& population, NceVariant variant,
                  const NceParams& params) {
  Tensor diff = sub(population.theta, population.phi.detach());
  if (variant == NceVariant::non_residual)
    return add_scalar(neg(diff), params.constant);
  if (!(params.beta > 0.0)) throw std::invalid_argument("nce: beta must be > 0");
  // Residual energy is the energy gap itself, tempered by beta.
  return add_scalar(scale(diff, -1.0 / params.beta), params.constant);
}

Tensor nce_loss(const PopulationEnergies& source,
                const PopulationEnergies& target, NceVariant variant,
                const NceParams& params) {
  require_nonempty("nce_loss (source population)", source.theta);
  require_nonempty("nce_loss (target population)", target.theta);
  Tensor r_t = nce_reward(target, variant, params);
  Tensor r_s = nce_reward(source, variant, params);
  // log(1 - sigma(r)) = log sigma(-r)
  return neg(add(mean(log_sigmoid(r_t)), mean(log_sigmoid(neg(r_s)))));
}

Tensor entropy_loss(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("entropy_loss: need [n x C]");
  require_nonempty("entropy_loss", logits);
  Tensor log_p = sub_col(logits, row_logsumexp(logits));
  Tensor p = exp(log_p);
  return neg(mean(row_sum(mul(p, log_p))));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 1; k < c; ++k)
      if (logits.at(i, k) > logits.at(i, out[i])) out[i] = k;
  return out;
}

PseudoLabelResult pseudo_label_loss(const Tensor& logits,
                                    double confidence_threshold) {
  if (!(confidence_threshold >= 0.0 && confidence_threshold < 1.0))
    throw std::invalid_argument("pseudo_label_loss: threshold must be in [0,1)");
  if (logits.rank() != 2) throw std::invalid_argument("pseudo_label_loss: need [n x C]");
  const auto probs = softmax_rows(logits);
  const auto labels = argmax_rows(logits);
  const std::size_t c = logits.cols();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (probs[i * c + labels[i]] >= confidence_threshold) keep.push_back(i);
  if (keep.empty()) return {Tensor::scalar(0.0), 0};

  Tensor log_p = sub_col(logits, row_logsumexp(logits));
  Tensor picked = gather(pick(log_p, labels), keep);
  return {neg(mean(picked)), keep.size()};
}

}  // namespace cretta

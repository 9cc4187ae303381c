#include "cretta/engine.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "cretta/checkpoint.hpp"
#include "json_io.hpp"

namespace cretta {

namespace {

constexpr int kEngineVersion = 1;

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

bool uses_source_batch(LossVariant v) {
  switch (v) {
    case LossVariant::cretta:
    case LossVariant::pairwise_non_residual:
    case LossVariant::nce_residual:
    case LossVariant::nce_non_residual:
      return true;
    default:
      return false;
  }
}

bool uses_phi_target(LossVariant v) {
  switch (v) {
    case LossVariant::cretta:
    case LossVariant::no_contrastive_sigma:
    case LossVariant::nce_residual:
    case LossVariant::nce_non_residual:
      return true;
    default:
      return false;
  }
}

bool uses_phi_source(LossVariant v) {
  return v == LossVariant::cretta || v == LossVariant::nce_residual ||
         v == LossVariant::nce_non_residual;
}

bool has_loss(LossVariant v) {
  return v != LossVariant::source && v != LossVariant::bn_only;
}

void check_finite(const Tensor& loss, LossVariant v, std::size_t batch) {
  const double value = loss.item();
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite " << to_string(v) << " loss (" << value << ") at batch "
       << batch;
    throw NonFiniteLoss(os.str());
  }
}

void check_finite_logits(const Tensor& logits, std::size_t batch) {
  for (double v : logits.data())
    if (!std::isfinite(v))
      throw NonFiniteLoss("non-finite logits at batch " + std::to_string(batch));
}

/// Per-batch predictions folded into the record: accuracy, confidence and
/// this batch's ECE bin sums.
void fill_prediction_stats(RunRecord& r, const Tensor& logits,
                           std::span<const int> labels, std::size_t bins,
                           double temperature) {
  const auto stats = confidence_stats(logits);
  const auto pred = argmax_rows(logits);
  const auto probs = softmax_rows(logits);
  const std::size_t c = logits.cols();
  EceAccumulator batch_bins(bins);
  r.correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool ok = static_cast<int>(pred[i]) == labels[i];
    r.correct += ok ? 1 : 0;
    batch_bins.add(probs[i * c + pred[i]], ok);
  }
  r.batch_size = labels.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(labels.size());
  r.mean_confidence = stats.mean_confidence;
  r.mean_entropy = stats.mean_entropy;
  r.ece_count = batch_bins.count();
  r.ece_confidence = batch_bins.confidence_sum();
  r.ece_correct = batch_bins.correct();
  r.mean_energy_target = mean_of(energy(logits, temperature).data());
}

}  // namespace

const char* to_string(WeightMode mode) {
  return mode == WeightMode::analytic ? "analytic" : "uniform_random";
}
const char* to_string(EvalOrder order) {
  return order == EvalOrder::predict_then_adapt ? "predict_then_adapt"
                                                : "adapt_then_predict";
}
const char* to_string(MaskPolicy policy) {
  return policy == MaskPolicy::bn_affine ? "bn_affine" : "all";
}

WeightMode parse_weight_mode(const std::string& text) {
  if (text == "analytic") return WeightMode::analytic;
  if (text == "uniform_random") return WeightMode::uniform_random;
  throw std::invalid_argument("unknown weight mode '" + text + "'");
}
EvalOrder parse_eval_order(const std::string& text) {
  if (text == "predict_then_adapt") return EvalOrder::predict_then_adapt;
  if (text == "adapt_then_predict") return EvalOrder::adapt_then_predict;
  throw std::invalid_argument("unknown eval order '" + text + "'");
}
MaskPolicy parse_mask_policy(const std::string& text) {
  if (text == "bn_affine") return MaskPolicy::bn_affine;
  if (text == "all") return MaskPolicy::all;
  throw std::invalid_argument("unknown mask policy '" + text + "'");
}

void AdaptConfig::validate() const {
  std::vector<std::string> errors;
  auto require = [&](bool ok, const char* message) {
    if (!ok) errors.emplace_back(message);
  };
  require(beta > 0.0 && std::isfinite(beta), "beta must be > 0");
  require(lr >= 0.0 && std::isfinite(lr), "lr must be >= 0");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(temperature > 0.0, "temperature must be > 0");
  require(pl_threshold >= 0.0 && pl_threshold < 1.0, "pl_threshold must be in [0, 1)");
  require(ece_bins >= 1, "ece_bins must be >= 1");
  require(weight_mode != WeightMode::uniform_random || loss == LossVariant::cretta,
          "uniform_random weights apply to the cretta loss only");
  require(pairing != PairingMode::cartesian || loss == LossVariant::cretta ||
              loss == LossVariant::pairwise_non_residual,
          "cartesian pairing applies to pairwise losses only");
  if (errors.empty()) return;
  std::string joined = errors.front();
  for (std::size_t i = 1; i < errors.size(); ++i) joined += "; " + errors[i];
  throw std::invalid_argument(joined);
}

CostCounters expected_cost_per_batch(const AdaptConfig& config, bool augmentation) {
  CostCounters c;
  const LossVariant v = config.loss;
  c.forward = 1;  // the prediction forward
  if (has_loss(v)) {
    c.backward = 1;
    c.updates = 1;
    if (uses_phi_target(v)) c.forward += 1;
    if (uses_source_batch(v)) c.forward += 1;
    if (augmentation && uses_phi_source(v)) c.forward += 1;
  }
  if (config.eval_order == EvalOrder::adapt_then_predict && has_loss(v)) c.forward += 1;
  return c;
}

double forward_flops(const Architecture& arch) {
  double flops = 0.0;
  std::size_t width = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    flops += 2.0 * static_cast<double>(width * h);  // affine
    flops += 8.0 * static_cast<double>(h);          // BN, affine BN, ReLU
    width = h;
  }
  flops += 2.0 * static_cast<double>(width * arch.num_classes);
  return flops;
}

double step_cost_units(const AdaptConfig& config) {
  const CostCounters c = expected_cost_per_batch(config);
  if (c.backward == 0) return static_cast<double>(c.forward);
  // Backward costs two forwards for every differentiated target forward.
  const double differentiated = uses_source_batch(config.loss) ? 2.0 : 1.0;
  return static_cast<double>(c.forward) + 2.0 * differentiated;
}

double sgld_step_cost_units(std::size_t sgld_steps) {
  // Each sampling step: forward plus input-gradient backward. The update:
  // forwards on real and sampled batches plus their backward.
  return 3.0 * static_cast<double>(sgld_steps) + 2.0 + 4.0;
}

Engine::Engine(const Classifier& source, SourceBuffer buffer, AdaptConfig config)
    : source_(source),
      target_(clone_as_target(source)),
      config_(config),
      buffer_(std::move(buffer)),
      rng_(mix_seed(config.seed, 0xE9)),
      ece_(config.ece_bins) {
  config_.validate();
  if (source.role() != Role::source)
    throw std::invalid_argument("Engine: first argument must be a source model");
  if (buffer_.size() == 0 && uses_source_batch(config_.loss))
    throw std::invalid_argument("Engine: empty source buffer");
  if (buffer_.size() > 0 && buffer_.samples.cols() != source.architecture().input_dim)
    throw std::invalid_argument("Engine: buffer width does not match the model");
  init_optimizer();
}

void Engine::init_optimizer() {
  const ParamMask mask = config_.mask == MaskPolicy::bn_affine
                             ? bn_affine_mask(target_)
                             : all_parameters_mask(target_);
  if (has_loss(config_.loss) && mask.count() == 0)
    throw std::invalid_argument("Engine: no adaptable parameters");
  target_.set_mask(mask);
  adam_.clear();
  for (std::size_t i = 0; i < target_.parameter_count(); ++i) {
    const std::size_t n = mask.adaptable[i] ? target_.parameter_values(i).size() : 0;
    adam_.emplace_back(n, config_.lr, config_.adam_beta1, config_.adam_beta2,
                       config_.adam_epsilon);
  }
}

void Engine::reset() {
  target_ = clone_as_target(source_);
  init_optimizer();
  buffer_.cursor = 0;
  batch_ = 0;
  ece_ = EceAccumulator(config_.ece_bins);
}

std::vector<double> Engine::cached_phi_energies(const SourceBatch& sb) {
  if (sb.augmented) {
    cost_.forward += 1;
    const Tensor e = energy(source_.forward(sb.inputs, config_.bn_mode), config_.temperature);
    return std::vector<double>(e.data().begin(), e.data().end());
  }
  auto it = phi_cache_.find(sb.start);
  if (it != phi_cache_.end() && it->second.size() == sb.indices.size()) return it->second;
  cost_.precompute_forward += 1;
  const Tensor e = energy(source_.forward(sb.inputs, config_.bn_mode), config_.temperature);
  std::vector<double> values(e.data().begin(), e.data().end());
  phi_cache_[sb.start] = values;
  return values;
}

RunRecord Engine::frozen_eval(const StreamBatch& batch) {
  RunRecord r;
  r.batch = batch_++;
  r.stage = batch.stage;
  r.frozen = true;
  r.substitutions = batch.substitutions;
  const Tensor logits = target_.forward(batch.inputs, BnMode::running_stats).detach();
  cost_.forward += 1;
  check_finite_logits(logits, r.batch);
  fill_prediction_stats(r, logits, batch.labels, config_.ece_bins, config_.temperature);
  // Reference evaluation only; not part of the adaptation cost.
  r.reference_accuracy =
      accuracy(source_.forward(batch.inputs, BnMode::running_stats), batch.labels);
  r.ece_running = ece_.value();
  r.cost = cost_;
  return r;
}

RunRecord Engine::step(const StreamBatch& batch) {
  if (batch.size() < 2) throw std::invalid_argument("Engine::step: batch needs >= 2 samples");
  if (batch.inputs.rows() != batch.size())
    throw std::invalid_argument("Engine::step: inputs/labels mismatch");
  if (batch.frozen) return frozen_eval(batch);

  const LossVariant v = config_.loss;
  const double beta = config_.beta, T = config_.temperature;
  RunRecord r;
  r.batch = batch_;
  r.stage = batch.stage;
  r.substitutions = batch.substitutions;

  if (v == LossVariant::source) {
    const Tensor logits = source_.forward(batch.inputs, BnMode::running_stats);
    cost_.forward += 1;
    check_finite_logits(logits, batch_);
    fill_prediction_stats(r, logits, batch.labels, config_.ece_bins, T);
  } else {
    const Tensor logits_t = target_.forward(batch.inputs, config_.bn_mode);
    cost_.forward += 1;
    check_finite_logits(logits_t, batch_);
    if (config_.eval_order == EvalOrder::predict_then_adapt || !has_loss(v))
      fill_prediction_stats(r, logits_t.detach(), batch.labels, config_.ece_bins, T);

    if (has_loss(v)) {
      const Tensor e_theta_t = energy(logits_t, T);
      Tensor loss;
      bool do_update = true;
      std::optional<PairBatch> pairs;

      Tensor e_phi_t;
      if (uses_phi_target(v)) {
        e_phi_t = energy(source_.forward(batch.inputs, config_.bn_mode), T).detach();
        cost_.forward += 1;
        r.mean_phi_energy_target = mean_of(e_phi_t.data());
      }
      SourceBatch sb;
      Tensor e_theta_s, e_phi_s;
      if (uses_source_batch(v)) {
        const std::size_t n_source =
            config_.pairing == PairingMode::aligned ? batch.size() : config_.batch_size;
        sb = next_source_batch(buffer_, n_source, &rng_);
        e_theta_s = energy(target_.forward(sb.inputs, config_.bn_mode), T);
        cost_.forward += 1;
        r.mean_energy_source = mean_of(e_theta_s.data());
        if (uses_phi_source(v)) e_phi_s = Tensor::vector(cached_phi_energies(sb));
      }

      switch (v) {
        case LossVariant::entropy_tent:
          loss = entropy_loss(logits_t);
          break;
        case LossVariant::pseudo_label: {
          auto pl = pseudo_label_loss(logits_t, config_.pl_threshold);
          loss = pl.loss;
          r.retained = pl.retained;
          do_update = pl.retained > 0;
          break;
        }
        case LossVariant::no_contrastive:
          loss = no_contrastive_loss(e_theta_t);
          break;
        case LossVariant::no_contrastive_sigma:
          loss = no_contrastive_sigma_loss(e_phi_t, e_theta_t, beta);
          break;
        case LossVariant::pairwise_non_residual: {
          const auto idx = make_pairs(batch.size(), sb.indices.size(), config_.pairing);
          std::vector<std::size_t> ti, si;
          for (const auto& p : idx) {
            ti.push_back(p.target);
            si.push_back(p.source);
          }
          loss = pairwise_non_residual_loss(gather(e_theta_s, si), gather(e_theta_t, ti));
          break;
        }
        case LossVariant::cretta: {
          pairs = make_pair_batch(sb.inputs, batch.inputs, e_phi_s, e_phi_t, e_theta_s,
                                  e_theta_t, beta,
                                  make_pairs(batch.size(), sb.indices.size(), config_.pairing));
          loss = cretta_loss(*pairs);
          r.mean_weight = mean_of(gradient_weights(*pairs));
          break;
        }
        case LossVariant::nce_residual:
        case LossVariant::nce_non_residual: {
          const NceVariant nv = v == LossVariant::nce_residual ? NceVariant::residual
                                                               : NceVariant::non_residual;
          loss = nce_loss({e_theta_s, e_phi_s}, {e_theta_t, e_phi_t}, nv,
                          {beta, config_.nce_constant});
          break;
        }
        default:
          break;
      }
      check_finite(loss, v, batch_);
      r.loss = loss.item();

      if (do_update) {
        auto params = target_.parameters();
        for (auto& p : params) p.tensor.zero_grad();
        const bool check = pairs && config_.weight_mode == WeightMode::analytic &&
                           config_.grad_check_interval > 0 &&
                           batch_ % config_.grad_check_interval == 0;
        if (pairs && config_.weight_mode == WeightMode::uniform_random) {
          std::vector<double> w(pairs->size());
          for (double& x : w) x = sampler_ ? sampler_() : rng_.uniform();
          auto [seed_s, seed_t] = cretta_energy_seeds(*pairs, w);
          const Tensor outs[] = {pairs->e_theta_s, pairs->e_theta_t};
          const std::vector<double> seeds[] = {seed_s, seed_t};
          backward_from(outs, seeds);
        } else {
          std::vector<std::vector<double>> assembled;
          if (check) {
            auto [seed_s, seed_t] = cretta_energy_seeds(*pairs, gradient_weights(*pairs));
            const Tensor outs[] = {pairs->e_theta_s, pairs->e_theta_t};
            const std::vector<double> seeds[] = {seed_s, seed_t};
            backward_from(outs, seeds);
            for (auto& p : params) {
              auto g = p.tensor.grad();
              assembled.emplace_back(g.begin(), g.end());
              p.tensor.zero_grad();
            }
          }
          loss.backward();
          if (check) {
            double worst = 0.0;
            for (std::size_t i = 0; i < params.size(); ++i) {
              auto g = params[i].tensor.grad();
              for (std::size_t k = 0; k < assembled[i].size() && k < g.size(); ++k)
                worst = std::max(worst, std::abs(g[k] - assembled[i][k]));
            }
            r.grad_check = worst;
          }
        }
        cost_.backward += 1;
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& p = params[i].tensor;
          if (!p.requires_grad() || !p.has_grad()) continue;
          adam_step(adam_[i], p.mutable_data(), p.grad());
        }
        cost_.updates += 1;
      }

      if (config_.eval_order == EvalOrder::adapt_then_predict) {
        const Tensor after = target_.forward(batch.inputs, config_.bn_mode).detach();
        cost_.forward += 1;
        fill_prediction_stats(r, after, batch.labels, config_.ece_bins, T);
      }
    }
  }

  ece_.add_bins(r.ece_count, r.ece_confidence, r.ece_correct);
  r.ece_running = ece_.value();
  r.cost = cost_;
  ++batch_;
  return r;
}

std::vector<RunRecord> run_episode(Engine& engine,
                                   std::span<const StreamBatch> batches) {
  std::vector<RunRecord> out;
  out.reserve(batches.size());
  for (const auto& b : batches) out.push_back(engine.step(b));
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot / restore

namespace io {

json adapt_config_to_json(const AdaptConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"beta", c.beta},
          {"lr", c.lr},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},
          {"mask", to_string(c.mask)},
          {"bn_mode", to_string(c.bn_mode)},
          {"weight_mode", to_string(c.weight_mode)},
          {"pairing", to_string(c.pairing)},
          {"eval_order", to_string(c.eval_order)},
          {"temperature", c.temperature},
          {"pl_threshold", c.pl_threshold},
          {"nce_constant", c.nce_constant},
          {"grad_check_interval", c.grad_check_interval},
          {"ece_bins", c.ece_bins},
          {"seed", c.seed}};
}

void adapt_config_from_json(const json& j, AdaptConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "loss") c.loss = parse_loss_variant(value.get<std::string>());
    else if (key == "beta") c.beta = value.get<double>();
    else if (key == "lr") c.lr = value.get<double>();
    else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
    else if (key == "adam_epsilon") c.adam_epsilon = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "mask") c.mask = parse_mask_policy(value.get<std::string>());
    else if (key == "bn_mode") c.bn_mode = parse_bn_mode(value.get<std::string>());
    else if (key == "weight_mode") c.weight_mode = parse_weight_mode(value.get<std::string>());
    else if (key == "pairing") c.pairing = parse_pairing_mode(value.get<std::string>());
    else if (key == "eval_order") c.eval_order = parse_eval_order(value.get<std::string>());
    else if (key == "temperature") c.temperature = value.get<double>();
    else if (key == "pl_threshold") c.pl_threshold = value.get<double>();
    else if (key == "nce_constant") c.nce_constant = value.get<double>();
    else if (key == "grad_check_interval") c.grad_check_interval = value.get<std::size_t>();
    else if (key == "ece_bins") c.ece_bins = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("adapt: unknown key '" + key + "'");
  }
}

json augmentation_to_json(const AugmentationSpec& a) {
  return {{"probability", a.probability},
          {"max_rotation_deg", a.max_rotation_deg},
          {"jitter_sd", a.jitter_sd}};
}

void augmentation_from_json(const json& j, AugmentationSpec& a) {
  for (const auto& [key, value] : j.items()) {
    if (key == "probability") a.probability = value.get<double>();
    else if (key == "max_rotation_deg") a.max_rotation_deg = value.get<double>();
    else if (key == "jitter_sd") a.jitter_sd = value.get<double>();
    else throw std::invalid_argument("augmentation: unknown key '" + key + "'");
  }
  if (!(a.probability >= 0.0 && a.probability <= 1.0))
    throw std::invalid_argument("augmentation.probability must be in [0, 1]");
}

}  // namespace io

std::string Engine::snapshot() const {
  using io::json;
  json adam = json::array();
  for (const auto& a : adam_) adam.push_back(io::adam_to_json(a));
  json cache = json::array();
  for (const auto& [start, values] : phi_cache_)
    cache.push_back({{"start", start}, {"energies", values}});
  auto samples = buffer_.samples.data();
  json j = {
      {"version", kEngineVersion},
      {"kind", "engine"},
      {"config", io::adapt_config_to_json(config_)},
      {"source", io::model_to_json(source_)},
      {"target", io::model_to_json(target_)},
      {"adam", adam},
      {"buffer",
       {{"rows", buffer_.samples.rows()},
        {"cols", buffer_.samples.cols()},
        {"samples", std::vector<double>(samples.begin(), samples.end())},
        {"labels", buffer_.labels},
        {"cursor", buffer_.cursor},
        {"augmentation", io::augmentation_to_json(buffer_.augmentation)},
        {"origin", to_string(buffer_.origin)}}},
      {"rng", rng_.state()},
      {"cost",
       {{"forward", cost_.forward},
        {"backward", cost_.backward},
        {"updates", cost_.updates},
        {"precompute_forward", cost_.precompute_forward}}},
      {"batch", batch_},
      {"ece",
       {{"count", ece_.count()},
        {"confidence", ece_.confidence_sum()},
        {"correct", ece_.correct()}}},
      {"phi_cache", cache}};
  return j.dump();
}

Engine Engine::restore(const std::string& text) {
  using io::json;
  try {
    const json j = json::parse(text);
    if (j.at("kind").get<std::string>() != "engine")
      throw CheckpointError("not an engine snapshot");
    if (j.at("version").get<int>() != kEngineVersion)
      throw CheckpointError("engine snapshot version " + j.at("version").dump() +
                            " is not supported (expected " +
                            std::to_string(kEngineVersion) + ")");
    AdaptConfig config;
    io::adapt_config_from_json(j.at("config"), config);
    config.validate();

    Engine e;
    e.config_ = config;
    e.source_ = io::model_from_json(j.at("source"));
    e.target_ = io::model_from_json(j.at("target"));
    if (e.source_.role() != Role::source || e.target_.role() != Role::target)
      throw CheckpointError("engine snapshot has inconsistent model roles");
    e.init_optimizer();
    const auto& adam = j.at("adam");
    if (adam.size() != e.adam_.size()) throw CheckpointError("optimizer state size mismatch");
    for (std::size_t i = 0; i < e.adam_.size(); ++i) {
      AdamState s = io::adam_from_json(adam[i]);
      if (s.m.size() != e.adam_[i].m.size())
        throw CheckpointError("optimizer state does not match the parameter mask");
      e.adam_[i] = std::move(s);
    }

    const auto& b = j.at("buffer");
    const auto rows = b.at("rows").get<std::size_t>();
    const auto cols = b.at("cols").get<std::size_t>();
    auto samples = b.at("samples").get<std::vector<double>>();
    if (samples.size() != rows * cols) throw CheckpointError("buffer size mismatch");
    e.buffer_.samples = Tensor::from({rows, cols}, std::move(samples));
    e.buffer_.labels = b.at("labels").get<std::vector<int>>();
    if (e.buffer_.labels.size() != rows) throw CheckpointError("buffer label count mismatch");
    e.buffer_.cursor = b.at("cursor").get<std::size_t>();
    if (rows > 0 && e.buffer_.cursor >= rows) throw CheckpointError("buffer cursor out of range");
    io::augmentation_from_json(b.at("augmentation"), e.buffer_.augmentation);
    e.buffer_.origin = parse_buffer_origin(b.at("origin").get<std::string>());

    e.rng_.set_state(j.at("rng").get<std::string>());
    const auto& c = j.at("cost");
    e.cost_.forward = c.at("forward").get<std::uint64_t>();
    e.cost_.backward = c.at("backward").get<std::uint64_t>();
    e.cost_.updates = c.at("updates").get<std::uint64_t>();
    e.cost_.precompute_forward = c.at("precompute_forward").get<std::uint64_t>();
    e.batch_ = j.at("batch").get<std::size_t>();
    e.ece_ = EceAccumulator(config.ece_bins);
    const auto& ece = j.at("ece");
    e.ece_.add_bins(ece.at("count").get<std::vector<std::uint64_t>>(),
                    ece.at("confidence").get<std::vector<double>>(),
                    ece.at("correct").get<std::vector<std::uint64_t>>());
    for (const auto& entry : j.at("phi_cache"))
      e.phi_cache_[entry.at("start").get<std::size_t>()] =
          entry.at("energies").get<std::vector<double>>();
    return e;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& ex) {
    throw CheckpointError(std::string("invalid engine snapshot: ") + ex.what());
  }
}

}  // namespace cretta

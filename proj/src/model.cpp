#include "cretta/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cretta/numerics.hpp"

namespace cretta {

const char* to_string(Role role) {
  return role == Role::source ? "source" : "target";
}

const char* to_string(BnMode mode) {
  return mode == BnMode::batch_stats ? "batch_stats" : "running_stats";
}

BnMode parse_bn_mode(const std::string& text) {
  if (text == "batch_stats") return BnMode::batch_stats;
  if (text == "running_stats") return BnMode::running_stats;
  throw std::invalid_argument("unknown bn_mode '" + text + "'");
}

std::size_t ParamMask::count() const {
  std::size_t n = 0;
  for (bool b : adaptable) n += b ? 1 : 0;
  return n;
}

ParamMask bn_affine_mask(const Classifier& model) {
  ParamMask mask;
  for (const auto& name : model.parameter_names())
    mask.adaptable.push_back(name.find(".bn.") != std::string::npos);
  return mask;
}

ParamMask all_parameters_mask(const Classifier& model) {
  return ParamMask{std::vector<bool>(model.parameter_count(), true)};
}

Classifier Classifier::initialize(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.num_classes < 2)
    throw std::invalid_argument("Architecture: need input_dim >= 1 and >= 2 classes");
  Classifier model;
  model.arch_ = arch;
  model.seed_ = seed;
  model.role_ = Role::target;
  Rng rng(mix_seed(seed, 0xC1A551F1ULL));

  auto affine = [&](std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out), b(out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    for (double& v : b) v = rng.uniform(-bound, bound);
    model.params_.push_back(Tensor::from({in, out}, std::move(w)));
    model.params_.push_back(Tensor::vector(std::move(b)));
  };

  std::size_t width = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    affine(width, h);
    model.params_.push_back(Tensor::full({h}, 1.0));
    model.params_.push_back(Tensor::zeros({h}));
    model.bn_stats_.push_back(
        {std::vector<double>(h, 0.0), std::vector<double>(h, 1.0)});
    width = h;
  }
  affine(width, arch.num_classes);
  model.build_names();
  return model;
}

Classifier Classifier::from_parts(Architecture arch, Role role,
                                  std::uint64_t seed,
                                  std::vector<std::vector<double>> values,
                                  std::vector<BatchNormStats> stats) {
  Classifier shape_ref = initialize(arch, seed);
  if (values.size() != shape_ref.params_.size() ||
      stats.size() != shape_ref.bn_stats_.size())
    throw std::invalid_argument("Classifier::from_parts: layout mismatch");
  Classifier model;
  model.arch_ = std::move(arch);
  model.role_ = role;
  model.seed_ = seed;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != shape_ref.params_[i].size())
      throw std::invalid_argument("Classifier::from_parts: parameter " +
                                  shape_ref.names_[i] + " has wrong size");
    model.params_.push_back(
        Tensor::from(shape_ref.params_[i].shape(), std::move(values[i])));
  }
  for (std::size_t l = 0; l < stats.size(); ++l) {
    const auto h = shape_ref.bn_stats_[l].running_mean.size();
    if (stats[l].running_mean.size() != h || stats[l].running_var.size() != h)
      throw std::invalid_argument("Classifier::from_parts: BN stats size");
    for (double v : stats[l].running_var)
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument("Classifier::from_parts: running_var <= 0");
  }
  model.bn_stats_ = std::move(stats);
  model.build_names();
  return model;
}

void Classifier::build_names() {
  names_.clear();
  for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    names_.push_back(p + ".weight");
    names_.push_back(p + ".bias");
    names_.push_back(p + ".bn.gamma");
    names_.push_back(p + ".bn.beta");
  }
  names_.push_back("head.weight");
  names_.push_back("head.bias");
}

Classifier::Classifier(const Classifier& other)
    : arch_(other.arch_),
      role_(other.role_),
      seed_(other.seed_),
      names_(other.names_),
      bn_stats_(other.bn_stats_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(p.clone());
}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) {
    Classifier copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::span<const double> Classifier::parameter_values(std::size_t index) const {
  return params_.at(index).data();
}

const Shape& Classifier::parameter_shape(std::size_t index) const {
  return params_.at(index).shape();
}

std::size_t Classifier::parameter_index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw std::out_of_range("no parameter named '" + name + "'");
}

void Classifier::require_mutable(const char* what) const {
  if (role_ == Role::source)
    throw std::logic_error(std::string(what) + ": source model is immutable");
}

std::vector<NamedTensor> Classifier::parameters() {
  require_mutable("Classifier::parameters");
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.push_back({names_[i], params_[i]});
  return out;
}

void Classifier::set_mask(const ParamMask& mask) {
  require_mutable("Classifier::set_mask");
  if (mask.adaptable.size() != params_.size())
    throw std::invalid_argument("ParamMask size does not match parameters");
  for (std::size_t i = 0; i < params_.size(); ++i)
    params_[i].set_requires_grad(mask.adaptable[i]);
}

ParamMask Classifier::mask() const {
  ParamMask m;
  for (const auto& p : params_) m.adaptable.push_back(p.requires_grad());
  return m;
}

Tensor Classifier::forward(const Tensor& x, BnMode mode) const {
  return run(x, mode, nullptr);
}

Tensor Classifier::forward_train(const Tensor& x) {
  require_mutable("Classifier::forward_train");
  return run(x, BnMode::batch_stats, &bn_stats_);
}

Tensor Classifier::run(const Tensor& x, BnMode mode,
                       std::vector<BatchNormStats>* update_stats) const {
  if (x.rank() != 2 || x.cols() != arch_.input_dim)
    throw std::invalid_argument("forward: expected input of width " +
                                std::to_string(arch_.input_dim));
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("forward: empty batch");
  if (mode == BnMode::batch_stats && n < 2)
    throw std::invalid_argument(
        "forward: batch statistics need at least 2 samples");

  Tensor h = x;
  std::size_t p = 0;
  for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
    const Tensor& w = params_[p++];
    const Tensor& b = params_[p++];
    const Tensor& gamma = params_[p++];
    const Tensor& beta = params_[p++];
    Tensor z = add_row(matmul(h, w), b);
    Tensor normalized;
    if (mode == BnMode::batch_stats) {
      Tensor mu = mean_rows(z);
      Tensor centered = sub_row(z, mu);
      Tensor var = mean_rows(square(centered));
      normalized = mul_row(centered, rsqrt(add_scalar(var, arch_.bn_epsilon)));
      if (update_stats) {
        auto& st = (*update_stats)[l];
        const double m = arch_.bn_momentum;
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < st.running_mean.size(); ++j) {
          st.running_mean[j] = (1.0 - m) * st.running_mean[j] + m * mu.at(j);
          st.running_var[j] =
              (1.0 - m) * st.running_var[j] + m * var.at(j) * unbias;
        }
      }
    } else {
      const auto& st = bn_stats_[l];
      std::vector<double> inv(st.running_var.size());
      for (std::size_t j = 0; j < inv.size(); ++j)
        inv[j] = 1.0 / std::sqrt(st.running_var[j] + arch_.bn_epsilon);
      normalized = mul_row(sub_row(z, Tensor::vector(st.running_mean)),
                           Tensor::vector(std::move(inv)));
    }
    h = relu(add_row(mul_row(normalized, gamma), beta));
  }
  const Tensor& w = params_[p++];
  const Tensor& b = params_[p++];
  return add_row(matmul(h, w), b);
}

std::uint64_t Classifier::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto feed = [&hash](std::span<const double> values) {
    for (double v : values) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
      }
    }
  };
  for (const auto& p : params_) feed(p.data());
  for (const auto& st : bn_stats_) {
    feed(st.running_mean);
    feed(st.running_var);
  }
  return hash;
}

bool Classifier::operator==(const Classifier& other) const {
  if (arch_ != other.arch_ || role_ != other.role_ || seed_ != other.seed_ ||
      bn_stats_ != other.bn_stats_ || params_.size() != other.params_.size())
    return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto a = params_[i].data();
    auto b = other.params_[i].data();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return false;
  }
  return true;
}

Classifier clone_as_target(const Classifier& source) {
  if (source.role_ != Role::source)
    throw std::invalid_argument("clone_as_target: model is not a source model");
  Classifier copy(source);
  copy.role_ = Role::target;
  return copy;
}

Classifier freeze_as_source(Classifier model) {
  for (auto& p : model.params_) p.set_requires_grad(false);
  model.role_ = Role::source;
  return model;
}

// ---------------------------------------------------------------------------

Tensor energy(const Tensor& logits, double temperature) {
  if (logits.rank() != 2 || logits.cols() < 2)
    throw std::invalid_argument("energy: need an [n x C] logit matrix, C >= 2");
  for (double v : logits.data())
    if (!std::isfinite(v)) throw std::invalid_argument("energy: non-finite logit");
  return neg(row_logsumexp(logits, temperature));
}

std::vector<double> energy_logit_grad(std::span<const double> logits,
                                      double temperature) {
  if (logits.size() < 2)
    throw std::invalid_argument("energy_logit_grad: need >= 2 logits");
  const double lse = log_sum_exp(logits, temperature);
  std::vector<double> g(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k)
    g[k] = -std::exp((logits[k] - lse) / temperature);
  return g;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<double> p(n * c);
  auto v = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = log_sum_exp(v.subspan(i * c, c));
    for (std::size_t k = 0; k < c; ++k) p[i * c + k] = std::exp(v[i * c + k] - lse);
  }
  return p;
}

Classifier pretrain_source(const Architecture& arch, const Tensor& inputs,
                           std::span<const int> labels,
                           const PretrainConfig& config, std::uint64_t seed) {
  if (inputs.rows() != labels.size() || labels.empty())
    throw std::invalid_argument("pretrain_source: inputs/labels mismatch");
  Classifier model = Classifier::initialize(arch, seed);
  model.set_mask(all_parameters_mask(model));
  auto params = model.parameters();
  std::vector<AdamState> opt;
  for (const auto& p : params) opt.emplace_back(p.tensor.size(), config.lr);

  Rng rng(mix_seed(seed, 0x9E7A1ULL));
  const std::size_t n = inputs.rows();
  std::vector<std::size_t> cls(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    cls[i] = static_cast<std::size_t>(labels[i]);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = rng.permutation(n);
    for (std::size_t start = 0; start + 2 <= n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      if (end - start < 2) break;
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      std::vector<std::size_t> target(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) target[i] = cls[idx[i]];

      Tensor logits = model.forward_train(gather_rows(inputs, idx));
      Tensor log_probs = sub_col(logits, row_logsumexp(logits));
      Tensor loss = neg(mean(pick(log_probs, target)));
      for (auto& p : params) p.tensor.zero_grad();
      loss.backward();
      for (std::size_t k = 0; k < params.size(); ++k)
        adam_step(opt[k], params[k].tensor.mutable_data(), params[k].tensor.grad());
    }
  }
  return freeze_as_source(std::move(model));
}

}  // namespace cretta

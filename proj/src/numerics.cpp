#include "cretta/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cretta {

double log_sum_exp(std::span<const double> values, double temperature) {
  if (values.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("log_sum_exp: temperature must be > 0");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (!std::isfinite(v))
      throw std::invalid_argument("log_sum_exp: non-finite input");
    hi = std::max(hi, v);
  }
  double acc = 0.0;
  for (double v : values) acc += std::exp((v - hi) / temperature);
  return hi + temperature * std::log(acc);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double log_sigmoid(double x) { return -softplus(-x); }

std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference: step <= 0");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

void adam_step(AdamState& s, std::span<double> params,
               std::span<const double> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() ||
      s.v.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  s.step_count += 1;
  const double t = static_cast<double>(s.step_count);
  const double bc1 = 1.0 - std::pow(s.beta1, t);
  const double bc2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    params[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n == 0");
  const std::uint64_t bound = n;
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  // Box-Muller, one output per call; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::log_gamma_draw(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma shape must be > 0");
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a), kept in log space.
    const double u = 1.0 - uniform();
    return log_gamma_draw(shape + 1.0) + std::log(u) / shape;
  }
  // Marsaglia-Tsang
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
      return std::log(d * v);
  }
}

std::vector<double> Rng::dirichlet(std::span<const double> alpha) {
  std::vector<double> logs(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i)
    logs[i] = log_gamma_draw(alpha[i]);
  const double hi = *std::max_element(logs.begin(), logs.end());
  double total = 0.0;
  for (double& l : logs) {
    l = std::exp(l - hi);
    total += l;
  }
  for (double& l : logs) l /= total;
  return logs;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  shuffle(p);
  return p;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 restored;
  is >> restored;
  if (is.fail()) throw std::invalid_argument("Rng::set_state: malformed state");
  engine_ = restored;
}

}  // namespace cretta

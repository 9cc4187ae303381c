#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cretta {

/// T * log(sum_k exp(values[k] / T)) with max subtraction.
/// Throws std::invalid_argument on empty input, non-finite values or T <= 0.
double log_sum_exp(std::span<const double> values, double temperature = 1.0);

double sigmoid(double x);
/// -softplus(-x); finite for every finite x.
double log_sigmoid(double x);
double softplus(double x);

/// Central-difference gradient of f at params.
std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double step = 1e-5);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t size, double lr_, double beta1_ = 0.9,
            double beta2_ = 0.999, double epsilon_ = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), epsilon(epsilon_),
        m(size, 0.0), v(size, 0.0) {}
};

/// Bias-corrected Adam update applied in place.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads);

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator whose distributions are implemented here (not via
/// <random> distributions) so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased.
  std::size_t index(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// log of a Gamma(shape, 1) draw; stays finite for tiny shapes.
  double log_gamma_draw(double shape);
  std::vector<double> dirichlet(std::span<const double> alpha);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  std::vector<std::size_t> permutation(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace cretta

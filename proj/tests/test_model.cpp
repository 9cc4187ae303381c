#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cretta/checkpoint.hpp"
#include "cretta/model.hpp"
#include "cretta/numerics.hpp"

using namespace cretta;

namespace {

Architecture small_arch() {
  Architecture a;
  a.input_dim = 2;
  a.hidden = {4};
  a.num_classes = 2;
  return a;
}

Tensor golden_input() { return Tensor::from({4, 2}, {0.5, -1.0, 1.5, 0.25, -0.75, 2.0, 0.0, 0.1}); }

Tensor random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal();
  return Tensor::from({n, d}, std::move(v));
}

Classifier trained_source(std::uint64_t seed = 3) {
  Architecture a;
  a.input_dim = 3;
  a.hidden = {8, 8};
  a.num_classes = 3;
  Rng rng(seed);
  std::vector<double> x(300 * 3);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    y[i] = static_cast<int>(i % 3);
    for (std::size_t k = 0; k < 3; ++k) x[i * 3 + k] = rng.normal() + (k == static_cast<std::size_t>(y[i]) ? 2.0 : 0.0);
  }
  PretrainConfig pc;
  pc.epochs = 3;
  pc.batch_size = 50;
  return pretrain_source(a, Tensor::from({300, 3}, x), y, pc, seed);
}

// Independent forward pass from raw parameter values.
std::vector<double> manual_forward(const Classifier& m, const Tensor& x, BnMode mode) {
  const auto& a = m.architecture();
  const std::size_t n = x.rows();
  std::vector<double> h(x.data().begin(), x.data().end());
  std::size_t width = a.input_dim, p = 0;
  for (std::size_t layer = 0; layer < a.hidden.size(); ++layer) {
    const std::size_t out = a.hidden[layer];
    auto w = m.parameter_values(p), b = m.parameter_values(p + 1);
    auto gamma = m.parameter_values(p + 2), beta = m.parameter_values(p + 3);
    p += 4;
    std::vector<double> z(n * out, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double s = b[j];
        for (std::size_t k = 0; k < width; ++k) s += h[i * width + k] * w[k * out + j];
        z[i * out + j] = s;
      }
    for (std::size_t j = 0; j < out; ++j) {
      double mu, var;
      if (mode == BnMode::batch_stats) {
        mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += z[i * out + j];
        mu /= static_cast<double>(n);
        var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (z[i * out + j] - mu) * (z[i * out + j] - mu);
        var /= static_cast<double>(n);
      } else {
        mu = m.bn_stats()[layer].running_mean[j];
        var = m.bn_stats()[layer].running_var[j];
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double v = gamma[j] * (z[i * out + j] - mu) / std::sqrt(var + a.bn_epsilon) + beta[j];
        z[i * out + j] = std::max(0.0, v);
      }
    }
    h = std::move(z);
    width = out;
  }
  auto w = m.parameter_values(p), b = m.parameter_values(p + 1);
  std::vector<double> logits(n * a.num_classes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < a.num_classes; ++c) {
      double s = b[c];
      for (std::size_t k = 0; k < width; ++k) s += h[i * width + k] * w[k * a.num_classes + c];
      logits[i * a.num_classes + c] = s;
    }
  return logits;
}

Classifier with_values(const Classifier& m, std::size_t index, std::vector<double> values) {
  std::vector<std::vector<double>> all;
  for (std::size_t i = 0; i < m.parameter_count(); ++i) {
    auto v = m.parameter_values(i);
    all.emplace_back(v.begin(), v.end());
  }
  all[index] = std::move(values);
  return Classifier::from_parts(m.architecture(), m.role(), m.seed(), all, m.bn_stats());
}

}  // namespace

TEST(Forward, MatchesIndependentImplementation) {
  const Classifier src = trained_source();
  const Tensor x = random_batch(7, 3, 42);
  for (auto mode : {BnMode::batch_stats, BnMode::running_stats}) {
    const auto expect = manual_forward(src, x, mode);
    const Tensor got = src.forward(x, mode);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got.at(i), expect[i], 1e-12);
  }
}

TEST(Forward, GoldenLogits) {
  const Classifier m = Classifier::initialize(small_arch(), 1234);
  const std::vector<double> batch{-0.8730249325020909,  -0.66457906352125307, -1.3997884411731061,
                                  -0.79146652040847021, -0.67448039217725053, -0.19681000932454612,
                                  -0.47527245358691078, -0.095087188866328248};
  const std::vector<double> running{-0.63596796215670437, -0.22559858425050594,
                                    -0.63887429892473491, -0.14316987608030884,
                                    -0.48084479140040381, 0.00063393575143610992,
                                    -0.48084479140040381, 0.00063393575143610992};
  const Tensor lb = m.forward(golden_input(), BnMode::batch_stats);
  const Tensor lr = m.forward(golden_input(), BnMode::running_stats);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(lb.at(i), batch[i], 1e-12);
    EXPECT_NEAR(lr.at(i), running[i], 1e-12);
  }
}

TEST(Forward, ParameterGradientsMatchFiniteDifferences) {
  Classifier m = clone_as_target(trained_source());
  m.set_mask(all_parameters_mask(m));
  const Tensor x = random_batch(6, 3, 5);
  auto params = m.parameters();
  sum(energy(m.forward(x, BnMode::batch_stats))).backward();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto base = m.parameter_values(pi);
    const std::vector<double> at(base.begin(), base.end());
    const auto fd = finite_difference(
        [&](std::span<const double> q) {
          const Classifier moved = with_values(m, pi, {q.begin(), q.end()});
          return sum(energy(moved.forward(x, BnMode::batch_stats))).item();
        },
        at, 1e-5);
    for (std::size_t k = 0; k < fd.size(); ++k)
      EXPECT_LT(std::abs(params[pi].tensor.grad()[k] - fd[k]) / std::max(1.0, std::abs(fd[k])), 1e-5)
          << m.parameter_names()[pi] << "[" << k << "]";
  }
}

TEST(Forward, ZeroHeadGivesBias) {
  const Classifier m = Classifier::initialize(small_arch(), 9);
  const std::size_t hw = m.parameter_index("head.weight"), hb = m.parameter_index("head.bias");
  Classifier z = with_values(m, hw, std::vector<double>(m.parameter_values(hw).size(), 0.0));
  z = with_values(z, hb, {0.3, -1.7});
  const Tensor l = z.forward(golden_input(), BnMode::batch_stats);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(l.at(i, 0), 0.3);
    EXPECT_EQ(l.at(i, 1), -1.7);
  }
}

TEST(Forward, DuplicatedRowsUnchangedUnderBatchStats) {
  const Classifier m = trained_source();
  const Tensor x = random_batch(5, 3, 77);
  std::vector<double> dup(x.data().begin(), x.data().end());
  dup.insert(dup.end(), x.data().begin(), x.data().end());
  const Tensor a = m.forward(x, BnMode::batch_stats);
  const Tensor b = m.forward(Tensor::from({10, 3}, dup), BnMode::batch_stats);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b.at(i), a.at(i), 1e-12);
    EXPECT_NEAR(b.at(i + a.size()), a.at(i), 1e-12);
  }
}

TEST(Forward, Errors) {
  const Classifier m = trained_source();
  EXPECT_THROW(m.forward(random_batch(1, 3, 1), BnMode::batch_stats), std::invalid_argument);
  EXPECT_NO_THROW(m.forward(random_batch(1, 3, 1), BnMode::running_stats));
  EXPECT_THROW(m.forward(random_batch(4, 2, 1), BnMode::batch_stats), std::invalid_argument);
}

TEST(Forward, BatchStatsNormalizeHiddenPreActivations) {
  // Identity head, unit gamma and a large beta that keeps the ReLU linear.
  Architecture a;
  a.input_dim = 3;
  a.hidden = {3};
  a.num_classes = 3;
  a.bn_epsilon = 1e-14;
  Classifier m = Classifier::initialize(a, 17);
  const std::size_t hw = m.parameter_index("head.weight");
  m = with_values(m, hw, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  m = with_values(m, m.parameter_index("head.bias"), {0.0, 0.0, 0.0});
  m = with_values(m, m.parameter_index("layer0.bn.gamma"), {1.0, 1.0, 1.0});
  m = with_values(m, m.parameter_index("layer0.bn.beta"), {50.0, 50.0, 50.0});  // keep ReLU linear
  const Tensor l = m.forward(random_batch(64, 3, 8), BnMode::batch_stats);
  for (std::size_t j = 0; j < 3; ++j) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 64; ++i) mu += l.at(i, j) - 50.0;
    mu /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += std::pow(l.at(i, j) - 50.0 - mu, 2);
    var /= 64;
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Energy, Examples) {
  const Tensor zeros = Tensor::zeros({3, 4});
  const Tensor e = energy(zeros);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(e.at(i), -std::log(4.0), 1e-15);

  const Tensor l = Tensor::from({1, 2}, {1.0, 2.0});
  EXPECT_NEAR(energy(l).at(0), -(2.0 + std::log1p(std::exp(-1.0))), 1e-15);

  Rng rng(4);
  std::vector<double> v(10);
  for (double& x : v) x = rng.normal(0, 3);
  const Tensor base = Tensor::from({5, 2}, v);
  std::vector<double> shifted = v;
  for (double& x : shifted) x += 2.5;
  const Tensor es = energy(Tensor::from({5, 2}, shifted)), eb = energy(base);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(es.at(i), eb.at(i) - 2.5, 1e-12);
}

TEST(Energy, RejectsNonFinite) {
  const Tensor l = Tensor::from({1, 2}, {1.0, std::nan("")});
  EXPECT_THROW(energy(l), std::invalid_argument);
}

TEST(EnergyLogitGrad, Examples) {
  const std::vector<double> uniform{0.3, 0.3, 0.3, 0.3};
  for (double g : energy_logit_grad(uniform)) EXPECT_NEAR(g, -0.25, 1e-16);
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(2 + rng.index(6));
    for (double& x : v) x = rng.normal(0, 5);
    double s = 0;
    for (double g : energy_logit_grad(v)) s += g;
    EXPECT_NEAR(s, -1.0, 1e-14);
  }
}

TEST(EnergyLogitGrad, MatchesAutodiff) {
  Rng rng(31);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = 2 + rng.index(9);
    std::vector<double> v(c);
    for (double& x : v) x = rng.normal(0, 4);
    const double temp = t % 2 ? 1.0 : rng.uniform(0.3, 3.0);
    Tensor logits = Tensor::from({1, c}, v, true);
    sum(energy(logits, temp)).backward();
    const auto g = energy_logit_grad(v, temp);
    for (std::size_t k = 0; k < c; ++k) ASSERT_NEAR(logits.grad()[k], g[k], 1e-10);
  }
}

TEST(Energy, FinalBiasShiftCovariance) {
  const Classifier src = trained_source();
  const Tensor x = random_batch(20, 3, 6);
  const std::size_t hb = src.parameter_index("head.bias");
  auto b = src.parameter_values(hb);
  for (double c : {-10.0, -0.1, 0.1, 10.0}) {
    std::vector<double> shifted(b.begin(), b.end());
    for (double& v : shifted) v += c;
    const Classifier moved = with_values(src, hb, shifted);
    for (auto mode : {BnMode::batch_stats, BnMode::running_stats}) {
      const Tensor l0 = src.forward(x, mode), l1 = moved.forward(x, mode);
      const Tensor e0 = energy(l0), e1 = energy(l1);
      const auto p0 = softmax_rows(l0), p1 = softmax_rows(l1);
      for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(e1.at(i), e0.at(i) - c, 1e-12);
      for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_NEAR(p1[i], p0[i], 1e-12);
    }
  }
}

TEST(Clone, TargetStartsEqualAndIsIndependent) {
  const Classifier src = trained_source();
  Classifier tgt = clone_as_target(src);
  EXPECT_EQ(tgt.role(), Role::target);
  EXPECT_EQ(src.role(), Role::source);
  EXPECT_EQ(tgt.fingerprint(), src.fingerprint());
  const Tensor x = random_batch(9, 3, 2);
  const Tensor es = energy(src.forward(x, BnMode::batch_stats));
  const Tensor et = energy(tgt.forward(x, BnMode::batch_stats));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(es.at(i), et.at(i));

  const auto before = src.fingerprint();
  tgt.set_mask(bn_affine_mask(tgt));
  for (auto& p : tgt.parameters()) p.tensor.mutable_data()[0] += 1.0;
  EXPECT_EQ(src.fingerprint(), before);
  EXPECT_NE(tgt.fingerprint(), before);
}

TEST(Clone, SourceIsImmutable) {
  Classifier src = trained_source();
  EXPECT_THROW(src.parameters(), std::logic_error);
}

TEST(Masks, BnAffineSelectsGammaBeta) {
  const Classifier m = trained_source();
  const ParamMask mask = bn_affine_mask(m);
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.adaptable.size(); ++i) {
    const auto& name = m.parameter_names()[i];
    const bool bn = name.find(".bn.") != std::string::npos;
    EXPECT_EQ(mask.adaptable[i], bn) << name;
    n += bn;
  }
  EXPECT_EQ(mask.count(), n);
  EXPECT_EQ(all_parameters_mask(m).count(), m.parameter_count());
}

TEST(Pretrain, RunningStatsFiniteAndPositive) {
  const Classifier src = trained_source();
  for (const auto& s : src.bn_stats())
    for (std::size_t j = 0; j < s.running_var.size(); ++j) {
      EXPECT_TRUE(std::isfinite(s.running_mean[j]));
      EXPECT_GT(s.running_var[j], 0.0);
    }
}

TEST(Checkpoint, RoundTripIsExact) {
  const Classifier src = trained_source();
  const std::string text = model_to_json(src);
  const Classifier back = model_from_json(text);
  EXPECT_TRUE(back == src);
  EXPECT_EQ(back.seed(), src.seed());
  const Tensor x = random_batch(11, 3, 19);
  for (auto mode : {BnMode::batch_stats, BnMode::running_stats}) {
    const Tensor a = src.forward(x, mode), b = back.forward(x, mode);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.at(i), b.at(i));
  }
  EXPECT_THROW(model_from_json("{\"version\": 99}"), CheckpointError);
  EXPECT_THROW(model_from_json("not json"), CheckpointError);
}

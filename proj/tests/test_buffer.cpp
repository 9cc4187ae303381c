#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "cretta/buffer.hpp"
#include "cretta/numerics.hpp"

using namespace cretta;

namespace {

Dataset dataset(std::size_t n, std::size_t classes, std::uint64_t seed) {
  DatasetSpec s;
  s.n = n;
  s.num_classes = classes;
  s.seed = seed;
  return make_dataset(s);
}

std::vector<double> row_of(const Tensor& t, std::size_t i) {
  auto r = t.data().subspan(i * t.cols(), t.cols());
  return {r.begin(), r.end()};
}

std::vector<std::size_t> class_counts(const std::vector<int>& labels, std::size_t c) {
  std::vector<std::size_t> h(c, 0);
  for (int y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

Classifier frozen_model(std::size_t dim, std::uint64_t seed) {
  Architecture a;
  a.input_dim = dim;
  a.hidden = {8};
  return freeze_as_source(Classifier::initialize(a, seed));
}

}  // namespace

TEST(InitBuffer, FullFractionIsPermutation) {
  Dataset data = dataset(300, 2, 1);
  for (bool balanced : {false, true}) {
    SourceBuffer buf = init_buffer(data, 1.0, balanced, 4);
    ASSERT_EQ(buf.size(), data.size());
    std::vector<std::vector<double>> a, b;
    for (std::size_t i = 0; i < data.size(); ++i) {
      a.push_back(row_of(data.inputs, i));
      b.push_back(row_of(buf.samples, i));
    }
    EXPECT_NE(a, b);  // shuffled
    std::ranges::sort(a);
    std::ranges::sort(b);
    EXPECT_EQ(a, b);
    EXPECT_EQ(buf.cursor, 0u);
  }
}

TEST(InitBuffer, SizeIsRoundedFraction) {
  Dataset data = dataset(1000, 2, 2);
  EXPECT_EQ(init_buffer(data, 0.1, true, 1).size(), 100u);
  EXPECT_EQ(init_buffer(data, 0.01, true, 1).size(), 10u);
  EXPECT_EQ(init_buffer(data, 0.0125, false, 1).size(), 13u);
  EXPECT_EQ(init_buffer(data, 0.001, false, 1).size(), 1u);
}

TEST(InitBuffer, BalancedThreeClassTenSamples) {
  Dataset data = dataset(100, 3, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SourceBuffer buf = init_buffer(data, 0.1, true, seed);
    auto h = class_counts(buf.labels, 3);
    std::ranges::sort(h);
    EXPECT_EQ(h, (std::vector<std::size_t>{3, 3, 4})) << "seed " << seed;
  }
}

TEST(InitBuffer, BalancedCountsDifferByAtMostOne) {
  for (std::size_t c : {2u, 5u}) {
    Dataset data = dataset(1000, c, 5);
    for (double f : {0.01, 0.02, 0.1, 0.37}) {
      SourceBuffer buf = init_buffer(data, f, true, 9);
      auto [lo, hi] = std::ranges::minmax(class_counts(buf.labels, c));
      EXPECT_LE(hi - lo, 1u) << "c=" << c << " f=" << f;
    }
  }
}

TEST(InitBuffer, BalancedSkipsExhaustedClasses) {
  Dataset data = dataset(100, 2, 6);
  std::vector<std::size_t> rows;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == 1 || zeros < 3) rows.push_back(i);
    if (data.labels[i] == 0) ++zeros;
  }
  Dataset skew = data.subset(rows);  // 3 of class 0, 50 of class 1
  SourceBuffer buf = init_buffer(skew, 0.5, true, 1);
  ASSERT_EQ(buf.size(), 27u);
  EXPECT_EQ(class_counts(buf.labels, 2), (std::vector<std::size_t>{3, 24}));
}

TEST(InitBuffer, Errors) {
  Dataset data = dataset(100, 2, 7);
  Dataset empty = data.subset(std::vector<std::size_t>{});
  EXPECT_THROW(init_buffer(empty, 0.5, true, 1), std::invalid_argument);
  EXPECT_THROW(init_buffer(data, 0.0, true, 1), std::invalid_argument);
  EXPECT_THROW(init_buffer(data, 1.5, true, 1), std::invalid_argument);
  EXPECT_THROW(init_buffer(data, 0.001, true, 1), std::invalid_argument);
}

TEST(InitBuffer, Deterministic) {
  Dataset data = dataset(500, 2, 8);
  SourceBuffer a = init_buffer(data, 0.1, true, 42), b = init_buffer(data, 0.1, true, 42);
  EXPECT_TRUE(std::ranges::equal(a.samples.data(), b.samples.data()));
  EXPECT_EQ(a.labels, b.labels);
  for (int i = 0; i < 7; ++i) {
    auto x = next_source_batch(a, 13), y = next_source_batch(b, 13);
    EXPECT_EQ(x.indices, y.indices);
    EXPECT_TRUE(std::ranges::equal(x.inputs.data(), y.inputs.data()));
  }
  SourceBuffer c = init_buffer(data, 0.1, true, 43);
  EXPECT_FALSE(std::ranges::equal(a.samples.data(), c.samples.data()));
}

TEST(NextSourceBatch, CursorWraps) {
  Dataset data = dataset(50, 2, 9);
  SourceBuffer buf = init_buffer(data, 0.1, false, 1);
  ASSERT_EQ(buf.size(), 5u);
  auto first = next_source_batch(buf, 3);
  EXPECT_EQ(first.indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(first.start, 0u);
  EXPECT_EQ(buf.cursor, 3u);
  auto second = next_source_batch(buf, 3);
  EXPECT_EQ(second.indices, (std::vector<std::size_t>{3, 4, 0}));
  EXPECT_EQ(second.start, 3u);
  EXPECT_EQ(buf.cursor, 1u);
  EXPECT_EQ(buffer_rows(buf, 4, 3), (std::vector<std::size_t>{4, 0, 1}));
  EXPECT_EQ(buf.cursor, 1u);
  EXPECT_THROW(next_source_batch(buf, 0), std::invalid_argument);
}

TEST(NextSourceBatch, FullSizeBatchCoversEverySample) {
  Dataset data = dataset(70, 2, 10);
  SourceBuffer buf = init_buffer(data, 0.1, true, 1);
  next_source_batch(buf, 3);
  auto b = next_source_batch(buf, buf.size());
  auto idx = b.indices;
  std::ranges::sort(idx);
  std::vector<std::size_t> all(buf.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_EQ(idx, all);
  EXPECT_EQ(buf.cursor, 3u);
}

TEST(NextSourceBatch, CoverageAfterCeilReads) {
  Dataset data = dataset(1000, 2, 11);
  SourceBuffer buf = init_buffer(data, 0.1, true, 2);
  for (std::size_t bs : {7u, 30u, 64u, 100u, 150u}) {
    buf.cursor = 0;
    std::vector<bool> seen(buf.size(), false);
    const std::size_t reads = (buf.size() + bs - 1) / bs;
    for (std::size_t r = 0; r < reads; ++r)
      for (auto i : next_source_batch(buf, bs).indices) seen[i] = true;
    EXPECT_TRUE(std::ranges::all_of(seen, [](bool v) { return v; })) << "bs=" << bs;
  }
}

TEST(NextSourceBatch, BytesUnchangedWithoutAugmentation) {
  Dataset data = dataset(200, 2, 12);
  SourceBuffer buf = init_buffer(data, 0.25, true, 3);
  const std::vector<double> stored(buf.samples.data().begin(), buf.samples.data().end());
  for (int r = 0; r < 5; ++r) {
    auto b = next_source_batch(buf, 17);
    EXPECT_FALSE(b.augmented);
    EXPECT_FALSE(b.inputs.same_storage(buf.samples));
    for (std::size_t i = 0; i < b.indices.size(); ++i)
      EXPECT_EQ(row_of(b.inputs, i), row_of(buf.samples, b.indices[i]));
  }
  EXPECT_TRUE(std::ranges::equal(buf.samples.data(), stored));
}

TEST(NextSourceBatch, AugmentationPerturbsCopyOnly) {
  Dataset data = dataset(200, 2, 13);
  SourceBuffer buf = init_buffer(data, 0.25, true, 3);
  buf.augmentation.probability = 1.0;
  const std::vector<double> stored(buf.samples.data().begin(), buf.samples.data().end());
  EXPECT_THROW(next_source_batch(buf, 10), std::invalid_argument);
  buf.cursor = 0;
  Rng rng(1);
  auto b = next_source_batch(buf, 10, &rng);
  EXPECT_TRUE(b.augmented);
  for (std::size_t i = 0; i < b.indices.size(); ++i) {
    const auto got = row_of(b.inputs, i), orig = row_of(buf.samples, b.indices[i]);
    EXPECT_NE(got, orig);
    // Small rotation of a norm-bounded plane plus 0.05 jitter stays close.
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], orig[k], 2.0);
  }
  EXPECT_TRUE(std::ranges::equal(buf.samples.data(), stored));

  // Fresh randomness per read of the same rows.
  buf.cursor = 0;
  auto again = next_source_batch(buf, 10, &rng);
  EXPECT_EQ(again.indices, b.indices);
  EXPECT_FALSE(std::ranges::equal(again.inputs.data(), b.inputs.data()));
}

TEST(MakePairs, AlignedAndCartesianCounts) {
  auto aligned = make_pairs(200, 200, PairingMode::aligned);
  ASSERT_EQ(aligned.size(), 200u);
  for (std::size_t i = 0; i < aligned.size(); ++i) EXPECT_EQ(aligned[i], (PairIndex{i, i}));
  auto cart = make_pairs(200, 200, PairingMode::cartesian);
  EXPECT_EQ(cart.size(), 40000u);
  EXPECT_EQ(cart[201], (PairIndex{1, 1}));
  EXPECT_EQ(make_pairs(3, 4, PairingMode::cartesian).size(), 12u);
  auto one = make_pairs(Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), PairingMode::aligned);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], (PairIndex{0, 0}));
}

TEST(MakePairs, CartesianCoversAllCombinationsOnce) {
  auto cart = make_pairs(5, 7, PairingMode::cartesian);
  std::map<std::pair<std::size_t, std::size_t>, int> seen;
  for (auto p : cart) ++seen[{p.target, p.source}];
  EXPECT_EQ(seen.size(), 35u);
  for (auto& [k, v] : seen) EXPECT_EQ(v, 1);
}

TEST(MakePairs, AlignedMismatchThrows) {
  EXPECT_THROW(make_pairs(4, 5, PairingMode::aligned), std::invalid_argument);
  EXPECT_THROW(make_pairs(Tensor::zeros({2, 3}), Tensor::zeros({3, 3}), PairingMode::aligned),
               std::invalid_argument);
  EXPECT_EQ(parse_pairing_mode("cartesian"), PairingMode::cartesian);
  EXPECT_THROW(parse_pairing_mode("diagonal"), std::invalid_argument);
}

TEST(ConfidenceFilter, FullFractionKeepsAll) {
  Dataset data = dataset(60, 2, 14);
  Classifier model = frozen_model(data.dim(), 3);
  for (auto keep : {ConfidenceKeep::top_fraction, ConfidenceKeep::bottom_fraction}) {
    Dataset kept = confidence_filter(data, model, keep, 1.0);
    EXPECT_TRUE(std::ranges::equal(kept.inputs.data(), data.inputs.data()));
    EXPECT_EQ(kept.labels, data.labels);
  }
}

TEST(ConfidenceFilter, TopHalfOfTwoKeepsHigher) {
  Dataset data = dataset(40, 2, 15);
  Classifier model = frozen_model(data.dim(), 4);
  const auto conf = source_confidence(model, data);
  auto i = static_cast<std::size_t>(std::ranges::max_element(conf) - conf.begin());
  auto j = static_cast<std::size_t>(std::ranges::min_element(conf) - conf.begin());
  ASSERT_NE(i, j);
  Dataset two = data.subset(std::vector<std::size_t>{j, i});
  Dataset top = confidence_filter(two, model, ConfidenceKeep::top_fraction, 0.5);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(row_of(top.inputs, 0), row_of(data.inputs, i));
  Dataset bottom = confidence_filter(two, model, ConfidenceKeep::bottom_fraction, 0.5);
  EXPECT_EQ(row_of(bottom.inputs, 0), row_of(data.inputs, j));
}

TEST(ConfidenceFilter, MeanOrderingMatchesBruteForce) {
  Dataset data = dataset(500, 2, 16);
  Classifier model = frozen_model(data.dim(), 5);
  const auto conf = source_confidence(model, data);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  const double all = mean(conf);
  Dataset top = confidence_filter(data, model, ConfidenceKeep::top_fraction, 0.1);
  Dataset bottom = confidence_filter(data, model, ConfidenceKeep::bottom_fraction, 0.1);
  ASSERT_EQ(top.size(), 50u);
  ASSERT_EQ(bottom.size(), 50u);
  const double top_mean = mean(source_confidence(model, top));
  const double bottom_mean = mean(source_confidence(model, bottom));
  EXPECT_GE(top_mean, all);
  EXPECT_GE(all, bottom_mean);

  // Brute-force rank: every kept top row beats every dropped row.
  auto sorted = conf;
  std::ranges::sort(sorted, std::greater<>());
  for (double c : source_confidence(model, top)) EXPECT_GE(c, sorted[49]);
  for (double c : source_confidence(model, bottom)) EXPECT_LE(c, sorted[450]);
}

TEST(ConfidenceFilter, TiesResolvedByIndexAndErrors) {
  Dataset data = dataset(20, 2, 17);
  Classifier model = frozen_model(data.dim(), 6);
  // Identical rows tie exactly; the lowest index is kept first.
  std::vector<std::size_t> rows(6, 0);
  Dataset same = data.subset(rows);
  same.labels = {0, 1, 0, 1, 0, 1};
  Dataset kept = confidence_filter(same, model, ConfidenceKeep::top_fraction, 0.5);
  EXPECT_EQ(kept.labels, (std::vector<int>{0, 1, 0}));
  Dataset one = confidence_filter(data, model, ConfidenceKeep::top_fraction, 0.01);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_THROW(confidence_filter(data, model, ConfidenceKeep::top_fraction, 0.0),
               std::invalid_argument);
  Dataset empty = data.subset(std::vector<std::size_t>{});
  EXPECT_THROW(confidence_filter(empty, model, ConfidenceKeep::top_fraction, 0.5),
               std::invalid_argument);
}

TEST(BufferOrigin, ParseRoundTrip) {
  for (auto o : {BufferOrigin::source_train, BufferOrigin::surrogate_dataset,
                 BufferOrigin::confidence_high, BufferOrigin::confidence_low})
    EXPECT_EQ(parse_buffer_origin(to_string(o)), o);
  EXPECT_THROW(parse_buffer_origin("cifar100"), std::invalid_argument);
}

#include "cretta/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cretta/numerics.hpp"

namespace cretta {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::size_t rounded_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

const char* to_string(BufferOrigin origin) {
  switch (origin) {
    case BufferOrigin::source_train: return "source_train";
    case BufferOrigin::surrogate_dataset: return "surrogate_dataset";
    case BufferOrigin::confidence_high: return "confidence_high";
    case BufferOrigin::confidence_low: return "confidence_low";
  }
  return "unknown";
}

BufferOrigin parse_buffer_origin(const std::string& text) {
  for (auto o : {BufferOrigin::source_train, BufferOrigin::surrogate_dataset,
                 BufferOrigin::confidence_high, BufferOrigin::confidence_low})
    if (text == to_string(o)) return o;
  throw std::invalid_argument("unknown buffer origin '" + text + "'");
}

SourceBuffer init_buffer(const Dataset& source, double fraction, bool balanced,
                         std::uint64_t seed) {
  if (source.size() == 0) throw std::invalid_argument("init_buffer: empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("init_buffer: fraction must be in (0, 1]");
  const std::size_t m = rounded_count(fraction, source.size());
  if (m < 1) throw std::invalid_argument("init_buffer: fraction selects no samples");

  Rng rng(mix_seed(seed, 0xB0F));
  std::vector<std::size_t> chosen;
  chosen.reserve(m);
  if (!balanced) {
    auto perm = rng.permutation(source.size());
    chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
  } else {
    std::vector<std::vector<std::size_t>> by_class(source.num_classes);
    for (std::size_t i = 0; i < source.size(); ++i)
      by_class.at(static_cast<std::size_t>(source.labels[i])).push_back(i);
    for (auto& rows : by_class) rng.shuffle(rows);
    // Class visiting order is itself seeded so no class is favoured by index.
    auto class_order = rng.permutation(by_class.size());
    std::vector<std::size_t> next(by_class.size(), 0);
    while (chosen.size() < m) {
      for (std::size_t k : class_order) {
        if (chosen.size() == m) break;
        if (next[k] < by_class[k].size()) chosen.push_back(by_class[k][next[k]++]);
      }
    }
    rng.shuffle(chosen);
  }

  Dataset picked = source.subset(chosen);
  SourceBuffer buf;
  buf.samples = picked.inputs;
  buf.labels = std::move(picked.labels);
  return buf;
}

std::vector<std::size_t> buffer_rows(const SourceBuffer& buffer,
                                     std::size_t start, std::size_t batch_size) {
  const std::size_t m = buffer.size();
  if (m == 0) throw std::invalid_argument("source buffer is empty");
  std::vector<std::size_t> rows(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) rows[i] = (start + i) % m;
  return rows;
}

SourceBatch next_source_batch(SourceBuffer& buffer, std::size_t batch_size,
                              Rng* rng) {
  if (batch_size < 1) throw std::invalid_argument("next_source_batch: batch_size must be >= 1");
  SourceBatch out;
  out.start = buffer.cursor;
  out.indices = buffer_rows(buffer, buffer.cursor, batch_size);
  buffer.cursor = (buffer.cursor + batch_size) % buffer.size();
  out.inputs = gather_rows(buffer.samples, out.indices).detach();

  if (buffer.augmentation.enabled()) {
    if (rng == nullptr)
      throw std::invalid_argument("next_source_batch: augmentation needs an rng");
    const auto& aug = buffer.augmentation;
    const std::size_t d = out.inputs.cols();
    auto x = out.inputs.mutable_data();
    for (std::size_t i = 0; i < batch_size; ++i) {
      if (rng->uniform() >= aug.probability) continue;
      const double a = rng->uniform(-aug.max_rotation_deg, aug.max_rotation_deg) * kPi / 180.0;
      double* row = &x[i * d];
      if (d >= 2) {
        const double x0 = row[0], x1 = row[1];
        row[0] = std::cos(a) * x0 - std::sin(a) * x1;
        row[1] = std::sin(a) * x0 + std::cos(a) * x1;
      }
      for (std::size_t k = 0; k < d; ++k) row[k] += aug.jitter_sd * rng->normal();
    }
    out.augmented = true;
  }
  return out;
}

const char* to_string(PairingMode mode) {
  return mode == PairingMode::aligned ? "aligned" : "cartesian";
}

PairingMode parse_pairing_mode(const std::string& text) {
  if (text == "aligned") return PairingMode::aligned;
  if (text == "cartesian") return PairingMode::cartesian;
  throw std::invalid_argument("unknown pairing mode '" + text + "'");
}

std::vector<PairIndex> make_pairs(std::size_t target_rows,
                                  std::size_t source_rows, PairingMode mode) {
  std::vector<PairIndex> pairs;
  if (mode == PairingMode::aligned) {
    if (target_rows != source_rows)
      throw std::invalid_argument("make_pairs: aligned pairing needs equal batch sizes");
    pairs.reserve(target_rows);
    for (std::size_t i = 0; i < target_rows; ++i) pairs.push_back({i, i});
  } else {
    pairs.reserve(target_rows * source_rows);
    for (std::size_t t = 0; t < target_rows; ++t)
      for (std::size_t s = 0; s < source_rows; ++s) pairs.push_back({t, s});
  }
  return pairs;
}

std::vector<PairIndex> make_pairs(const Tensor& target_batch,
                                  const Tensor& source_batch, PairingMode mode) {
  return make_pairs(target_batch.rows(), source_batch.rows(), mode);
}

std::vector<double> source_confidence(const Classifier& source,
                                      const Dataset& data) {
  const Tensor logits = source.forward(data.inputs, BnMode::running_stats);
  const auto probs = softmax_rows(logits);
  const std::size_t c = logits.cols();
  std::vector<double> conf(data.size());
  for (std::size_t i = 0; i < conf.size(); ++i)
    conf[i] = *std::max_element(probs.begin() + static_cast<std::ptrdiff_t>(i * c),
                                probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return conf;
}

Dataset confidence_filter(const Dataset& data, const Classifier& source,
                          ConfidenceKeep keep, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("confidence_filter: fraction must be in (0, 1]");
  const auto conf = source_confidence(source, data);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool top = keep == ConfidenceKeep::top_fraction;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return top ? conf[a] > conf[b] : conf[a] < conf[b];
  });
  const std::size_t count = std::max<std::size_t>(1, rounded_count(fraction, data.size()));
  if (data.size() == 0) throw std::invalid_argument("confidence_filter: empty result");
  order.resize(std::min(count, data.size()));
  std::sort(order.begin(), order.end());
  return data.subset(order);
}

}  // namespace cretta

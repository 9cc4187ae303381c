#include "cretta/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cretta/numerics.hpp"

namespace cretta {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct KindName {
  CorruptionKind kind;
  const char* name;
};

constexpr KindName kCorruptionNames[] = {
    {CorruptionKind::gaussian_noise, "gaussian_noise"},
    {CorruptionKind::feature_scale, "feature_scale"},
    {CorruptionKind::rotation, "rotation"},
    {CorruptionKind::occlusion, "occlusion"},
    {CorruptionKind::shear, "shear"},
};

StreamBatch take_rows(const Dataset& data, std::span<const std::size_t> rows) {
  StreamBatch b;
  b.inputs = gather_rows(data.inputs, rows).detach();
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(data.labels[r]);
  return b;
}

void check_batch_size(std::size_t batch_size, std::size_t n) {
  if (batch_size < 2) throw std::invalid_argument("stream: batch_size must be >= 2");
  if (batch_size > n) throw std::invalid_argument("stream: batch_size exceeds dataset");
}

}  // namespace

const char* to_string(DatasetKind kind) {
  return kind == DatasetKind::blobs ? "blobs" : "moons";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "blobs") return DatasetKind::blobs;
  if (text == "moons") return DatasetKind::moons;
  throw std::invalid_argument("unknown dataset kind '" + text + "'");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.inputs = gather_rows(inputs, rows).detach();
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  out.num_classes = num_classes;
  out.spec = spec;
  return out;
}

Dataset make_dataset(const DatasetSpec& spec) {
  const std::size_t n = spec.n, d = spec.dim, c = spec.num_classes;
  if (c < 2) throw std::invalid_argument("make_dataset: need at least 2 classes");
  if (n < 2 * c) throw std::invalid_argument("make_dataset: n must be >= 2 * classes");
  if (d < 2) throw std::invalid_argument("make_dataset: dim must be >= 2");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("make_dataset: noise < 0");
  if (spec.kind == DatasetKind::moons && c != 2)
    throw std::invalid_argument("make_dataset: moons has exactly 2 classes");

  Rng rng(mix_seed(spec.seed, 0xDA7A));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % c);
  rng.shuffle(labels);

  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &x[i * d];
    for (std::size_t k = 0; k < d; ++k) row[k] = spec.noise * rng.normal();
    const int y = labels[i];
    if (spec.kind == DatasetKind::blobs) {
      const double r = spec.separation / 2.0;
      if (c == 2) {
        row[0] += spec.offset;
        row[1] += y == 0 ? -r : r;
      } else if (d >= 3) {
        const double a = 2.0 * kPi * y / static_cast<double>(c);
        row[0] += spec.offset;
        row[1] += r * std::cos(a);
        row[2] += r * std::sin(a);
      } else {
        const double a = 2.0 * kPi * y / static_cast<double>(c);
        row[0] += r * std::cos(a);
        row[1] += r * std::sin(a);
      }
    } else {
      // Two interleaved half circles, scaled by separation / 2.
      const double t = kPi * rng.uniform();
      const double s = spec.separation / 2.0;
      const double mx = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
      const double my = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
      row[0] = s * mx + 0.1 * row[0] + spec.offset;
      row[1] = s * my + 0.1 * row[1];
    }
  }
  Dataset out;
  out.inputs = Tensor::from({n, d}, std::move(x));
  out.labels = std::move(labels);
  out.num_classes = c;
  out.spec = spec;
  return out;
}

const char* to_string(CorruptionKind kind) {
  for (const auto& k : kCorruptionNames)
    if (k.kind == kind) return k.name;
  return "unknown";
}

CorruptionKind parse_corruption_kind(const std::string& text) {
  for (const auto& k : kCorruptionNames)
    if (text == k.name) return k.kind;
  throw std::invalid_argument("unknown corruption kind '" + text + "'");
}

std::vector<CorruptionKind> all_corruption_kinds() {
  std::vector<CorruptionKind> out;
  for (const auto& k : kCorruptionNames) out.push_back(k.kind);
  return out;
}

double corruption_intensity(const CorruptionSpec& spec, std::size_t dim) {
  if (spec.severity < 0 || spec.severity > 5)
    throw std::invalid_argument("corrupt: severity must be in [0, 5]");
  const double s = spec.severity;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: return 0.1 * s;
    case CorruptionKind::feature_scale: return 1.0 + 0.15 * s;
    case CorruptionKind::rotation: return 9.0 * s * kPi / 180.0;
    case CorruptionKind::occlusion:
      // ceil(d * 0.1 * s) with the product formed in integers.
      return static_cast<double>((dim * spec.severity + 9) / 10);
    case CorruptionKind::shear: return 0.1 * s;
  }
  throw std::invalid_argument("corrupt: unknown kind");
}

Tensor rotate_plane(const Tensor& inputs, double radians) {
  if (inputs.rank() != 2 || inputs.cols() < 2)
    throw std::invalid_argument("rotate_plane: need [n x d] with d >= 2");
  Tensor out = inputs.detach();
  auto x = out.mutable_data();
  const std::size_t d = inputs.cols();
  const double c = std::cos(radians), s = std::sin(radians);
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const double x0 = x[i * d], x1 = x[i * d + 1];
    x[i * d] = c * x0 - s * x1;
    x[i * d + 1] = s * x0 + c * x1;
  }
  return out;
}

Tensor corrupt(const Tensor& inputs, const CorruptionSpec& spec,
               std::uint64_t seed) {
  if (inputs.rank() != 2) throw std::invalid_argument("corrupt: need [n x d]");
  const std::size_t n = inputs.rows(), d = inputs.cols();
  const double level = corruption_intensity(spec, d);
  if (spec.severity == 0) return inputs.detach();

  if (spec.kind == CorruptionKind::rotation) return rotate_plane(inputs, level);

  Tensor out = inputs.detach();
  auto x = out.mutable_data();
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: {
      Rng rng(mix_seed(seed, 0x401));
      for (double& v : x) v += level * rng.normal();
      break;
    }
    case CorruptionKind::feature_scale:
      for (double& v : x) v *= level;
      break;
    case CorruptionKind::occlusion: {
      Rng rng(mix_seed(seed, 0x402));
      const auto order = rng.permutation(d);
      const std::size_t count = std::min(d, static_cast<std::size_t>(level));
      for (std::size_t j = 0; j < count; ++j)
        for (std::size_t i = 0; i < n; ++i) x[i * d + order[j]] = 0.0;
      break;
    }
    case CorruptionKind::shear:
      if (d < 2) throw std::invalid_argument("corrupt: shear needs d >= 2");
      for (std::size_t i = 0; i < n; ++i) x[i * d + 1] += level * x[i * d];
      break;
    case CorruptionKind::rotation:
      break;
  }
  return out;
}

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec,
                std::uint64_t seed) {
  Dataset out = data;
  out.inputs = corrupt(data.inputs, spec, seed);
  return out;
}

std::vector<StreamBatch> iid_stream(const Dataset& data, std::size_t batch_size,
                                    std::size_t num_batches, std::uint64_t seed) {
  check_batch_size(batch_size, data.size());
  Rng rng(mix_seed(seed, 0x11D));
  std::vector<std::size_t> order = rng.permutation(data.size());
  std::size_t pos = 0;
  std::vector<StreamBatch> out;
  out.reserve(num_batches);
  std::vector<std::size_t> rows(batch_size);
  for (std::size_t b = 0; b < num_batches; ++b) {
    for (std::size_t i = 0; i < batch_size; ++i) {
      if (pos == order.size()) {
        order = rng.permutation(data.size());
        pos = 0;
      }
      rows[i] = order[pos++];
    }
    out.push_back(take_rows(data, rows));
  }
  return out;
}

std::vector<StreamBatch> dirichlet_stream(const Dataset& data, double delta,
                                          std::size_t batch_size,
                                          std::size_t num_batches,
                                          std::uint64_t seed) {
  if (!(delta > 0.0)) throw std::invalid_argument("dirichlet_stream: delta must be > 0");
  check_batch_size(batch_size, data.size());
  const std::size_t c = data.num_classes;
  Rng rng(mix_seed(seed, 0xD1C));

  std::vector<std::vector<std::size_t>> pools(c);
  auto refill = [&] {
    for (auto& p : pools) p.clear();
    for (std::size_t i = 0; i < data.size(); ++i)
      pools[static_cast<std::size_t>(data.labels[i])].push_back(i);
    for (auto& p : pools) rng.shuffle(p);
  };
  refill();

  const std::vector<double> alpha(c, delta);
  std::vector<StreamBatch> out;
  out.reserve(num_batches);
  for (std::size_t b = 0; b < num_batches; ++b) {
    const auto props = rng.dirichlet(alpha);
    std::vector<std::size_t> rows;
    rows.reserve(batch_size);
    std::size_t substitutions = 0;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const double u = rng.uniform();
      std::size_t k = 0;
      double acc = props[0];
      while (k + 1 < c && u >= acc) acc += props[++k];
      if (pools[k].empty()) {
        std::size_t best = c;
        for (std::size_t j = 0; j < c; ++j)
          if (!pools[j].empty() && (best == c || pools[j].size() > pools[best].size()))
            best = j;
        if (best == c) {
          refill();
        } else {
          k = best;
          ++substitutions;
        }
      }
      rows.push_back(pools[k].back());
      pools[k].pop_back();
    }
    StreamBatch batch = take_rows(data, rows);
    batch.substitutions = substitutions;
    out.push_back(std::move(batch));
  }
  return out;
}

std::vector<StreamBatch> gradual_stream(const Dataset& clean,
                                        const GradualSpec& spec,
                                        std::size_t batch_size,
                                        std::uint64_t seed) {
  for (std::size_t i = 0; i < spec.severities.size(); ++i) {
    if (spec.severities[i] < 1 || spec.severities[i] > 5)
      throw std::invalid_argument("gradual_stream: severities must be in [1, 5]");
    if (i > 0 && spec.severities[i] < spec.severities[i - 1])
      throw std::invalid_argument("gradual_stream: severities must be non-decreasing");
  }
  const std::size_t stages = spec.severities.size() + 1;
  const std::size_t adapt_batches = stages * spec.batches_per_stage;
  auto raw = iid_stream(clean, batch_size, adapt_batches + spec.post_eval_batches, seed);

  std::vector<StreamBatch> out;
  out.reserve(raw.size());
  std::size_t b = 0;
  for (std::size_t stage = 0; stage < stages; ++stage) {
    const int severity = stage == 0 ? 0 : spec.severities[stage - 1];
    std::string tag = stage == 0 ? "Q" : std::to_string(severity);
    if (stage + 1 == stages && stage > 0) tag = "P";
    for (std::size_t i = 0; i < spec.batches_per_stage; ++i, ++b) {
      StreamBatch batch = std::move(raw[b]);
      batch.inputs = corrupt(batch.inputs, {spec.kind, severity},
                             mix_seed(seed, 0x6000 + stage));
      batch.stage = tag;
      batch.severity = severity;
      out.push_back(std::move(batch));
    }
  }
  for (std::size_t i = 0; i < spec.post_eval_batches; ++i, ++b) {
    StreamBatch batch = std::move(raw[b]);
    batch.stage = "Q_post";
    batch.frozen = true;
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace cretta

#include "cretta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cretta/checkpoint.hpp"
#include "cretta/metrics.hpp"
#include "cretta/numerics.hpp"
#include "json_io.hpp"

namespace cretta {

namespace fs = std::filesystem;
using io::json;

namespace {

// Seed streams derived from each experiment seed.
enum SeedStream : std::uint64_t {
  kSourceData = 1,
  kTargetData = 2,
  kStreamOrder = 3,
  kBufferDraw = 4,
  kEngine = 5,
  kPretrain = 6,
  kSurrogateData = 7,
  kCorruption = 0x100,
};

ArmSpec arm(std::string name, std::string adapt, std::string buffer = "{}") {
  return {std::move(name), std::move(adapt), std::move(buffer)};
}

std::vector<ArmSpec> baseline_arms() {
  return {arm("source", R"({"loss":"source"})"),
          arm("bn_adapt", R"({"loss":"bn_only"})"),
          arm("tent", R"({"loss":"entropy_tent"})"),
          arm("pl", R"({"loss":"pseudo_label"})"),
          arm("cretta", R"({"loss":"cretta"})")};
}

std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // folds -0
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_number(*v) : "NA";
}

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  return true;
}

// --- JSON sections ---------------------------------------------------------

using Errors = std::vector<std::string>;

template <typename F>
void section(Errors& errors, const std::string& where, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    errors.push_back(where + ": " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw std::invalid_argument("unknown key '" + k + "'");
  }
}

json buffer_to_json(const BufferConfig& b) {
  return {{"fraction", b.fraction},
          {"balanced", b.balanced},
          {"origin", to_string(b.origin)},
          {"confidence_fraction", b.confidence_fraction},
          {"augmentation", io::augmentation_to_json(b.augmentation)}};
}

void buffer_from_json(const json& j, BufferConfig& b) {
  reject_unknown(j, {"fraction", "balanced", "origin", "confidence_fraction", "augmentation"},
                 "buffer");
  if (j.contains("fraction")) b.fraction = j["fraction"].get<double>();
  if (j.contains("balanced")) b.balanced = j["balanced"].get<bool>();
  if (j.contains("origin")) b.origin = parse_buffer_origin(j["origin"].get<std::string>());
  if (j.contains("confidence_fraction"))
    b.confidence_fraction = j["confidence_fraction"].get<double>();
  if (j.contains("augmentation")) io::augmentation_from_json(j["augmentation"], b.augmentation);
}

std::string canonical(const json& j) { return j.dump(); }

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::single: return "single";
    case ExperimentKind::compare: return "compare";
    case ExperimentKind::ablate: return "ablate";
    case ExperimentKind::sweep: return "sweep";
    case ExperimentKind::gradual: return "gradual";
    case ExperimentKind::noniid: return "noniid";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  for (auto k : {ExperimentKind::single, ExperimentKind::compare, ExperimentKind::ablate,
                 ExperimentKind::sweep, ExperimentKind::gradual, ExperimentKind::noniid})
    if (text == to_string(k)) return k;
  throw std::invalid_argument("unknown experiment kind '" + text + "'");
}

const char* to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::iid: return "iid";
    case StreamMode::dirichlet: return "dirichlet";
    case StreamMode::gradual: return "gradual";
  }
  return "unknown";
}

StreamMode parse_stream_mode(const std::string& text) {
  for (auto m : {StreamMode::iid, StreamMode::dirichlet, StreamMode::gradual})
    if (text == to_string(m)) return m;
  throw std::invalid_argument("unknown stream mode '" + text + "'");
}

Architecture ExperimentConfig::architecture() const {
  Architecture a;
  a.input_dim = dataset.dim;
  a.hidden = hidden;
  a.num_classes = dataset.num_classes;
  a.bn_epsilon = bn_epsilon;
  a.bn_momentum = bn_momentum;
  return a;
}

ExperimentConfig preset(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.name = to_string(kind);
  switch (kind) {
    case ExperimentKind::single:
      break;
    case ExperimentKind::compare:
      c.arms = baseline_arms();
      c.corruptions = all_corruption_kinds();
      c.severities = {1, 2, 3, 4, 5};
      break;
    case ExperimentKind::ablate:
      c.arms = {arm("cretta", R"({"loss":"cretta"})"),
                arm("no_contrastive", R"({"loss":"no_contrastive"})"),
                arm("no_contrastive_sigma", R"({"loss":"no_contrastive_sigma"})"),
                arm("pairwise_non_residual", R"({"loss":"pairwise_non_residual"})"),
                arm("nce_residual", R"({"loss":"nce_residual"})"),
                arm("nce_non_residual", R"({"loss":"nce_non_residual"})"),
                arm("uniform_weight", R"({"loss":"cretta","weight_mode":"uniform_random"})"),
                arm("cartesian", R"({"loss":"cretta","pairing":"cartesian"})"),
                arm("buffer_1pct", R"({"loss":"cretta"})", R"({"fraction":0.01})"),
                arm("buffer_2pct", R"({"loss":"cretta"})", R"({"fraction":0.02})"),
                arm("surrogate", R"({"loss":"cretta"})", R"({"origin":"surrogate_dataset"})"),
                arm("confidence_high", R"({"loss":"cretta"})", R"({"origin":"confidence_high"})"),
                arm("confidence_low", R"({"loss":"cretta"})", R"({"origin":"confidence_low"})"),
                arm("augmented", R"({"loss":"cretta"})",
                    R"({"augmentation":{"probability":0.5}})")};
      break;
    case ExperimentKind::sweep:
      c.betas = {0.5, 1.0, 2.0, 4.0};
      c.severities = {1, 2, 3, 4, 5};
      break;
    case ExperimentKind::gradual:
      c.arms = baseline_arms();
      c.stream.mode = StreamMode::gradual;
      break;
    case ExperimentKind::noniid:
      c.arms = baseline_arms();
      c.stream.mode = StreamMode::dirichlet;
      break;
  }
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json arms = json::array();
  for (const auto& a : c.arms)
    arms.push_back({{"name", a.name},
                    {"adapt", json::parse(a.adapt_overrides)},
                    {"buffer", json::parse(a.buffer_overrides)}});
  json corruptions = json::array();
  for (auto k : c.corruptions) corruptions.push_back(to_string(k));
  json j = {
      {"format_version", c.format_version},
      {"experiment", to_string(c.kind)},
      {"name", c.name},
      {"seeds", c.seeds},
      {"dataset",
       {{"kind", to_string(c.dataset.kind)},
        {"n", c.dataset.n},
        {"dim", c.dataset.dim},
        {"num_classes", c.dataset.num_classes},
        {"separation", c.dataset.separation},
        {"offset", c.dataset.offset},
        {"noise", c.dataset.noise}}},
      {"target_size", c.target_size},
      {"model", {{"hidden", c.hidden}, {"bn_epsilon", c.bn_epsilon}, {"bn_momentum", c.bn_momentum}}},
      {"pretrain",
       {{"epochs", c.pretrain.epochs}, {"batch_size", c.pretrain.batch_size}, {"lr", c.pretrain.lr}}},
      {"corruptions", corruptions},
      {"severities", c.severities},
      {"stream",
       {{"mode", to_string(c.stream.mode)},
        {"num_batches", c.stream.num_batches},
        {"deltas", c.stream.deltas},
        {"gradual_severities", c.stream.gradual_severities},
        {"batches_per_stage", c.stream.batches_per_stage},
        {"post_eval_batches", c.stream.post_eval_batches}}},
      {"adapt", io::adapt_config_to_json(c.adapt)},
      {"buffer", buffer_to_json(c.buffer)},
      {"arms", arms},
      {"betas", c.betas},
      {"threads", c.threads}};
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text,
                              const std::optional<ExperimentConfig>& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  Errors errors;
  ExperimentConfig c;
  if (base) {
    c = *base;
  } else {
    ExperimentKind kind = ExperimentKind::single;
    section(errors, "experiment", [&] {
      if (j.contains("experiment"))
        kind = parse_experiment_kind(j["experiment"].get<std::string>());
    });
    c = preset(kind);
  }

  section(errors, "config", [&] {
    reject_unknown(j, {"format_version", "experiment", "name", "seeds", "dataset", "target_size",
                       "model", "pretrain", "corruptions", "severities", "stream", "adapt",
                       "buffer", "arms", "betas", "threads"},
                   "config");
  });
  section(errors, "format_version", [&] {
    if (j.contains("format_version")) c.format_version = j["format_version"].get<int>();
    if (c.format_version != kConfigFormatVersion)
      throw std::invalid_argument("unsupported format_version " +
                                  std::to_string(c.format_version) + " (expected " +
                                  std::to_string(kConfigFormatVersion) + ")");
  });
  section(errors, "experiment", [&] {
    if (j.contains("experiment")) c.kind = parse_experiment_kind(j["experiment"].get<std::string>());
  });
  section(errors, "name", [&] { if (j.contains("name")) c.name = j["name"].get<std::string>(); });
  section(errors, "seeds", [&] {
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  });
  section(errors, "dataset", [&] {
    if (!j.contains("dataset")) return;
    const auto& d = j["dataset"];
    reject_unknown(d, {"kind", "n", "dim", "num_classes", "separation", "offset", "noise"}, "dataset");
    if (d.contains("kind")) c.dataset.kind = parse_dataset_kind(d["kind"].get<std::string>());
    if (d.contains("n")) c.dataset.n = d["n"].get<std::size_t>();
    if (d.contains("dim")) c.dataset.dim = d["dim"].get<std::size_t>();
    if (d.contains("num_classes")) c.dataset.num_classes = d["num_classes"].get<std::size_t>();
    if (d.contains("separation")) c.dataset.separation = d["separation"].get<double>();
    if (d.contains("offset")) c.dataset.offset = d["offset"].get<double>();
    if (d.contains("noise")) c.dataset.noise = d["noise"].get<double>();
  });
  section(errors, "target_size", [&] {
    if (j.contains("target_size")) c.target_size = j["target_size"].get<std::size_t>();
  });
  section(errors, "model", [&] {
    if (!j.contains("model")) return;
    const auto& m = j["model"];
    reject_unknown(m, {"hidden", "bn_epsilon", "bn_momentum"}, "model");
    if (m.contains("hidden")) c.hidden = m["hidden"].get<std::vector<std::size_t>>();
    if (m.contains("bn_epsilon")) c.bn_epsilon = m["bn_epsilon"].get<double>();
    if (m.contains("bn_momentum")) c.bn_momentum = m["bn_momentum"].get<double>();
  });
  section(errors, "pretrain", [&] {
    if (!j.contains("pretrain")) return;
    const auto& p = j["pretrain"];
    reject_unknown(p, {"epochs", "batch_size", "lr"}, "pretrain");
    if (p.contains("epochs")) c.pretrain.epochs = p["epochs"].get<std::size_t>();
    if (p.contains("batch_size")) c.pretrain.batch_size = p["batch_size"].get<std::size_t>();
    if (p.contains("lr")) c.pretrain.lr = p["lr"].get<double>();
  });
  section(errors, "corruptions", [&] {
    if (!j.contains("corruptions")) return;
    c.corruptions.clear();
    for (const auto& k : j["corruptions"])
      c.corruptions.push_back(parse_corruption_kind(k.get<std::string>()));
  });
  section(errors, "severities", [&] {
    if (j.contains("severities")) c.severities = j["severities"].get<std::vector<int>>();
  });
  section(errors, "stream", [&] {
    if (!j.contains("stream")) return;
    const auto& s = j["stream"];
    reject_unknown(s, {"mode", "num_batches", "deltas", "gradual_severities", "batches_per_stage",
                       "post_eval_batches"},
                   "stream");
    if (s.contains("mode")) c.stream.mode = parse_stream_mode(s["mode"].get<std::string>());
    if (s.contains("num_batches")) c.stream.num_batches = s["num_batches"].get<std::size_t>();
    if (s.contains("deltas")) c.stream.deltas = s["deltas"].get<std::vector<double>>();
    if (s.contains("gradual_severities"))
      c.stream.gradual_severities = s["gradual_severities"].get<std::vector<int>>();
    if (s.contains("batches_per_stage"))
      c.stream.batches_per_stage = s["batches_per_stage"].get<std::size_t>();
    if (s.contains("post_eval_batches"))
      c.stream.post_eval_batches = s["post_eval_batches"].get<std::size_t>();
  });
  section(errors, "adapt", [&] {
    if (j.contains("adapt")) io::adapt_config_from_json(j["adapt"], c.adapt);
  });
  section(errors, "buffer", [&] {
    if (j.contains("buffer")) buffer_from_json(j["buffer"], c.buffer);
  });
  section(errors, "arms", [&] {
    if (!j.contains("arms")) return;
    c.arms.clear();
    for (const auto& a : j["arms"]) {
      reject_unknown(a, {"name", "adapt", "buffer"}, "arm");
      ArmSpec spec;
      spec.name = a.at("name").get<std::string>();
      const json adapt = a.value("adapt", json::object());
      const json buffer = a.value("buffer", json::object());
      if (!adapt.is_object() || !buffer.is_object())
        throw std::invalid_argument("arm '" + spec.name + "': adapt/buffer must be objects");
      spec.adapt_overrides = canonical(adapt);
      spec.buffer_overrides = canonical(buffer);
      c.arms.push_back(std::move(spec));
    }
  });
  section(errors, "betas", [&] {
    if (j.contains("betas")) c.betas = j["betas"].get<std::vector<double>>();
  });
  section(errors, "threads", [&] {
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
  });

  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += e + "\n";
    throw ConfigError(msg);
  }
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  Errors errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(c.format_version == kConfigFormatVersion, "format_version: unsupported");
  check(safe_name(c.name), "name: must be non-empty and use [A-Za-z0-9_.-]");
  check(!c.seeds.empty(), "seeds: at least one seed is required");
  check(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(),
        "seeds: duplicates");
  check(c.dataset.num_classes >= 2, "dataset.num_classes: must be >= 2");
  check(c.dataset.dim >= 2, "dataset.dim: must be >= 2");
  check(c.dataset.n >= 2 * c.dataset.num_classes, "dataset.n: must be >= 2 * num_classes");
  check(c.dataset.noise >= 0.0, "dataset.noise: must be >= 0");
  check(c.target_size >= c.adapt.batch_size, "target_size: must be >= adapt.batch_size");
  check(!c.hidden.empty(), "model.hidden: need at least one hidden layer");
  check(c.bn_epsilon > 0.0, "model.bn_epsilon: must be > 0");
  check(c.bn_momentum > 0.0 && c.bn_momentum <= 1.0, "model.bn_momentum: must be in (0, 1]");
  check(c.pretrain.epochs >= 1, "pretrain.epochs: must be >= 1");
  check(c.pretrain.batch_size >= 2, "pretrain.batch_size: must be >= 2");
  check(c.pretrain.lr > 0.0, "pretrain.lr: must be > 0");
  check(!c.corruptions.empty(), "corruptions: at least one kind");
  if (c.stream.mode != StreamMode::gradual) {
    check(!c.severities.empty(), "severities: at least one level");
    for (int s : c.severities) check(s >= 1 && s <= 5, "severities: values must be in [1, 5]");
  }
  if (c.stream.mode == StreamMode::dirichlet) {
    check(!c.stream.deltas.empty(), "stream.deltas: at least one delta");
    for (double d : c.stream.deltas) check(d > 0.0, "stream.deltas: values must be > 0");
  }
  if (c.stream.mode == StreamMode::gradual) {
    const auto& g = c.stream.gradual_severities;
    check(!g.empty(), "stream.gradual_severities: at least one level");
    for (std::size_t i = 0; i < g.size(); ++i) {
      check(g[i] >= 1 && g[i] <= 5, "stream.gradual_severities: values must be in [1, 5]");
      if (i > 0) check(g[i] >= g[i - 1], "stream.gradual_severities: must be non-decreasing");
    }
  }
  check(!c.arms.empty(), "arms: at least one arm");
  std::set<std::string> names;
  for (const auto& a : c.arms) {
    check(safe_name(a.name), "arms: invalid name '" + a.name + "'");
    check(names.insert(a.name).second, "arms: duplicate name '" + a.name + "'");
  }
  if (c.kind == ExperimentKind::sweep) check(!c.betas.empty(), "betas: sweep needs values");
  for (double b : c.betas) check(b > 0.0, "betas: values must be > 0");
  check(c.threads >= 1, "threads: must be >= 1");
  section(errors, "adapt", [&] { c.adapt.validate(); });
  if (errors.empty()) {
    section(errors, "arms", [&] {
      for (const auto& a : resolve_arms(c)) {
        try {
          a.adapt.validate();
          if (!(a.buffer.fraction > 0.0 && a.buffer.fraction <= 1.0))
            throw std::invalid_argument("buffer.fraction must be in (0, 1]");
          if (!(a.buffer.confidence_fraction > 0.0 && a.buffer.confidence_fraction <= 1.0))
            throw std::invalid_argument("buffer.confidence_fraction must be in (0, 1]");
        } catch (const std::exception& e) {
          throw std::invalid_argument("'" + a.name + "': " + e.what());
        }
      }
    });
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += e + "\n";
    throw ConfigError(msg);
  }
}

std::vector<Arm> resolve_arms(const ExperimentConfig& c) {
  std::vector<Arm> out;
  for (const auto& spec : c.arms) {
    Arm a{spec.name, c.adapt, c.buffer};
    io::adapt_config_from_json(json::parse(spec.adapt_overrides), a.adapt);
    buffer_from_json(json::parse(spec.buffer_overrides), a.buffer);
    if (c.kind == ExperimentKind::sweep && !c.betas.empty()) {
      for (double b : c.betas) {
        Arm swept = a;
        swept.adapt.beta = b;
        swept.name = a.name + "_beta" + format_g(b);
        out.push_back(std::move(swept));
      }
    } else {
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::string Condition::label() const {
  std::string s = std::string(to_string(kind)) + "_" + std::to_string(severity);
  if (delta) s += "_delta" + format_g(*delta);
  return s;
}

std::vector<Condition> conditions(const ExperimentConfig& c) {
  std::vector<Condition> out;
  for (auto kind : c.corruptions) {
    if (c.stream.mode == StreamMode::gradual) {
      out.push_back({kind, c.stream.gradual_severities.back(), std::nullopt});
      continue;
    }
    for (int s : c.severities) {
      if (c.stream.mode == StreamMode::dirichlet) {
        for (double d : c.stream.deltas) out.push_back({kind, s, d});
      } else {
        out.push_back({kind, s, std::nullopt});
      }
    }
  }
  return out;
}

bool ExperimentResult::any_failed() const {
  return std::any_of(cells.begin(), cells.end(),
                     [](const CellResult& c) { return !c.error.empty(); });
}

const CellResult& ExperimentResult::cell(const std::string& arm_name,
                                         const std::string& condition,
                                         std::uint64_t seed) const {
  for (const auto& c : cells)
    if (arms[c.arm].name == arm_name && conditions[c.condition].label() == condition &&
        c.seed == seed)
      return c;
  throw std::out_of_range("no cell " + arm_name + "/" + condition + "/seed" +
                          std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Cell execution

SourceSetup prepare_source(const ExperimentConfig& c, std::uint64_t seed) {
  DatasetSpec spec = c.dataset;
  spec.seed = mix_seed(seed, kSourceData);
  SourceSetup s;
  s.data = make_dataset(spec);
  s.model = pretrain_source(c.architecture(), s.data.inputs, s.data.labels, c.pretrain,
                            mix_seed(seed, kPretrain));
  return s;
}

SourceBuffer build_buffer(const ExperimentConfig& c, const BufferConfig& b,
                          const SourceSetup& source, std::uint64_t seed) {
  const std::uint64_t draw = mix_seed(seed, kBufferDraw);
  SourceBuffer buf;
  switch (b.origin) {
    case BufferOrigin::source_train:
      buf = init_buffer(source.data, b.fraction, b.balanced, draw);
      break;
    case BufferOrigin::surrogate_dataset: {
      DatasetSpec spec = c.dataset;
      spec.seed = mix_seed(seed, kSurrogateData);
      buf = init_buffer(make_dataset(spec), b.fraction, b.balanced, draw);
      break;
    }
    case BufferOrigin::confidence_high:
    case BufferOrigin::confidence_low: {
      const auto keep = b.origin == BufferOrigin::confidence_high
                            ? ConfidenceKeep::top_fraction
                            : ConfidenceKeep::bottom_fraction;
      const Dataset filtered =
          confidence_filter(source.data, source.model, keep, b.confidence_fraction);
      buf = init_buffer(filtered, 1.0, b.balanced, draw);
      break;
    }
  }
  buf.origin = b.origin;
  buf.augmentation = b.augmentation;
  return buf;
}

std::vector<StreamBatch> build_stream(const ExperimentConfig& c, const Condition& cond,
                                      std::uint64_t seed) {
  DatasetSpec spec = c.dataset;
  spec.n = c.target_size;
  spec.seed = mix_seed(seed, kTargetData);
  const Dataset target = make_dataset(spec);
  const std::uint64_t order = mix_seed(seed, kStreamOrder);
  const std::size_t bs = c.adapt.batch_size;
  if (c.stream.mode == StreamMode::gradual) {
    GradualSpec g;
    g.kind = cond.kind;
    g.severities = c.stream.gradual_severities;
    g.batches_per_stage = c.stream.batches_per_stage;
    g.post_eval_batches = c.stream.post_eval_batches;
    return gradual_stream(target, g, bs, order);
  }
  const Dataset shifted =
      corrupt(target, {cond.kind, cond.severity},
              mix_seed(seed, kCorruption + static_cast<std::uint64_t>(cond.kind)));
  std::vector<StreamBatch> batches =
      cond.delta ? dirichlet_stream(shifted, *cond.delta, bs, c.stream.num_batches, order)
                 : iid_stream(shifted, bs, c.stream.num_batches, order);
  const std::string tag = std::to_string(cond.severity);
  for (auto& b : batches) {
    b.stage = tag;
    b.severity = cond.severity;
  }
  return batches;
}

namespace {

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t threads) {
  validate(config);
  ExperimentResult result;
  result.config = config;
  result.arms = resolve_arms(config);
  result.conditions = conditions(config);

  std::vector<std::optional<SourceSetup>> sources(config.seeds.size());
  parallel_for(config.seeds.size(), threads,
               [&](std::size_t i) { sources[i] = prepare_source(config, config.seeds[i]); });

  for (std::size_t a = 0; a < result.arms.size(); ++a)
    for (std::size_t k = 0; k < result.conditions.size(); ++k)
      for (auto seed : config.seeds) result.cells.push_back({a, k, seed, {}, {}});

  parallel_for(result.cells.size(), threads, [&](std::size_t i) {
    CellResult& cell = result.cells[i];
    const std::size_t si = static_cast<std::size_t>(
        std::find(config.seeds.begin(), config.seeds.end(), cell.seed) - config.seeds.begin());
    const Arm& arm_cfg = result.arms[cell.arm];
    try {
      const SourceSetup& src = *sources[si];
      AdaptConfig ac = arm_cfg.adapt;
      ac.batch_size = config.adapt.batch_size;
      ac.seed = mix_seed(mix_seed(cell.seed, kEngine), arm_cfg.adapt.seed);
      Engine engine(src.model, build_buffer(config, arm_cfg.buffer, src, cell.seed), ac);
      const auto batches = build_stream(config, result.conditions[cell.condition], cell.seed);
      for (const auto& b : batches) cell.records.push_back(engine.step(b));
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Summaries

CellSummary summarize_cell(const std::vector<RunRecord>& records) {
  CellSummary s;
  std::vector<const RunRecord*> adapted, frozen;
  for (const auto& r : records) (r.frozen ? frozen : adapted).push_back(&r);
  const std::size_t n = adapted.size();
  s.batches = n;
  if (n > 0) {
    double acc = 0.0;
    for (const auto* r : adapted) acc += r->accuracy;
    s.acc = 100.0 * acc / static_cast<double>(n);
    const std::size_t tail = std::min<std::size_t>(10, n);
    double last = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) last += adapted[i]->accuracy;
    s.acc_last10 = 100.0 * last / static_cast<double>(tail);
    s.ece_first = 100.0 * adapted.front()->ece_running;
    s.ece_final = 100.0 * adapted.back()->ece_running;
    s.energy_first = adapted.front()->mean_energy_target;
    s.energy_last = adapted.back()->mean_energy_target;
    s.conf_first = adapted.front()->mean_confidence;
    s.conf_last = adapted.back()->mean_confidence;
    if (n >= 2) {
      std::vector<double> idx, conf;
      for (std::size_t i = 0; i < n; ++i) {
        idx.push_back(static_cast<double>(i));
        conf.push_back(adapted[i]->mean_confidence);
      }
      s.conf_spearman = spearman(idx, conf);
    }
    s.weight_first = adapted.front()->mean_weight;
    s.weight_last = adapted.back()->mean_weight;
    s.forward_per_batch =
        static_cast<double>(adapted.back()->cost.forward) / static_cast<double>(n);
    s.backward_per_batch =
        static_cast<double>(adapted.back()->cost.backward) / static_cast<double>(n);
  }
  if (!frozen.empty()) {
    double post = 0.0, ref = 0.0;
    for (const auto* r : frozen) {
      post += r->accuracy;
      ref += r->reference_accuracy.value_or(0.0);
    }
    s.post_acc = 100.0 * post / static_cast<double>(frozen.size());
    s.ref_acc = 100.0 * ref / static_cast<double>(frozen.size());
  }
  return s;
}

namespace {

struct Aggregate {
  std::size_t seeds = 0;
  std::size_t failed = 0;
  std::map<std::string, std::vector<double>> values;

  void add(const std::string& key, double v) { values[key].push_back(v); }
  void add(const std::string& key, const std::optional<double>& v) {
    if (v) values[key].push_back(*v);
  }
  std::optional<double> mean(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end() || it->second.empty()) return std::nullopt;
    double s = 0.0;
    for (double v : it->second) s += v;
    return s / static_cast<double>(it->second.size());
  }
  std::optional<double> stddev(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end() || it->second.size() < 2) return std::nullopt;
    const double m = *mean(key);
    double ss = 0.0;
    for (double v : it->second) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(it->second.size() - 1));
  }
};

const char* kSummaryColumns[] = {"acc",          "acc_last10",   "ece_first",     "ece_final",
                                 "energy_first", "energy_last",  "energy_delta",  "conf_first",
                                 "conf_last",    "conf_spearman", "weight_first", "weight_last",
                                 "fwd_per_batch", "bwd_per_batch", "post_acc",    "ref_acc"};

Aggregate aggregate_cells(const ExperimentResult& r, std::size_t arm, std::size_t cond) {
  Aggregate agg;
  for (const auto& c : r.cells) {
    if (c.arm != arm || c.condition != cond) continue;
    if (!c.error.empty()) {
      ++agg.failed;
      continue;
    }
    ++agg.seeds;
    const CellSummary s = summarize_cell(c.records);
    agg.add("acc", s.acc);
    agg.add("acc_last10", s.acc_last10);
    agg.add("ece_first", s.ece_first);
    agg.add("ece_final", s.ece_final);
    agg.add("energy_first", s.energy_first);
    agg.add("energy_last", s.energy_last);
    agg.add("energy_delta", s.energy_last - s.energy_first);
    agg.add("conf_first", s.conf_first);
    agg.add("conf_last", s.conf_last);
    agg.add("conf_spearman", s.conf_spearman);
    agg.add("weight_first", s.weight_first);
    agg.add("weight_last", s.weight_last);
    agg.add("fwd_per_batch", s.forward_per_batch);
    agg.add("bwd_per_batch", s.backward_per_batch);
    agg.add("post_acc", s.post_acc);
    agg.add("ref_acc", s.ref_acc);
  }
  return agg;
}

std::optional<std::size_t> base_arm(const ExperimentResult& r) {
  for (std::size_t a = 0; a < r.arms.size(); ++a)
    if (r.arms[a].adapt.loss == LossVariant::source) return a;
  return std::nullopt;
}

}  // namespace

std::string summary_tsv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "arm\tcondition\tseeds\tfailed\tacc_std";
  for (const char* col : kSummaryColumns) out << '\t' << col;
  out << "\tmce\n";

  const auto base = base_arm(r);
  const std::size_t nc = r.conditions.size();
  std::vector<std::vector<Aggregate>> aggs(r.arms.size());
  for (std::size_t a = 0; a < r.arms.size(); ++a)
    for (std::size_t k = 0; k < nc; ++k) aggs[a].push_back(aggregate_cells(r, a, k));

  auto error_rate = [&](std::size_t a, std::size_t k) -> std::optional<double> {
    auto acc = aggs[a][k].mean("acc");
    if (!acc) return std::nullopt;
    return 1.0 - *acc / 100.0;
  };

  for (std::size_t a = 0; a < r.arms.size(); ++a) {
    Aggregate all;
    for (std::size_t k = 0; k < nc; ++k) {
      const Aggregate& g = aggs[a][k];
      all.seeds += g.seeds;
      all.failed += g.failed;
      out << r.arms[a].name << '\t' << r.conditions[k].label() << '\t' << g.seeds << '\t'
          << g.failed << '\t' << format_optional(g.stddev("acc"));
      for (const char* col : kSummaryColumns) {
        const auto m = g.mean(col);
        out << '\t' << format_optional(m);
        if (m) all.add(col, *m);
      }
      std::optional<double> cell_mce;
      if (base) {
        const auto f = error_rate(a, k), f0 = error_rate(*base, k);
        if (f && f0 && *f0 > 0.0) cell_mce = 100.0 * *f / *f0;
      }
      out << '\t' << format_optional(cell_mce) << '\n';
    }

    // Mean over conditions, and mCE grouped by corruption kind.
    std::optional<double> arm_mce;
    if (base) {
      CorruptionErrorTable table;
      std::map<int, std::size_t> row_of;
      bool complete = true;
      for (std::size_t k = 0; k < nc; ++k) {
        const int kind = static_cast<int>(r.conditions[k].kind);
        if (!row_of.count(kind)) {
          row_of[kind] = table.model_error.size();
          table.model_error.emplace_back();
          table.base_error.emplace_back();
        }
        const auto f = error_rate(a, k), f0 = error_rate(*base, k);
        if (!f || !f0) {
          complete = false;
          break;
        }
        table.model_error[row_of[kind]].push_back(*f);
        table.base_error[row_of[kind]].push_back(*f0);
      }
      if (complete) {
        try {
          arm_mce = mce(table);
        } catch (const std::invalid_argument&) {
          arm_mce.reset();
        }
      }
    }
    out << r.arms[a].name << "\tALL\t" << all.seeds << '\t' << all.failed << '\t'
        << format_optional(all.stddev("acc"));
    for (const char* col : kSummaryColumns) out << '\t' << format_optional(all.mean(col));
    out << '\t' << format_optional(arm_mce) << '\n';
  }
  return out.str();
}

std::vector<std::string> plot_metrics() {
  return {"accuracy", "confidence", "entropy", "energy_target", "ece_running"};
}

namespace {

std::optional<double> plot_value(const RunRecord& rec, const std::string& metric) {
  if (metric == "accuracy") return rec.accuracy;
  if (metric == "confidence") return rec.mean_confidence;
  if (metric == "entropy") return rec.mean_entropy;
  if (metric == "energy_target") return rec.mean_energy_target;
  if (metric == "ece_running") return rec.ece_running;
  if (metric == "loss") return rec.loss;
  if (metric == "mean_weight") return rec.mean_weight;
  if (metric == "energy_source") return rec.mean_energy_source;
  throw std::invalid_argument("unknown plot metric '" + metric + "'");
}

}  // namespace

std::string plot_tsv(const ExperimentResult& r, const std::vector<std::string>& metrics) {
  RunRecord probe;
  for (const auto& m : metrics) plot_value(probe, m);
  std::ostringstream out;
  out << "method\tcondition\tseed\tbatch\tmetric\tvalue\n";
  for (const auto& c : r.cells) {
    if (!c.error.empty()) continue;
    for (const auto& rec : c.records) {
      for (const auto& m : metrics) {
        const auto v = plot_value(rec, m);
        char buf[64];
        if (v)
          std::snprintf(buf, sizeof buf, "%.17g", *v);
        else
          std::snprintf(buf, sizeof buf, "NA");
        out << r.arms[c.arm].name << '\t' << r.conditions[c.condition].label() << '\t'
            << c.seed << '\t' << rec.batch << '\t' << m << '\t' << buf << '\n';
      }
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

fs::path cell_dir(const fs::path& dir, const ExperimentResult& r, const CellResult& c) {
  return dir / r.arms[c.arm].name / r.conditions[c.condition].label();
}

std::string environment_json(const ExperimentResult& r) {
  json j = {{"format_version", kConfigFormatVersion},
            {"library_version", "0.1.0"},
            {"experiment", to_string(r.config.kind)},
            {"seeds", r.config.seeds},
            {"cells", r.cells.size()}};
  return j.dump(2) + "\n";
}

}  // namespace

void write_results(const ExperimentResult& r, const std::string& root, bool overwrite) {
  const fs::path dir = fs::path(root) / r.config.name;
  if (fs::exists(dir)) {
    if (!overwrite)
      throw ConfigError("output directory '" + dir.string() +
                        "' already exists (use --overwrite to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_text_file((dir / "config.json").string(), config_to_json(r.config));
  write_text_file((dir / "environment.json").string(), environment_json(r));
  for (const auto& c : r.cells) {
    const fs::path cd = cell_dir(dir, r, c);
    fs::create_directories(cd);
    std::string log;
    for (const auto& rec : c.records) log += record_to_json_line(rec) + "\n";
    const std::string stem = "seed" + std::to_string(c.seed);
    write_text_file((cd / (stem + ".log")).string(), log);
    if (!c.error.empty()) write_text_file((cd / (stem + ".error")).string(), c.error + "\n");
  }
  write_text_file((dir / "summary.tsv").string(), summary_tsv(r));
  write_text_file((dir / "plot.tsv").string(), plot_tsv(r));
}

bool verify_results(const std::string& dir_text, std::string& report) {
  const fs::path dir(dir_text);
  ExperimentResult r;
  try {
    r.config = parse_config(read_text_file((dir / "config.json").string()));
    r.arms = resolve_arms(r.config);
    r.conditions = conditions(r.config);
    for (std::size_t a = 0; a < r.arms.size(); ++a)
      for (std::size_t k = 0; k < r.conditions.size(); ++k)
        for (auto seed : r.config.seeds) {
          CellResult c{a, k, seed, {}, {}};
          const fs::path cd = cell_dir(dir, r, c);
          const std::string stem = "seed" + std::to_string(seed);
          std::istringstream log(read_text_file((cd / (stem + ".log")).string()));
          for (std::string line; std::getline(log, line);)
            if (!line.empty()) c.records.push_back(record_from_json_line(line));
          if (fs::exists(cd / (stem + ".error"))) {
            c.error = read_text_file((cd / (stem + ".error")).string());
            if (c.error.empty()) c.error = "failed";
          }
          r.cells.push_back(std::move(c));
        }
  } catch (const std::exception& e) {
    report = std::string("cannot load results: ") + e.what();
    return false;
  }
  const std::string expected = summary_tsv(r);
  std::string actual;
  try {
    actual = read_text_file((dir / "summary.tsv").string());
  } catch (const std::exception& e) {
    report = e.what();
    return false;
  }
  if (expected != actual) {
    std::istringstream a(actual), e(expected);
    std::string la, le;
    std::size_t line = 0;
    while (true) {
      ++line;
      const bool ga = static_cast<bool>(std::getline(a, la));
      const bool ge = static_cast<bool>(std::getline(e, le));
      if (!ga && !ge) break;
      if (la != le || ga != ge) {
        report = "summary.tsv line " + std::to_string(line) + " differs:\n  file:       " + la +
                 "\n  recomputed: " + le;
        return false;
      }
    }
    report = "summary.tsv differs from the recomputed summary";
    return false;
  }
  report = "summary.tsv matches " + std::to_string(r.cells.size()) + " raw cell logs";
  return true;
}

std::string default_output_root() {
  const char* env = std::getenv("CRETTA_OUT");
  return env && *env ? env : "results";
}

}  // namespace cretta

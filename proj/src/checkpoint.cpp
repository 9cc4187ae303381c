#include "cretta/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace cretta {

namespace io {

json architecture_to_json(const Architecture& arch) {
  return {{"input_dim", arch.input_dim},
          {"hidden", arch.hidden},
          {"num_classes", arch.num_classes},
          {"bn_epsilon", arch.bn_epsilon},
          {"bn_momentum", arch.bn_momentum}};
}

Architecture architecture_from_json(const json& j) {
  Architecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.bn_epsilon = j.at("bn_epsilon").get<double>();
  a.bn_momentum = j.at("bn_momentum").get<double>();
  return a;
}

json model_to_json(const Classifier& model) {
  json params = json::object();
  for (std::size_t i = 0; i < model.parameter_count(); ++i) {
    auto v = model.parameter_values(i);
    params[model.parameter_names()[i]] = std::vector<double>(v.begin(), v.end());
  }
  json stats = json::array();
  for (const auto& s : model.bn_stats())
    stats.push_back({{"running_mean", s.running_mean}, {"running_var", s.running_var}});
  return {{"version", kCheckpointVersion},
          {"kind", "classifier"},
          {"architecture", architecture_to_json(model.architecture())},
          {"role", to_string(model.role())},
          {"seed", model.seed()},
          {"parameters", params},
          {"bn_stats", stats}};
}

Classifier model_from_json(const json& j) {
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw CheckpointError("model checkpoint version " + j.at("version").dump() +
                          " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const Architecture arch = architecture_from_json(j.at("architecture"));
  const std::string role_text = j.at("role").get<std::string>();
  if (role_text != "source" && role_text != "target")
    throw CheckpointError("unknown model role '" + role_text + "'");
  const Role role = role_text == "source" ? Role::source : Role::target;

  // Parameter order comes from a freshly built model with this architecture.
  const Classifier layout = Classifier::initialize(arch, 0);
  std::vector<std::vector<double>> values;
  const auto& params = j.at("parameters");
  if (params.size() != layout.parameter_count())
    throw CheckpointError("model checkpoint has the wrong number of parameters");
  for (const auto& name : layout.parameter_names())
    values.push_back(params.at(name).get<std::vector<double>>());
  std::vector<BatchNormStats> stats;
  for (const auto& s : j.at("bn_stats"))
    stats.push_back({s.at("running_mean").get<std::vector<double>>(),
                     s.at("running_var").get<std::vector<double>>()});
  return Classifier::from_parts(arch, role, j.at("seed").get<std::uint64_t>(),
                                std::move(values), std::move(stats));
}

json adam_to_json(const AdamState& s) {
  return {{"lr", s.lr},     {"beta1", s.beta1}, {"beta2", s.beta2},
          {"epsilon", s.epsilon}, {"step_count", s.step_count},
          {"m", s.m},       {"v", s.v}};
}

AdamState adam_from_json(const json& j) {
  AdamState s;
  s.lr = j.at("lr").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.step_count = j.at("step_count").get<std::uint64_t>();
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  if (s.m.size() != s.v.size()) throw CheckpointError("Adam moments differ in size");
  return s;
}

}  // namespace io

std::string model_to_json(const Classifier& model) {
  return io::model_to_json(model).dump();
}

Classifier model_from_json(const std::string& text) {
  try {
    return io::model_from_json(io::json::parse(text));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid model checkpoint: ") + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void save_model(const Classifier& model, const std::string& path) {
  write_text_file(path, model_to_json(model));
}

Classifier load_model(const std::string& path) {
  return model_from_json(read_text_file(path));
}

}  // namespace cretta

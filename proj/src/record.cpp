#include "cretta/record.hpp"

#include "json.hpp"

namespace cretta {

using nlohmann::json;

namespace {

json optional_value(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> read_optional(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::string record_to_json_line(const RunRecord& r) {
  json j;
  j["batch"] = r.batch;
  j["stage"] = r.stage;
  j["frozen"] = r.frozen;
  j["batch_size"] = r.batch_size;
  j["correct"] = r.correct;
  j["accuracy"] = r.accuracy;
  j["mean_confidence"] = r.mean_confidence;
  j["mean_entropy"] = r.mean_entropy;
  j["loss"] = optional_value(r.loss);
  j["mean_weight"] = optional_value(r.mean_weight);
  j["mean_energy_target"] = r.mean_energy_target;
  j["mean_energy_source"] = optional_value(r.mean_energy_source);
  j["mean_phi_energy_target"] = optional_value(r.mean_phi_energy_target);
  j["reference_accuracy"] = optional_value(r.reference_accuracy);
  j["retained"] = r.retained;
  j["substitutions"] = r.substitutions;
  j["ece_running"] = r.ece_running;
  j["ece_count"] = r.ece_count;
  j["ece_confidence"] = r.ece_confidence;
  j["ece_correct"] = r.ece_correct;
  j["grad_check"] = optional_value(r.grad_check);
  j["cost"] = {{"forward", r.cost.forward},
               {"backward", r.cost.backward},
               {"updates", r.cost.updates},
               {"precompute_forward", r.cost.precompute_forward}};
  return j.dump();
}

RunRecord record_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  RunRecord r;
  r.batch = j.at("batch").get<std::size_t>();
  r.stage = j.at("stage").get<std::string>();
  r.frozen = j.at("frozen").get<bool>();
  r.batch_size = j.at("batch_size").get<std::size_t>();
  r.correct = j.at("correct").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.mean_confidence = j.at("mean_confidence").get<double>();
  r.mean_entropy = j.at("mean_entropy").get<double>();
  r.loss = read_optional(j, "loss");
  r.mean_weight = read_optional(j, "mean_weight");
  r.mean_energy_target = j.at("mean_energy_target").get<double>();
  r.mean_energy_source = read_optional(j, "mean_energy_source");
  r.mean_phi_energy_target = read_optional(j, "mean_phi_energy_target");
  r.reference_accuracy = read_optional(j, "reference_accuracy");
  r.retained = j.at("retained").get<std::size_t>();
  r.substitutions = j.at("substitutions").get<std::size_t>();
  r.ece_running = j.at("ece_running").get<double>();
  r.ece_count = j.at("ece_count").get<std::vector<std::uint64_t>>();
  r.ece_confidence = j.at("ece_confidence").get<std::vector<double>>();
  r.ece_correct = j.at("ece_correct").get<std::vector<std::uint64_t>>();
  r.grad_check = read_optional(j, "grad_check");
  const auto& c = j.at("cost");
  r.cost.forward = c.at("forward").get<std::uint64_t>();
  r.cost.backward = c.at("backward").get<std::uint64_t>();
  r.cost.updates = c.at("updates").get<std::uint64_t>();
  r.cost.precompute_forward = c.at("precompute_forward").get<std::uint64_t>();
  return r;
}

}  // namespace cretta

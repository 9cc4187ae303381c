#pragma once

#include <stdexcept>
#include <string>

#include "cretta/model.hpp"

namespace cretta {

/// Raised for unreadable, malformed, or version-mismatched checkpoint data.
/// Loading never leaves partially restored state behind.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Self-describing JSON: architecture, role, seed, parameters, BN statistics.
std::string model_to_json(const Classifier& model);
Classifier model_from_json(const std::string& text);

void save_model(const Classifier& model, const std::string& path);
Classifier load_model(const std::string& path);

/// Whole-file read/write helpers shared by checkpoint users.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cretta

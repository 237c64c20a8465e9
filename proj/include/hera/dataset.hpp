#pragma once

#include <string>
#include <vector>

#include "hera/common.hpp"

namespace hera {

enum class Stage { kIL, kRL };

inline std::string_view to_string(Stage s) { return s == Stage::kIL ? "IL" : "RL"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "IL") return Stage::kIL;
  if (s == "RL") return Stage::kRL;
  throw DataError("unknown stage tag '" + std::string(s) + "'");
}

// One supervision example for the router. IL examples point back at a
// (trajectory, step); RL examples point at the state group they summarize.
struct LabeledStep {
  std::string task_id;
  std::string canonical_key;
  std::vector<double> features;
  int label = 0;
  Stage stage = Stage::kIL;
  std::string source;   // trajectory id (IL) or group key (RL)
  int step_index = 0;   // 1-based step within the trajectory; 0 for groups

  bool operator==(const LabeledStep&) const = default;
};

}  // namespace hera

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/eval.hpp"

namespace poisonlab {

// Everything a CLI invocation needs, resolved from JSON (overlaid on the
// defaults) plus flag overrides. validate() is fail-fast: it checks every
// nested object and every grid cell before any work starts.
struct ExperimentConfig {
  ExperimentSetup setup;
  // Used by the direct poison/train subcommands; the run grid derives its
  // plans from scenario presets instead.
  Selection selection = Selection::DirtyLabel;
  Composition composition = Composition::Replace;
  std::vector<Scenario> scenarios;
  std::vector<Trick> tricks;
  std::vector<std::uint64_t> master_seeds;
  std::string output_dir = "out";

  void validate() const;
};

// The calibrated baseline experiment: a separable 2-class synthetic corpus
// and a rare-word trigger.
ExperimentConfig default_config();

// Strict JSON parsing: unknown keys anywhere are an error; present keys
// overlay the defaults. Lists replace their default wholesale.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Fully resolved, round-trippable form (pretty-printed JSON).
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace poisonlab

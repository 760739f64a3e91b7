#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "numerla/belief.hpp"
#include "numerla/cola.hpp"
#include "numerla/env.hpp"
#include "numerla/harness.hpp"
#include "numerla/policy.hpp"
#include "numerla/ssc.hpp"

namespace numerla::config {

// Everything the CLI subcommands read, parsed from one JSON file with
// per-section defaults. Dotted key=value overrides win over file values.
struct FileConfig {
  env::SimConfig sim;
  std::vector<env::Mode> modes;
  std::vector<double> rho_z;
  std::vector<std::vector<double>> p_z;

  policy::TrainConfig train;
  std::vector<double> train_gaps{15, 25, 35};

  cola::BankConfig bank;

  // shield section
  ssc::SafetyAssessor assessor;
  int shield_m_eval = 200;
  uint64_t shield_seed = 3;
  std::vector<env::Mode> shield_new_modes;  // empty: baseline knowledge only

  harness::ExperimentConfig run;

  int belief_window = 5;

  belief::ModeTransitionModel belief_model() const;
  policy::TrainSetup train_setup() const;
  void validate() const;
};

FileConfig default_config();

// Parses `text` (JSON) into a FileConfig; unknown keys are a ConfigError so
// typos do not silently fall back to defaults.
FileConfig parse_config(const std::string& text,
                        const std::vector<std::string>& overrides = {});

FileConfig load_config(const std::string& path,
                       const std::vector<std::string>& overrides = {});

std::string default_config_json();

}  // namespace numerla::config

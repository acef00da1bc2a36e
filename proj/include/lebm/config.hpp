#pragma once

// Run configuration: an INI file with one section per module.
//
//   [data] [model] [sampler] [trainer] [eval] [output]
//
// Unknown sections or keys are rejected. Environment variables of the form
// LEBM_<SECTION>_<KEY> override file values, e.g. LEBM_TRAINER_ITERATIONS=500.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lebm/nets.hpp"
#include "lebm/trainer.hpp"

namespace lebm {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv | unigram
  std::string kind = "two_moons";
  std::size_t n_unlabeled = 1000;
  std::size_t n_labeled = 10;  // 0 keeps the labels present in the file
  std::size_t n_test = 1000;
  double noise = 0.1;
  int components = 8;
  std::string train_path;
  std::string test_path;
  std::string vocab_path;
  std::string train_labels_path;
  std::string test_labels_path;
  std::string label_column = "label";
  int num_classes = 0;  // inferred for synthetic data
  std::vector<std::string> class_names;
  bool standardize = true;
  double validation_fraction = 0.1;
};

struct EvalConfig {
  int n_mc = 100;
  std::int64_t interval = 100;
};

struct OutputConfig {
  std::string dir = "run";
  std::int64_t checkpoint_interval = 1000;
  bool record_wallclock = true;
};

struct RunConfig {
  DataConfig data;
  ModelSpec model;  // data_dim and num_classes are filled from the dataset
  TrainConfig trainer;
  EvalConfig eval;
  OutputConfig output;
};

/// Parses INI text; `origin` names the source in error messages.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
/// Applies LEBM_<SECTION>_<KEY> variables from `env` (name -> value).
void apply_overrides(RunConfig& config, const std::map<std::string, std::string>& env);
/// LEBM_* entries of the process environment.
std::map<std::string, std::string> environment_overrides();

/// Every key, shortest round-trip formatting for floats.
std::string to_ini(const RunConfig& config);

/// Sets one key by "section.key"; ConfigError for unknown keys or bad values.
void set_value(RunConfig& config, const std::string& dotted_key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace lebm

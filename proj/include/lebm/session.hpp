#pragma once

// A training run as the command-line tool sees it: dataset preparation from a
// RunConfig, the iteration loop with periodic metrics and checkpoints, and the
// files left in the run directory.
//
//   config.ini      every key, resolved
//   manifest.json   seed, build version, compiler
//   metrics.csv     one row per eval interval
//   checkpoints/    ckpt_<iteration>.bin every checkpoint interval
//   checkpoint.bin  final state
//   report.json     final test accuracy, when a test set exists

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lebm/checkpoint.hpp"
#include "lebm/config.hpp"
#include "lebm/data.hpp"
#include "lebm/trainer.hpp"

namespace lebm {

struct PreparedData {
  SSLDataset train;  // Train and Validation splits
  Matrix test_x;
  std::vector<int> test_y;
};

/// Builds the training and test data named by config.data. When `fitted` is
/// given, it replaces the standardization fitted on the Train rows.
PreparedData prepare_data(const RunConfig& config, const std::optional<Standardization>& fitted = std::nullopt);

/// Copies dataset dims into config.model and caps the labeled batch at the
/// number of labeled rows.
RunConfig resolve_config(RunConfig config, const PreparedData& data);

struct MetricsRow {
  std::int64_t iter = 0;
  double elbo_est = 0.0;
  double recon = 0.0;
  double kl_q_p0 = 0.0;
  double f_alpha_mean = 0.0;
  double chain_energy_mean = 0.0;
  double lab_acc = 0.0;
  std::optional<double> val_acc;
  double wallclock_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "iter,elbo_est,recon,kl_q_p0,f_alpha_mean,chain_energy_mean,lab_acc,val_acc,wallclock_s";
std::string to_csv_line(const MetricsRow& row);

struct TrainOutcome {
  Snapshot snapshot;
  std::vector<MetricsRow> metrics;
  std::optional<double> test_accuracy;
};

/// Test hook run after every iteration; may mutate the state.
using IterationHook = std::function<void(TrainState&)>;

/// Trains config.trainer.iterations total iterations, continuing from `resume`
/// when given. An empty out_dir writes nothing to disk.
TrainOutcome run_training(const RunConfig& config, const std::string& out_dir,
                          const std::optional<Snapshot>& resume = std::nullopt, const IterationHook& hook = {});

struct ClassAccuracy {
  int label = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t count = 0;
  int n_mc = 0;
  std::uint64_t seed = 0;
  std::vector<ClassAccuracy> per_class;
  std::vector<int> predictions;
};

/// classify + accuracy on (x, y); InvalidInput when the set is empty.
EvalReport evaluate(const Model& model, const Matrix& x, const std::vector<int>& y, int n_mc, std::uint64_t seed);
std::string to_json(const EvalReport& report, std::int64_t iteration);

std::string build_version();

}  // namespace lebm

#pragma once

// Subcommands of the lebm tool. Each returns the process exit code:
//   0 success, 1 a diagnostic check failed, 2 bad config or input,
//   3 training blew up (non-finite beyond the retry budget),
//   4 checkpoint format version mismatch.

#include <cstdint>
#include <optional>
#include <string>

namespace lebm::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kInputError = 2, kBlowUp = 3, kVersionMismatch = 4 };

struct CommonOptions {
  std::optional<std::string> config;
  std::optional<std::string> checkpoint;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> n_mc;
};

struct SampleOptions {
  std::size_t count = 1000;
  int steps = 100;
  double step_size = 0.1;
};

enum class Fault { None, Gradient };

int cmd_train(const CommonOptions& opts);
int cmd_eval(const CommonOptions& opts, const std::optional<std::string>& data_csv);
int cmd_sample(const CommonOptions& opts, const SampleOptions& sample);
int cmd_diagnose(const CommonOptions& opts, Fault fault = Fault::None);

/// Parses argv and dispatches; never throws.
int run(int argc, char** argv);

}  // namespace lebm::cli

#include "commands.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "lebm/checkpoint.hpp"
#include "lebm/config.hpp"
#include "lebm/diagnostics.hpp"
#include "lebm/error.hpp"
#include "lebm/sampler.hpp"
#include "lebm/session.hpp"
#include "lebm/svg.hpp"

namespace lebm::cli {
namespace fs = std::filesystem;

namespace {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::CheckpointVersion: return kVersionMismatch;
    case ErrorCode::NonFiniteGradient: return kBlowUp;
    default: return kInputError;
  }
}

/// Runs a command body and turns library errors into exit codes.
template <typename Body>
int guarded(const char* name, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    spdlog::error("{}: [{}] {}", name, to_string(e.code()), e.what());
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}: {}", name, e.what());
    return kInputError;
  }
}

void apply_flags(RunConfig& config, const CommonOptions& opts) {
  apply_overrides(config, environment_overrides());
  if (opts.seed) config.trainer.seed = *opts.seed;
  if (opts.threads) config.trainer.threads = *opts.threads;
  if (opts.n_mc) config.eval.n_mc = *opts.n_mc;
  if (opts.out) config.output.dir = *opts.out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
}

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

int cmd_train(const CommonOptions& opts) {
  return guarded("train", [&] {
    std::optional<Snapshot> resume;
    if (opts.checkpoint) resume = load_snapshot(*opts.checkpoint);
    RunConfig config;
    if (opts.config) {
      config = load_config(*opts.config);
    } else if (resume) {
      config = resume->config;
    } else {
      throw Error(ErrorCode::ConfigError, "train needs --config or --checkpoint");
    }
    apply_flags(config, opts);
    const TrainOutcome out = run_training(config, config.output.dir, resume);
    std::cout << "iterations " << out.snapshot.state.iteration << "\n";
    if (out.test_accuracy) std::cout << "test_accuracy " << *out.test_accuracy << "\n";
    std::cout << "output " << config.output.dir << "\n";
    return int{kOk};
  });
}

int cmd_eval(const CommonOptions& opts, const std::optional<std::string>& data_csv) {
  return guarded("eval", [&] {
    if (!opts.checkpoint) throw Error(ErrorCode::ConfigError, "eval needs --checkpoint");
    const Snapshot snap = load_snapshot(*opts.checkpoint);
    RunConfig config = snap.config;
    if (opts.config) config.data = load_config(*opts.config).data;
    apply_flags(config, opts);

    Matrix x;
    std::vector<int> y;
    if (data_csv) {
      if (!fs::exists(*data_csv)) throw Error(ErrorCode::Io, "dataset file not found: '" + *data_csv + "'");
      CsvSchema schema{config.data.label_column, config.model.num_classes, config.data.class_names, false};
      const SSLDataset ds = load_csv(*data_csv, schema);
      x = snap.standardization ? apply_standardization(ds.features(), *snap.standardization) : ds.features();
      for (std::size_t i = 0; i < ds.size(); ++i) y.push_back(ds.class_of(i));
    } else {
      const PreparedData data = prepare_data(config, snap.standardization);
      x = data.test_x;
      y = data.test_y;
    }
    const EvalReport report = evaluate(snap.state.model, x, y, config.eval.n_mc, config.trainer.seed);
    std::cout << fmt::format("accuracy {:.6f} ({} examples, n_mc {})\n", report.accuracy, report.count, report.n_mc);
    for (const ClassAccuracy& c : report.per_class)
      std::cout << fmt::format("class {} accuracy {:.6f} ({} examples)\n", c.label, c.accuracy, c.count);

    fs::path target = opts.out ? fs::path(*opts.out) : fs::path(*opts.checkpoint).parent_path();
    if (target.extension() != ".json") target /= "eval_report.json";
    write_file(target, to_json(report, snap.state.iteration));
    std::cout << "report " << target.string() << "\n";
    return int{kOk};
  });
}

int cmd_sample(const CommonOptions& opts, const SampleOptions& sample) {
  return guarded("sample", [&] {
    if (!opts.checkpoint) throw Error(ErrorCode::ConfigError, "sample needs --checkpoint");
    if (sample.steps < 1) throw Error(ErrorCode::InvalidInput, "--steps must be >= 1");
    if (!(sample.step_size > 0.0)) throw Error(ErrorCode::InvalidInput, "--step-size must be > 0");
    const Snapshot snap = load_snapshot(*opts.checkpoint);
    RunConfig config = snap.config;
    apply_flags(config, opts);
    const Model& model = snap.state.model;
    const int dim = model.spec.data_dim;

    Matrix x(0, dim);
    std::vector<int> classes;
    if (sample.count > 0) {
      LongRunConfig lr;
      lr.chains = sample.count;
      lr.burn_in = sample.steps - 1;
      lr.samples_per_chain = 1;
      lr.thin = 1;
      lr.step_size = sample.step_size;
      lr.seed = config.trainer.seed;
      lr.threads = config.trainer.threads;
      const Matrix z = sample_prior_long_run(model.prior, lr);
      x = decode_mean(model.decoder, z);
      if (snap.standardization && model.spec.decoder == DecoderKind::Gaussian)
        x = ((x.array().rowwise() * snap.standardization->std.transpose().array()).rowwise() +
             snap.standardization->mean.transpose().array())
                .matrix();
      const Matrix post = class_posterior(model.prior, z);
      for (Eigen::Index i = 0; i < post.rows(); ++i) {
        Eigen::Index k = 0;
        post.row(i).maxCoeff(&k);
        classes.push_back(static_cast<int>(k));
      }
    }

    const fs::path dir = opts.out ? fs::path(*opts.out) : fs::path(config.output.dir);
    std::string csv;
    for (int j = 0; j < dim; ++j) csv += "x" + std::to_string(j) + ",";
    csv += "class\n";
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < dim; ++j) csv += shortest(x(i, j)) + ",";
      csv += std::to_string(classes[static_cast<std::size_t>(i)]) + "\n";
    }
    write_file(dir / "samples.csv", csv);
    if (dim == 2) write_file(dir / "samples.svg", scatter_svg(x, classes, "prior samples decoded"));
    std::cout << "wrote " << x.rows() << " samples to " << (dir / "samples.csv").string() << "\n";
    return int{kOk};
  });
}

int cmd_diagnose(const CommonOptions& opts, Fault fault) {
  return guarded("diagnose", [&] {
    Model model;
    RunConfig config;
    if (opts.checkpoint) {
      const Snapshot snap = load_snapshot(*opts.checkpoint);
      model = snap.state.model;
      config = snap.config;
      apply_flags(config, opts);
    } else if (opts.config) {
      config = load_config(*opts.config);
      apply_flags(config, opts);
      config = resolve_config(config, prepare_data(config));
      model = Model::create(config.model, config.trainer.seed);
    } else {
      throw Error(ErrorCode::ConfigError, "diagnose needs --checkpoint or --config");
    }
    DiagnosticOptions d;
    d.seed = config.trainer.seed;
    d.threads = config.trainer.threads;
    d.corrupt_gradient = fault == Fault::Gradient;
    const std::vector<DiagnosticRecord> records = run_diagnostics(model, d);
    const std::string lines = to_json_lines(records);
    std::cout << lines;
    if (opts.out) write_file(fs::path(*opts.out) / "diagnostics.jsonl", lines);
    int failed = 0;
    for (const DiagnosticRecord& r : records) {
      if (r.pass) continue;
      ++failed;
      spdlog::error("check {} failed: {:.3e} exceeds tolerance {:.1e}", r.check, r.value, r.tolerance);
    }
    return failed == 0 ? int{kOk} : int{kCheckFailed};
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Semi-supervised learning with a latent-space energy-based prior"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "INI run configuration");
    sub->add_option("--checkpoint", opts.checkpoint, "checkpoint file");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--seed", opts.seed, "overrides trainer.seed");
    sub->add_option("--threads", opts.threads, "worker threads for chain updates");
    sub->add_option("--n-mc", opts.n_mc, "posterior samples per example at evaluation");
  };

  CLI::App* train = app.add_subcommand("train", "train a model; --checkpoint resumes");
  common(train);

  std::optional<std::string> data_csv;
  CLI::App* eval = app.add_subcommand("eval", "classify a labeled test set");
  common(eval);
  eval->add_option("--data", data_csv, "labeled CSV to evaluate instead of the configured test set");

  SampleOptions sample;
  CLI::App* samp = app.add_subcommand("sample", "decode fresh Langevin prior samples");
  common(samp);
  samp->add_option("--count", sample.count, "number of chains")->capture_default_str();
  samp->add_option("--steps", sample.steps, "Langevin steps per chain")->capture_default_str();
  samp->add_option("--step-size", sample.step_size, "Langevin step size s")->capture_default_str();

  std::string fault_name = "none";
  CLI::App* diag = app.add_subcommand("diagnose", "run the gradient, sampler and quadrature checks");
  common(diag);
  diag->add_option("--inject-fault", fault_name, "test hook: none or gradient")
      ->check(CLI::IsMember({"none", "gradient"}))
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? int{kOk} : int{kInputError};
  }

  if (train->parsed()) return cmd_train(opts);
  if (eval->parsed()) return cmd_eval(opts, data_csv);
  if (samp->parsed()) return cmd_sample(opts, sample);
  return cmd_diagnose(opts, fault_name == "gradient" ? Fault::Gradient : Fault::None);
}

}  // namespace lebm::cli

#include "lebm/session.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lebm/error.hpp"
#include "lebm/eval.hpp"
#include "lebm/svg.hpp"

#ifndef LEBM_BUILD_VERSION
#define LEBM_BUILD_VERSION "unknown"
#endif

namespace lebm {
namespace fs = std::filesystem;

namespace {

int synthetic_classes(SyntheticKind kind, int components) {
  switch (kind) {
    case SyntheticKind::TwoMoons: return 2;
    case SyntheticKind::GaussMixture: return components;
    case SyntheticKind::Pinwheel: return 5;
  }
  return 0;
}

std::vector<int> observed_labels(const SSLDataset& ds, const std::string& origin) {
  std::vector<int> y;
  y.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto l = ds.label(i);
    if (!l) throw Error(ErrorCode::InvalidLabel, origin + ": test row " + std::to_string(i) + " has no label");
    y.push_back(*l);
  }
  return y;
}

void require_file(const std::string& path, const std::string& key) {
  if (path.empty()) throw Error(ErrorCode::ConfigError, "data." + key + " is required for this data source");
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "dataset file not found: '" + path + "' (data." + key + ")");
}

std::vector<int> truths(const SSLDataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> y;
  for (std::size_t i : idx) {
    const auto t = ds.truth(i);
    if (!t) return {};
    y.push_back(*t);
  }
  return y;
}

struct Accumulator {
  double elbo = 0.0, recon = 0.0, kl = 0.0, f = 0.0, chain = 0.0;
  int count = 0;

  void add(const StepStats& s) {
    if (s.skipped) return;
    elbo += s.elbo_est;
    recon += s.recon;
    kl += s.kl;
    f += s.f_alpha_mean;
    chain += s.chain_energy_mean;
    ++count;
  }
  double mean(double v) const { return count > 0 ? v / count : std::numeric_limits<double>::quiet_NaN(); }
};

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
}

/// Keeps the header and rows up to `iteration` of an existing metrics file.
std::string truncated_metrics(const fs::path& path, std::int64_t iteration) {
  std::string kept = std::string(kMetricsHeader) + "\n";
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= iteration) kept += line + "\n";
  }
  return kept;
}

void check_resume_compatible(const RunConfig& now, const Snapshot& snap) {
  const ModelSpec& a = now.model;
  const ModelSpec& b = snap.state.model.spec;
  const bool same = a.data_dim == b.data_dim && a.latent_dim == b.latent_dim && a.num_classes == b.num_classes &&
                    a.prior_hidden == b.prior_hidden && a.encoder_hidden == b.encoder_hidden &&
                    a.decoder_hidden == b.decoder_hidden && a.prior_activation == b.prior_activation &&
                    a.net_activation == b.net_activation && a.decoder == b.decoder && a.sigma2 == b.sigma2;
  if (!same) throw Error(ErrorCode::ConfigError, "checkpoint model does not match the [model] section of the config");
  if (now.trainer.seed != snap.config.trainer.seed)
    throw Error(ErrorCode::ConfigError, "checkpoint was trained with seed " + std::to_string(snap.config.trainer.seed));
  if (now.trainer.chains != snap.state.chains.size())
    throw Error(ErrorCode::ConfigError, "checkpoint holds " + std::to_string(snap.state.chains.size()) + " chains");
}

}  // namespace

PreparedData prepare_data(const RunConfig& config, const std::optional<Standardization>& fitted) {
  const DataConfig& dc = config.data;
  const std::uint64_t seed = config.trainer.seed;
  PreparedData out;

  if (dc.source == "synthetic") {
    const SyntheticKind kind = parse_synthetic_kind(dc.kind);
    const int k = synthetic_classes(kind, dc.components);
    if (dc.num_classes != 0 && dc.num_classes != k)
      throw Error(ErrorCode::ConfigError, "data.num_classes disagrees with the synthetic kind (" + std::to_string(k) + ")");
    const std::size_t n_train = dc.n_unlabeled + dc.n_labeled;
    const SSLDataset all = make_synthetic(kind, n_train + dc.n_test, dc.noise, seed, dc.components);
    std::vector<std::size_t> train_idx(n_train), test_idx(dc.n_test);
    for (std::size_t i = 0; i < n_train; ++i) train_idx[i] = i;
    for (std::size_t i = 0; i < dc.n_test; ++i) test_idx[i] = n_train + i;
    const std::vector<int> train_truth = truths(all, train_idx);
    out.train = ssl_split(SSLDataset(all.rows(train_idx), train_truth, k, false, train_truth), dc.n_labeled, seed);
    out.test_x = all.rows(test_idx);
    out.test_y = truths(all, test_idx);
  } else if (dc.source == "csv") {
    require_file(dc.train_path, "train_path");
    CsvSchema schema{dc.label_column, dc.num_classes, dc.class_names, false};
    if (schema.num_classes == 0) schema.num_classes = static_cast<int>(dc.class_names.size());
    out.train = load_csv(dc.train_path, schema);
    if (dc.n_labeled > 0) out.train = ssl_split(out.train, dc.n_labeled, seed);
    if (!dc.test_path.empty()) {
      require_file(dc.test_path, "test_path");
      const SSLDataset test = load_csv(dc.test_path, schema);
      out.test_x = test.features();
      out.test_y = observed_labels(test, dc.test_path);
    }
  } else if (dc.source == "unigram") {
    require_file(dc.train_path, "train_path");
    require_file(dc.vocab_path, "vocab_path");
    if (dc.num_classes < 1) throw Error(ErrorCode::ConfigError, "data.num_classes is required for unigram data");
    if (!dc.train_labels_path.empty()) require_file(dc.train_labels_path, "train_labels_path");
    out.train = load_unigram(dc.train_path, dc.vocab_path, dc.train_labels_path, dc.num_classes);
    if (dc.n_labeled > 0) out.train = ssl_split(out.train, dc.n_labeled, seed);
    if (!dc.test_path.empty()) {
      require_file(dc.test_path, "test_path");
      require_file(dc.test_labels_path, "test_labels_path");
      const SSLDataset test = load_unigram(dc.test_path, dc.vocab_path, dc.test_labels_path, dc.num_classes);
      out.test_x = test.features();
      out.test_y = observed_labels(test, dc.test_path);
    }
  } else {
    throw Error(ErrorCode::ConfigError, "data.source must be synthetic, csv, or unigram (got '" + dc.source + "')");
  }
  if (out.test_x.size() == 0) out.test_x.resize(0, out.train.dim());

  if (dc.validation_fraction > 0.0) out.train = hold_out_validation(out.train, dc.validation_fraction, seed);
  if (!out.train.is_counts() && (dc.standardize || fitted)) {
    out.train = fitted ? apply_standardization(out.train, *fitted) : standardize(out.train);
    if (out.test_x.rows() > 0) out.test_x = apply_standardization(out.test_x, *out.train.standardization());
  }
  return out;
}

RunConfig resolve_config(RunConfig config, const PreparedData& data) {
  config.model.data_dim = data.train.dim();
  config.model.num_classes = data.train.num_classes();
  if (config.data.num_classes == 0 && config.data.source != "synthetic") config.data.num_classes = data.train.num_classes();
  const std::size_t labeled = data.train.labeled_indices(Split::Train).size();
  if (labeled == 0) throw Error(ErrorCode::InsufficientLabels, "the training data has no labeled rows");
  config.trainer.batch_labeled = std::min(config.trainer.batch_labeled, labeled);
  return config;
}

std::string to_csv_line(const MetricsRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", r.iter, fmt_double(r.elbo_est), fmt_double(r.recon),
                     fmt_double(r.kl_q_p0), fmt_double(r.f_alpha_mean), fmt_double(r.chain_energy_mean),
                     fmt_double(r.lab_acc), r.val_acc ? fmt_double(*r.val_acc) : "", fmt_double(r.wallclock_s));
}

EvalReport evaluate(const Model& model, const Matrix& x, const std::vector<int>& y, int n_mc, std::uint64_t seed) {
  if (x.rows() == 0) throw Error(ErrorCode::InvalidInput, "evaluation set is empty");
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw Error(ErrorCode::InvalidShape, "one label per row");
  const Classification c = classify(model.prior, model.posterior, x, n_mc, seed);
  EvalReport r;
  r.accuracy = accuracy(c.labels, y);
  r.count = y.size();
  r.n_mc = n_mc;
  r.seed = seed;
  r.predictions = c.labels;
  for (int k = 0; k < model.spec.num_classes; ++k) {
    ClassAccuracy ca{k, 0, 0.0};
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] != k) continue;
      ++ca.count;
      if (c.labels[i] == k) ++hits;
    }
    ca.accuracy = ca.count > 0 ? static_cast<double>(hits) / static_cast<double>(ca.count) : 0.0;
    r.per_class.push_back(ca);
  }
  return r;
}

std::string to_json(const EvalReport& report, std::int64_t iteration) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const ClassAccuracy& c : report.per_class)
    per_class.push_back({{"label", c.label}, {"count", c.count}, {"accuracy", c.accuracy}});
  const nlohmann::json j = {{"accuracy", report.accuracy}, {"count", report.count},   {"n_mc", report.n_mc},
                            {"seed", report.seed},         {"iteration", iteration}, {"per_class", per_class}};
  return j.dump(2) + "\n";
}

std::string build_version() { return LEBM_BUILD_VERSION; }

TrainOutcome run_training(const RunConfig& requested, const std::string& out_dir,
                          const std::optional<Snapshot>& resume, const IterationHook& hook) {
  const PreparedData data =
      prepare_data(requested, resume ? resume->standardization : std::optional<Standardization>{});
  const RunConfig config = resolve_config(requested, data);
  config.trainer.validate();
  if (config.eval.n_mc < 1) throw Error(ErrorCode::ConfigError, "eval.n_mc must be >= 1");

  TrainState state;
  if (resume) {
    check_resume_compatible(config, *resume);
    state = resume->state;
    state.chains.set_step_size(config.trainer.step_size);
    state.chains.set_steps_per_update(config.trainer.langevin_steps);
  } else {
    state = TrainState::create(Model::create(config.model, config.trainer.seed), config.trainer);
  }

  const SSLDataset& ds = data.train;
  const auto lab_idx = ds.labeled_indices(Split::Train);
  const Matrix x_lab = ds.rows(lab_idx);
  std::vector<int> y_lab;
  for (std::size_t i : lab_idx) y_lab.push_back(ds.class_of(i));
  const auto val_idx = ds.indices(Split::Validation);
  const Matrix x_val = ds.rows(val_idx);
  const std::vector<int> y_val = truths(ds, val_idx);
  const bool have_val = !val_idx.empty() && y_val.size() == val_idx.size();

  const bool write = !out_dir.empty();
  const fs::path dir(out_dir);
  fs::path metrics_path;
  if (write) {
    fs::create_directories(dir / "checkpoints");
    write_text(dir / "config.ini", to_ini(config));
    const nlohmann::json manifest = {{"seed", config.trainer.seed},
                                     {"build_version", build_version()},
                                     {"compiler", __VERSION__},
                                     {"checkpoint_format", kCheckpointVersion},
                                     {"threads", config.trainer.threads},
                                     {"start_iteration", state.iteration}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    metrics_path = dir / "metrics.csv";
    write_text(metrics_path, resume && fs::exists(metrics_path) ? truncated_metrics(metrics_path, state.iteration)
                                                                 : std::string(kMetricsHeader) + "\n");
  }

  auto snapshot = [&] { return Snapshot{config, state, ds.standardization()}; };

  TrainOutcome outcome;
  BatchStream batches(ds, config.trainer.batch_unlabeled, config.trainer.batch_labeled, config.trainer.seed);
  Accumulator acc;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = config.trainer;
  spdlog::info("training from iteration {} to {}", state.iteration, tc.iterations);

  while (state.iteration < tc.iterations) {
    const BatchStream::Batch b = batches.at(state.iteration);
    std::vector<int> y;
    y.reserve(b.labeled.size());
    for (std::size_t i : b.labeled) y.push_back(ds.class_of(i));
    acc.add(train_step(state, tc, ds.rows(b.unlabeled), ds.rows(b.labeled), y));
    if (hook) hook(state);
    const std::int64_t it = state.iteration;

    if (config.eval.interval > 0 && it % config.eval.interval == 0) {
      MetricsRow row;
      row.iter = it;
      row.elbo_est = acc.mean(acc.elbo);
      row.recon = acc.mean(acc.recon);
      row.kl_q_p0 = acc.mean(acc.kl);
      row.f_alpha_mean = acc.mean(acc.f);
      row.chain_energy_mean = acc.mean(acc.chain);
      row.lab_acc = accuracy(classify(state.model.prior, state.model.posterior, x_lab, config.eval.n_mc, tc.seed).labels, y_lab);
      if (have_val)
        row.val_acc = accuracy(classify(state.model.prior, state.model.posterior, x_val, config.eval.n_mc, tc.seed).labels, y_val);
      if (config.output.record_wallclock)
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      acc = Accumulator{};
      spdlog::info("iter {} elbo_est {:.4f} lab_acc {:.3f} val_acc {}", it, row.elbo_est, row.lab_acc,
                   row.val_acc ? fmt::format("{:.3f}", *row.val_acc) : "-");
      if (write) {
        std::ofstream out(metrics_path, std::ios::app);
        out << to_csv_line(row) << "\n";
      }
      outcome.metrics.push_back(row);
    }
    if (write && config.output.checkpoint_interval > 0 && it % config.output.checkpoint_interval == 0)
      save_snapshot((dir / "checkpoints" / fmt::format("ckpt_{:06d}.bin", it)).string(), snapshot());
  }

  outcome.snapshot = snapshot();
  if (data.test_x.rows() > 0) {
    const EvalReport report = evaluate(state.model, data.test_x, data.test_y, config.eval.n_mc, tc.seed);
    outcome.test_accuracy = report.accuracy;
    spdlog::info("test accuracy {:.4f} on {} rows", report.accuracy, report.count);
    if (write) write_text(dir / "report.json", to_json(report, state.iteration));
  }
  if (write) {
    save_snapshot((dir / "checkpoint.bin").string(), outcome.snapshot);
    std::vector<double> x;
    Series lab{"lab_acc", {}}, val{"val_acc", {}};
    for (const MetricsRow& r : outcome.metrics) {
      x.push_back(static_cast<double>(r.iter));
      lab.y.push_back(r.lab_acc);
      val.y.push_back(r.val_acc.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    write_text(dir / "learning_curve.svg", line_chart_svg(x, {lab, val}, "accuracy"));
  }
  return outcome;
}

}  // namespace lebm

#include "lebm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "lebm/error.hpp"

namespace lebm {

SSLDataset::SSLDataset(Matrix features, std::vector<int> labels, int num_classes, bool counts,
                       std::vector<int> truth)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      truth_(std::move(truth)),
      splits_(static_cast<std::size_t>(features_.rows()), Split::Train),
      num_classes_(num_classes),
      counts_(counts) {
  if (num_classes_ < 1) throw Error(ErrorCode::InvalidInput, "dataset needs at least one class");
  if (labels_.size() != size()) throw Error(ErrorCode::InvalidShape, "label count != row count");
  if (!truth_.empty() && truth_.size() != size()) throw Error(ErrorCode::InvalidShape, "truth count != row count");
  for (int l : labels_)
    if (l != kMissing && (l < 0 || l >= num_classes_))
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(l) + " outside [0, K)");
  for (int l : truth_)
    if (l < 0 || l >= num_classes_) throw Error(ErrorCode::InvalidLabel, "truth label outside [0, K)");
  if (!features_.allFinite()) throw Error(ErrorCode::NonFiniteInput, "dataset features must be finite");
}

Matrix SSLDataset::rows(const std::vector<std::size_t>& idx) const {
  Matrix out(static_cast<Eigen::Index>(idx.size()), features_.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

std::optional<int> SSLDataset::label(std::size_t i) const {
  const int l = labels_.at(i);
  if (l == kMissing) return std::nullopt;
  return l;
}

int SSLDataset::class_of(std::size_t i) const {
  const int l = labels_.at(i);
  if (l == kMissing) throw Error(ErrorCode::InvalidLabel, "row " + std::to_string(i) + " has no label");
  return l;
}

void SSLDataset::set_label(std::size_t i, int label) {
  if (label != kMissing && (label < 0 || label >= num_classes_))
    throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " outside [0, K)");
  labels_.at(i) = label;
}

std::optional<int> SSLDataset::truth(std::size_t i) const {
  if (!truth_.empty()) return truth_.at(i);
  return label(i);
}

std::vector<std::size_t> SSLDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (splits_[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> SSLDataset::labeled_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (splits_[i] == s && labels_[i] != kMissing) out.push_back(i);
  return out;
}

std::vector<std::size_t> SSLDataset::unlabeled_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (splits_[i] == s && labels_[i] == kMissing) out.push_back(i);
  return out;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "two_moons") return SyntheticKind::TwoMoons;
  if (name == "gauss_mixture") return SyntheticKind::GaussMixture;
  if (name == "pinwheel") return SyntheticKind::Pinwheel;
  throw Error(ErrorCode::UnknownKind, "unknown synthetic dataset '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::TwoMoons: return "two_moons";
    case SyntheticKind::GaussMixture: return "gauss_mixture";
    case SyntheticKind::Pinwheel: return "pinwheel";
  }
  return "unknown";
}

SSLDataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed, int components) {
  const int k = kind == SyntheticKind::TwoMoons ? 2 : kind == SyntheticKind::Pinwheel ? 5 : components;
  if (k < 1) throw Error(ErrorCode::InvalidInput, "synthetic data needs at least one class");
  if (n < static_cast<std::size_t>(2 * k))
    throw Error(ErrorCode::InvalidInput, "synthetic data needs n >= 2K");
  if (!(noise >= 0.0)) throw Error(ErrorCode::InvalidInput, "noise must be >= 0");

  Rng rng(seed, Stream::Synthetic, {static_cast<std::uint64_t>(kind)});
  Matrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  constexpr double kPi = 3.14159265358979323846;

  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = labels[i];
    switch (kind) {
      case SyntheticKind::TwoMoons: {
        const double t = kPi * rng.uniform();
        if (c == 0) {
          x(r, 0) = std::cos(t);
          x(r, 1) = std::sin(t);
        } else {
          x(r, 0) = 1.0 - std::cos(t);
          x(r, 1) = 0.5 - std::sin(t);
        }
        x(r, 0) += noise * rng.normal();
        x(r, 1) += noise * rng.normal();
        break;
      }
      case SyntheticKind::GaussMixture: {
        const double angle = 2.0 * kPi * c / k;
        x(r, 0) = 4.0 * std::cos(angle) + noise * rng.normal();
        x(r, 1) = 4.0 * std::sin(angle) + noise * rng.normal();
        break;
      }
      case SyntheticKind::Pinwheel: {
        constexpr double kRadialStd = 0.3;
        constexpr double kRate = 0.25;
        const double radial = 1.0 + kRadialStd * rng.normal();
        const double tangential = noise * rng.normal();
        const double angle = 2.0 * kPi * c / k + kRate * std::exp(radial);
        x(r, 0) = std::cos(angle) * radial - std::sin(angle) * tangential;
        x(r, 1) = std::sin(angle) * radial + std::cos(angle) * tangential;
        break;
      }
    }
  }
  return SSLDataset(std::move(x), labels, k, false, labels);
}

SSLDataset ssl_split(const SSLDataset& ds, std::size_t n_labeled, std::uint64_t seed) {
  const int k = ds.num_classes();
  if (n_labeled < static_cast<std::size_t>(k))
    throw Error(ErrorCode::InsufficientLabels, "need at least one label per class");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i : ds.indices(Split::Train)) {
    if (auto t = ds.truth(i)) by_class[static_cast<std::size_t>(*t)].push_back(i);
  }
  Rng rng(seed, Stream::Split);
  for (auto& members : by_class) shuffle(members, rng);

  // Even quota per class, remainder handed out in a seeded class order; classes
  // that run short give their quota to the others.
  std::vector<std::size_t> quota(static_cast<std::size_t>(k), 0);
  std::vector<std::size_t> class_order(static_cast<std::size_t>(k));
  std::iota(class_order.begin(), class_order.end(), 0);
  shuffle(class_order, rng);
  std::size_t remaining = n_labeled;
  while (remaining > 0) {
    std::size_t open = 0;
    for (std::size_t c : class_order)
      if (quota[c] < by_class[c].size()) ++open;
    if (open == 0) throw Error(ErrorCode::InsufficientLabels, "not enough labeled examples to keep");
    const std::size_t share = std::max<std::size_t>(1, remaining / open);
    for (std::size_t c : class_order) {
      if (remaining == 0) break;
      const std::size_t take = std::min({share, by_class[c].size() - quota[c], remaining});
      quota[c] += take;
      remaining -= take;
    }
  }
  for (std::size_t c = 0; c < quota.size(); ++c)
    if (quota[c] == 0) throw Error(ErrorCode::InsufficientLabels, "class " + std::to_string(c) + " has no examples");

  std::vector<int> truth(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) truth[i] = ds.truth(i).value_or(SSLDataset::kMissing);
  const bool full_truth = std::none_of(truth.begin(), truth.end(), [](int t) { return t < 0; });

  std::vector<int> labels = ds.raw_labels();
  for (std::size_t i : ds.indices(Split::Train)) labels[i] = SSLDataset::kMissing;
  for (std::size_t c = 0; c < quota.size(); ++c)
    for (std::size_t j = 0; j < quota[c]; ++j) labels[by_class[c][j]] = static_cast<int>(c);

  SSLDataset out(ds.features(), std::move(labels), k, ds.is_counts(), full_truth ? truth : std::vector<int>{});
  for (std::size_t i = 0; i < ds.size(); ++i) out.set_split(i, ds.split(i));
  if (ds.standardization()) out.set_standardization(*ds.standardization());
  return out;
}

SSLDataset hold_out_validation(const SSLDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidInput, "validation fraction must be in [0, 1)");
  SSLDataset out = ds;
  std::vector<std::size_t> pool = ds.unlabeled_indices(Split::Train);
  Rng rng(seed, Stream::Split, {1});
  shuffle(pool, rng);
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size())));
  for (std::size_t j = 0; j < n_val; ++j) out.set_split(pool[j], Split::Validation);
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(const std::string& s, long& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

SSLDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  if (!schema.unlabeled && schema.num_classes < 1)
    throw Error(ErrorCode::ConfigError, "csv schema needs num_classes >= 1");

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(1, 0, "missing header row");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  std::ptrdiff_t label_col = -1;
  if (!schema.unlabeled) {
    auto it = std::find(header.begin(), header.end(), schema.label_column);
    if (it == header.end()) throw ParseError(1, 0, "label column '" + schema.label_column + "' not in header");
    label_col = it - header.begin();
  }
  const std::size_t width = header.size();
  const std::size_t dim = width - (label_col >= 0 ? 1 : 0);

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != width)
      throw ParseError(line_no, 0, "expected " + std::to_string(width) + " fields, got " + std::to_string(cells.size()));
    int label = SSLDataset::kMissing;
    for (std::size_t c = 0; c < width; ++c) {
      const std::string cell = trim(cells[c]);
      if (static_cast<std::ptrdiff_t>(c) == label_col) {
        if (cell.empty() || cell == "?") continue;
        auto name = std::find(schema.class_names.begin(), schema.class_names.end(), cell);
        long v = 0;
        if (name != schema.class_names.end()) {
          label = static_cast<int>(name - schema.class_names.begin());
        } else if (parse_int(cell, v) && v >= 0 && v < schema.num_classes) {
          label = static_cast<int>(v);
        } else {
          throw Error(ErrorCode::InvalidLabel,
                      "line " + std::to_string(line_no) + ": unknown label value '" + cell + "'");
        }
        continue;
      }
      double v = 0.0;
      if (!parse_double(cell, v)) throw ParseError(line_no, c + 1, "non-numeric feature '" + cell + "'");
      values.push_back(v);
    }
    labels.push_back(label);
  }
  const auto n = static_cast<Eigen::Index>(labels.size());
  Matrix x(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = values[static_cast<std::size_t>(r * x.cols() + c)];
  spdlog::info("loaded {} rows x {} features from {}", n, dim, path);
  return SSLDataset(std::move(x), std::move(labels), schema.unlabeled ? 1 : schema.num_classes);
}

void write_csv(const SSLDataset& ds, const std::string& path, const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  for (int c = 0; c < ds.dim(); ++c) out << "x" << c << ',';
  out << label_column << '\n';
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int c = 0; c < ds.dim(); ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ds.features()(static_cast<Eigen::Index>(i), c));
      out.write(buf, ptr - buf);
      out << ',';
    }
    if (auto l = ds.label(i)) out << *l; else out << '?';
    out << '\n';
  }
}

SSLDataset load_unigram(const std::string& triplets_path, const std::string& vocab_path,
                        const std::string& labels_path, int num_classes) {
  std::ifstream vocab(vocab_path);
  if (!vocab) throw Error(ErrorCode::Io, "cannot open '" + vocab_path + "'");
  std::size_t v_size = 0;
  for (std::string w; std::getline(vocab, w);)
    if (!trim(w).empty()) ++v_size;
  if (v_size == 0) throw Error(ErrorCode::InvalidInput, "empty vocabulary");

  std::ifstream in(triplets_path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + triplets_path + "'");
  struct Entry { long doc, word; double count; };
  std::vector<Entry> entries;
  long max_doc = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    Entry e{};
    std::string extra;
    if (!(ss >> e.doc >> e.word >> e.count) || (ss >> extra))
      throw ParseError(line_no, 0, "expected 'doc_id word_id count'");
    if (e.doc < 0 || e.word < 0 || e.word >= static_cast<long>(v_size))
      throw ParseError(line_no, 0, "doc/word id out of range");
    if (!(e.count >= 0.0) || !std::isfinite(e.count)) throw Error(ErrorCode::InvalidInput, "negative or non-finite count");
    max_doc = std::max(max_doc, e.doc);
    entries.push_back(e);
  }
  Matrix x = Matrix::Zero(max_doc + 1, static_cast<Eigen::Index>(v_size));
  for (const Entry& e : entries) x(e.doc, e.word) += e.count;

  std::vector<int> labels(static_cast<std::size_t>(max_doc + 1), SSLDataset::kMissing);
  if (!labels_path.empty()) {
    std::ifstream lf(labels_path);
    if (!lf) throw Error(ErrorCode::Io, "cannot open '" + labels_path + "'");
    line_no = 0;
    while (std::getline(lf, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      std::istringstream ss(line);
      long doc = 0;
      std::string cell;
      if (!(ss >> doc >> cell)) throw ParseError(line_no, 0, "expected 'doc_id label'");
      if (doc < 0 || doc > max_doc) throw ParseError(line_no, 0, "doc id out of range");
      if (cell == "?") continue;
      long v = 0;
      if (!parse_int(cell, v) || v < 0 || v >= num_classes)
        throw Error(ErrorCode::InvalidLabel, "line " + std::to_string(line_no) + ": unknown label value '" + cell + "'");
      labels[static_cast<std::size_t>(doc)] = static_cast<int>(v);
    }
  }
  return SSLDataset(std::move(x), std::move(labels), num_classes, true);
}

Matrix apply_standardization(const Matrix& x, const Standardization& params) {
  if (params.mean.size() != x.cols() || params.std.size() != x.cols())
    throw Error(ErrorCode::InvalidShape, "standardization width mismatch");
  return ((x.rowwise() - params.mean.transpose()).array().rowwise() / params.std.transpose().array()).matrix();
}

SSLDataset apply_standardization(const SSLDataset& ds, const Standardization& params) {
  SSLDataset out = ds;
  out.features() = apply_standardization(ds.features(), params);
  out.set_standardization(params);
  return out;
}

SSLDataset standardize(const SSLDataset& ds) {
  if (ds.standardization()) return ds;
  if (ds.is_counts()) {
    spdlog::info("count features are not standardized");
    return ds;
  }
  const std::vector<std::size_t> fit = ds.indices(Split::Train);
  if (fit.empty()) throw Error(ErrorCode::InvalidInput, "no Train rows to fit standardization");
  const Matrix x = ds.rows(fit);
  Standardization params;
  params.mean = x.colwise().mean().transpose();
  params.std = ((x.rowwise() - params.mean.transpose()).array().square().colwise().mean().sqrt()).matrix().transpose();
  for (Eigen::Index c = 0; c < params.std.size(); ++c) {
    if (params.std(c) < 1e-6) {
      spdlog::warn("feature column {} is constant; std floored at 1e-6", c);
      params.std(c) = 1e-6;
    }
  }
  return apply_standardization(ds, params);
}

BatchStream::BatchStream(const SSLDataset& ds, std::size_t m, std::size_t n, std::uint64_t seed)
    : unlabeled_(ds.unlabeled_indices(Split::Train)),
      labeled_(ds.labeled_indices(Split::Train)),
      m_(m),
      n_(n),
      seed_(seed) {
  if (m_ < 1 || n_ < 1) throw Error(ErrorCode::InvalidBatch, "batch sizes must be >= 1");
  if (unlabeled_.empty()) throw Error(ErrorCode::InvalidBatch, "no unlabeled training rows");
  if (labeled_.empty()) throw Error(ErrorCode::InsufficientLabels, "no labeled training rows");
}

std::size_t BatchStream::batches_per_epoch() const { return (unlabeled_.size() + m_ - 1) / m_; }

const std::vector<std::size_t>& BatchStream::permutation(Stream stream, const std::vector<std::size_t>& pool,
                                                         std::uint64_t round) {
  Cached& cache = stream == Stream::UnlabeledOrder ? unlabeled_cache_ : labeled_cache_;
  if (cache.round != round) {
    cache.order = pool;
    Rng rng(seed_, stream, {round});
    shuffle(cache.order, rng);
    cache.round = round;
  }
  return cache.order;
}

BatchStream::Batch BatchStream::at(std::int64_t iteration) {
  if (iteration < 0) throw Error(ErrorCode::InvalidInput, "negative iteration");
  const auto it = static_cast<std::uint64_t>(iteration);
  Batch batch;
  const std::size_t per_epoch = batches_per_epoch();
  const std::uint64_t epoch = it / per_epoch;
  const std::size_t b = static_cast<std::size_t>(it % per_epoch);
  const auto& order = permutation(Stream::UnlabeledOrder, unlabeled_, epoch);
  for (std::size_t j = b * m_; j < std::min(order.size(), (b + 1) * m_); ++j) batch.unlabeled.push_back(order[j]);

  const std::uint64_t n_lab = labeled_.size();
  for (std::uint64_t p = it * n_; p < (it + 1) * n_; ++p) {
    batch.labeled.push_back(permutation(Stream::LabeledOrder, labeled_, p / n_lab)[p % n_lab]);
  }
  return batch;
}

}  // namespace lebm

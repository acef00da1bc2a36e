#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lebm/rng.hpp"
#include "lebm/types.hpp"

namespace lebm {

enum class Split : std::uint8_t { Train, Validation, Test };

struct Standardization {
  Vector mean;
  Vector std;
};

/// Feature matrix with partially observed labels; -1 marks a missing label.
class SSLDataset {
 public:
  static constexpr int kMissing = -1;

  SSLDataset() = default;
  /// Every row starts in the Train split. truth, when given, holds known
  /// ground-truth labels used only for evaluation.
  SSLDataset(Matrix features, std::vector<int> labels, int num_classes, bool counts = false,
             std::vector<int> truth = {});

  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  int dim() const { return static_cast<int>(features_.cols()); }
  int num_classes() const { return num_classes_; }
  bool is_counts() const { return counts_; }

  const Matrix& features() const { return features_; }
  Matrix& features() { return features_; }
  Matrix rows(const std::vector<std::size_t>& idx) const;

  std::optional<int> label(std::size_t i) const;
  /// Observed class of row i; InvalidLabel when the label is missing.
  int class_of(std::size_t i) const;
  bool is_labeled(std::size_t i) const { return labels_.at(i) != kMissing; }
  const std::vector<int>& raw_labels() const { return labels_; }
  void set_label(std::size_t i, int label);

  /// Ground truth for row i when known (synthetic data, pre-masking labels).
  std::optional<int> truth(std::size_t i) const;
  bool has_truth() const { return !truth_.empty(); }

  Split split(std::size_t i) const { return splits_.at(i); }
  void set_split(std::size_t i, Split s) { splits_.at(i) = s; }
  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> labeled_indices(Split s) const;
  std::vector<std::size_t> unlabeled_indices(Split s) const;

  const std::optional<Standardization>& standardization() const { return standardization_; }
  void set_standardization(Standardization s) { standardization_ = std::move(s); }

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::vector<int> truth_;
  std::vector<Split> splits_;
  int num_classes_ = 0;
  bool counts_ = false;
  std::optional<Standardization> standardization_;
};

enum class SyntheticKind { TwoMoons, GaussMixture, Pinwheel };
SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

/// Balanced, fully labeled synthetic data. gauss_mixture places `components`
/// isotropic Gaussians of standard deviation `noise` on a circle of radius 4.
SSLDataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed,
                          int components = 8);

/// Keeps exactly n_labeled labels among Train rows, spread evenly across
/// classes; every other Train label becomes missing.
SSLDataset ssl_split(const SSLDataset& ds, std::size_t n_labeled, std::uint64_t seed);

/// Moves `fraction` of the unlabeled Train rows to the Validation split.
SSLDataset hold_out_validation(const SSLDataset& ds, double fraction, std::uint64_t seed);

struct CsvSchema {
  std::string label_column = "label";
  int num_classes = 0;
  /// Optional names; when set, label cells are matched against them first.
  std::vector<std::string> class_names;
  /// No label column at all: every row is unlabeled.
  bool unlabeled = false;
};

/// Header row plus numeric rows. Empty or "?" label cells are missing labels.
SSLDataset load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const SSLDataset& ds, const std::string& path, const std::string& label_column = "label");

/// Sparse "doc_id word_id count" triplets, a vocabulary file (one word per
/// line), and an optional "doc_id label" file.
SSLDataset load_unigram(const std::string& triplets_path, const std::string& vocab_path,
                        const std::string& labels_path, int num_classes);

/// Fits per-column mean/std on Train rows and applies them to every row. A
/// dataset that already carries parameters is returned unchanged. Count data is
/// left untouched.
SSLDataset standardize(const SSLDataset& ds);
SSLDataset apply_standardization(const SSLDataset& ds, const Standardization& params);
Matrix apply_standardization(const Matrix& x, const Standardization& params);

/// Deterministic mini-batch schedule. The unlabeled stream walks epoch-wise
/// permutations of the unlabeled Train rows; the labeled stream cycles over
/// reshuffled labeled Train rows. Batches depend only on (seed, iteration).
class BatchStream {
 public:
  struct Batch {
    std::vector<std::size_t> unlabeled;
    std::vector<std::size_t> labeled;
  };

  BatchStream(const SSLDataset& ds, std::size_t m, std::size_t n, std::uint64_t seed);

  Batch at(std::int64_t iteration);
  std::size_t batches_per_epoch() const;
  std::size_t unlabeled_count() const { return unlabeled_.size(); }
  std::size_t labeled_count() const { return labeled_.size(); }

 private:
  const std::vector<std::size_t>& permutation(Stream stream, const std::vector<std::size_t>& pool,
                                              std::uint64_t round);

  std::vector<std::size_t> unlabeled_;
  std::vector<std::size_t> labeled_;
  std::size_t m_;
  std::size_t n_;
  std::uint64_t seed_;
  struct Cached {
    std::uint64_t round = ~0ULL;
    std::vector<std::size_t> order;
  };
  Cached unlabeled_cache_;
  Cached labeled_cache_;
};

/// In-place Fisher-Yates with the library RNG.
void shuffle(std::vector<std::size_t>& v, Rng& rng);

}  // namespace lebm

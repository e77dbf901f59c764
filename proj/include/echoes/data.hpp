// Synthetic multi-bias datasets: a target feature block plus K bias blocks
// whose class-conditional separation is larger than the target's, so the bias
// directions are picked up first by gradient training. Bias labels ride along
// for evaluation only; the training-facing view cannot reach them.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "echoes/matrix.hpp"

namespace echoes::data {

enum class DatasetRole { Train, Test };

struct SyntheticSpec {
  std::size_t n_train = 8000;
  std::size_t n_test = 1000;
  std::size_t n_classes = 2;               // C
  std::size_t n_biases = 2;                // K
  std::vector<double> skew = {0.95, 0.95}; // per bias, in (0.5, 1]
  double target_sep = 2.0;                 // class-mean separation, target block
  std::vector<double> bias_sep = {8.0, 8.0};  // must exceed target_sep
  std::size_t block_dim = 1;               // dims per feature block
  std::size_t noise_dim = 128;             // pure-noise dims
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const {
    return (1 + n_biases) * block_dim + noise_dim;
  }
  std::size_t group_count() const {
    return n_classes * (std::size_t{1} << n_biases);
  }
  void validate() const;  // throws std::invalid_argument
};

// Features + targets only: what an unsupervised trainer is allowed to see.
struct DatasetView {
  const Matrix2D* features = nullptr;
  const std::vector<int>* targets = nullptr;
  std::size_t n_classes = 0;
  std::size_t size() const { return features->rows; }
};

struct LabeledDataset {
  Matrix2D features;                // N x D
  std::vector<int> targets;         // N
  std::vector<int> bias_labels;     // N x K, row-major; evaluation-only
  std::size_t n_biases = 0;
  std::size_t n_classes = 0;
  DatasetRole role = DatasetRole::Train;

  std::size_t size() const { return features.rows; }
  int bias_label(std::size_t i, std::size_t k) const {
    return bias_labels[i * n_biases + k];
  }
  DatasetView view() const { return {&features, &targets, n_classes}; }
};

// target class plus an alignment pattern over the K biases. Bit k of
// conflict_mask is set iff bias k disagrees with the value correlated with
// the target ("C" in the pattern string); mask 0 is the fully aligned group.
struct GroupId {
  int target = 0;
  std::uint32_t conflict_mask = 0;
};

// Train set: class uniform, bias k takes the correlated value with
// probability skew[k]; test set: all C * 2^K joint groups exactly equal in
// size (n_test must divide evenly). Fully determined by spec.seed.
std::pair<LabeledDataset, LabeledDataset> generate(const SyntheticSpec& spec);

GroupId group_of(const LabeledDataset& dataset, std::size_t index);
std::size_t group_index(const GroupId& id, std::size_t n_biases);
std::string alignment_string(std::uint32_t conflict_mask, std::size_t n_biases);
std::string group_label(const GroupId& id, std::size_t n_biases);

// Uniform subset without replacement, floor(fraction * N) rows, original
// order preserved. fraction in (0, 1].
LabeledDataset subsample(const LabeledDataset& dataset, double fraction,
                         std::uint64_t seed);

// CSV schema (header): f0..f{D-1},y,b0..b{K-1}; reals printed with 17
// significant digits so save/load round-trips bit-exactly. Lines starting
// with '#' are provenance comments and are skipped on load.
void save_csv(const LabeledDataset& dataset, const std::string& path,
              const std::string& provenance = "");
LabeledDataset load_csv(const std::string& path, DatasetRole role);

}  // namespace echoes::data

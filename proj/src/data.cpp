#include "echoes/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "echoes/csv.hpp"
#include "echoes/rng.hpp"

namespace echoes::data {

namespace {

constexpr std::uint64_t kStreamTrain = 0;
constexpr std::uint64_t kStreamTest = 1;
constexpr std::uint64_t kStreamSubsample = 3;

// Class value v out of C mapped to a coordinate center in [-sep/2, +sep/2],
// equally spaced; for C=2 this is -sep/2 and +sep/2.
double value_center(int v, std::size_t n_classes, double sep) {
  if (n_classes == 1) {
    return 0.0;
  }
  const double t = static_cast<double>(v) / static_cast<double>(n_classes - 1);
  return sep * (t - 0.5);
}

// Uniform value != y among C possibilities.
int other_value(Rng& rng, int y, std::size_t n_classes) {
  const auto u = static_cast<int>(rng.below(n_classes - 1));
  return u >= y ? u + 1 : u;
}

void fill_sample(Rng& rng, const SyntheticSpec& spec, int y,
                 const std::vector<int>& bias_values, double* row) {
  std::size_t d = 0;
  for (std::size_t j = 0; j < spec.block_dim; ++j) {
    row[d++] = value_center(y, spec.n_classes, spec.target_sep) +
               spec.noise_sigma * rng.normal();
  }
  for (std::size_t k = 0; k < spec.n_biases; ++k) {
    for (std::size_t j = 0; j < spec.block_dim; ++j) {
      row[d++] = value_center(bias_values[k], spec.n_classes, spec.bias_sep[k]) +
                 spec.noise_sigma * rng.normal();
    }
  }
  for (std::size_t j = 0; j < spec.noise_dim; ++j) {
    row[d++] = spec.noise_sigma * rng.normal();
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_train == 0 || n_test == 0) {
    throw std::invalid_argument("spec: n_train and n_test must be positive");
  }
  if (n_classes < 2) {
    throw std::invalid_argument("spec: need at least 2 classes");
  }
  if (n_biases == 0 || n_biases > 16) {
    throw std::invalid_argument("spec: n_biases must be in [1, 16]");
  }
  if (skew.size() != n_biases || bias_sep.size() != n_biases) {
    throw std::invalid_argument("spec: skew and bias_sep must have one entry per bias");
  }
  for (const double s : skew) {
    if (!(s > 0.5 && s <= 1.0)) {
      throw std::invalid_argument("spec: skew must be in (0.5, 1]");
    }
  }
  for (const double sep : bias_sep) {
    if (!(sep > target_sep)) {
      throw std::invalid_argument(
          "spec: bias_sep must exceed target_sep (bias features must be easier)");
    }
  }
  if (block_dim == 0) {
    throw std::invalid_argument("spec: block_dim must be positive");
  }
  if (!(noise_sigma > 0.0)) {
    throw std::invalid_argument("spec: noise_sigma must be positive");
  }
  if (n_test % group_count() != 0) {
    throw std::invalid_argument(
        "spec: n_test must be divisible by n_classes * 2^n_biases (" +
        std::to_string(group_count()) + ") for an exactly balanced test set");
  }
}

std::pair<LabeledDataset, LabeledDataset> generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t dim = spec.feature_dim();

  LabeledDataset train;
  train.role = DatasetRole::Train;
  train.n_biases = spec.n_biases;
  train.n_classes = spec.n_classes;
  train.features = Matrix2D(spec.n_train, dim);
  train.targets.resize(spec.n_train);
  train.bias_labels.resize(spec.n_train * spec.n_biases);
  {
    Rng rng(spec.seed, kStreamTrain);
    std::vector<int> bias_values(spec.n_biases);
    for (std::size_t i = 0; i < spec.n_train; ++i) {
      const int y = static_cast<int>(rng.below(spec.n_classes));
      train.targets[i] = y;
      for (std::size_t k = 0; k < spec.n_biases; ++k) {
        const bool aligned = rng.uniform01() < spec.skew[k];
        bias_values[k] = aligned ? y : other_value(rng, y, spec.n_classes);
        train.bias_labels[i * spec.n_biases + k] = bias_values[k];
      }
      fill_sample(rng, spec, y, bias_values, train.features.row(i));
    }
  }

  LabeledDataset test;
  test.role = DatasetRole::Test;
  test.n_biases = spec.n_biases;
  test.n_classes = spec.n_classes;
  test.features = Matrix2D(spec.n_test, dim);
  test.targets.resize(spec.n_test);
  test.bias_labels.resize(spec.n_test * spec.n_biases);
  {
    Rng rng(spec.seed, kStreamTest);
    const std::size_t per_group = spec.n_test / spec.group_count();
    const std::size_t n_masks = std::size_t{1} << spec.n_biases;
    std::vector<int> bias_values(spec.n_biases);
    std::size_t i = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      for (std::size_t mask = 0; mask < n_masks; ++mask) {
        for (std::size_t r = 0; r < per_group; ++r, ++i) {
          const int y = static_cast<int>(c);
          test.targets[i] = y;
          for (std::size_t k = 0; k < spec.n_biases; ++k) {
            const bool conflicting = (mask >> k) & 1u;
            bias_values[k] = conflicting ? other_value(rng, y, spec.n_classes) : y;
            test.bias_labels[i * spec.n_biases + k] = bias_values[k];
          }
          fill_sample(rng, spec, y, bias_values, test.features.row(i));
        }
      }
    }
  }

  return {std::move(train), std::move(test)};
}

GroupId group_of(const LabeledDataset& dataset, std::size_t index) {
  if (index >= dataset.size()) {
    throw std::invalid_argument("group_of: index out of range");
  }
  GroupId id;
  id.target = dataset.targets[index];
  for (std::size_t k = 0; k < dataset.n_biases; ++k) {
    if (dataset.bias_label(index, k) != id.target) {
      id.conflict_mask |= (1u << k);
    }
  }
  return id;
}

std::size_t group_index(const GroupId& id, std::size_t n_biases) {
  return static_cast<std::size_t>(id.target) * (std::size_t{1} << n_biases) +
         id.conflict_mask;
}

std::string alignment_string(std::uint32_t conflict_mask, std::size_t n_biases) {
  std::string s(n_biases, 'A');
  for (std::size_t k = 0; k < n_biases; ++k) {
    if ((conflict_mask >> k) & 1u) {
      s[k] = 'C';
    }
  }
  return s;
}

std::string group_label(const GroupId& id, std::size_t n_biases) {
  return "y" + std::to_string(id.target) + "_" +
         alignment_string(id.conflict_mask, n_biases);
}

LabeledDataset subsample(const LabeledDataset& dataset, double fraction,
                         std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("subsample: fraction must be in (0, 1]");
  }
  const std::size_t n = dataset.size();
  const auto m = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n)));
  if (m == 0) {
    throw std::invalid_argument("subsample: fraction selects zero samples");
  }
  std::vector<std::size_t> indices(n);
  for (std::size_t i = 0; i < n; ++i) {
    indices[i] = i;
  }
  Rng rng(seed, kStreamSubsample);
  rng.shuffle(indices);
  indices.resize(m);
  std::sort(indices.begin(), indices.end());

  LabeledDataset out;
  out.role = dataset.role;
  out.n_biases = dataset.n_biases;
  out.n_classes = dataset.n_classes;
  out.features = Matrix2D(m, dataset.features.cols);
  out.targets.resize(m);
  out.bias_labels.resize(m * dataset.n_biases);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t src = indices[i];
    std::copy_n(dataset.features.row(src), dataset.features.cols,
                out.features.row(i));
    out.targets[i] = dataset.targets[src];
    for (std::size_t k = 0; k < dataset.n_biases; ++k) {
      out.bias_labels[i * dataset.n_biases + k] = dataset.bias_label(src, k);
    }
  }
  return out;
}

void save_csv(const LabeledDataset& dataset, const std::string& path,
              const std::string& provenance) {
  auto out = csv::open_out(path);
  if (!provenance.empty()) {
    out << "# " << provenance << "\n";
  }
  const std::size_t dim = dataset.features.cols;
  for (std::size_t d = 0; d < dim; ++d) {
    out << 'f' << d << ',';
  }
  out << 'y';
  for (std::size_t k = 0; k < dataset.n_biases; ++k) {
    out << ",b" << k;
  }
  out << '\n';
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double* row = dataset.features.row(i);
    for (std::size_t d = 0; d < dim; ++d) {
      out << csv::fmt(row[d]) << ',';
    }
    out << dataset.targets[i];
    for (std::size_t k = 0; k < dataset.n_biases; ++k) {
      out << ',' << dataset.bias_label(i, k);
    }
    out << '\n';
  }
}

LabeledDataset load_csv(const std::string& path, DatasetRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open dataset: " + path);
  }
  std::string line;
  std::size_t line_no = 0;

  // Header (first non-comment line): f0..f{D-1},y,b0..b{K-1}
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line[0] == '#') {
      continue;
    }
    header = csv::split(line);
    break;
  }
  if (header.empty()) {
    throw std::runtime_error(path + ": missing header row");
  }
  std::size_t dim = 0;
  while (dim < header.size() && header[dim] == "f" + std::to_string(dim)) {
    ++dim;
  }
  if (dim == header.size() || header[dim] != "y") {
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": header must be f0..f{D-1},y,b0..b{K-1}");
  }
  const std::size_t n_biases = header.size() - dim - 1;
  for (std::size_t k = 0; k < n_biases; ++k) {
    if (header[dim + 1 + k] != "b" + std::to_string(k)) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": bad bias column '" + header[dim + 1 + k] + "'");
    }
  }
  const std::size_t n_cols = header.size();

  std::vector<double> features;
  std::vector<int> targets;
  std::vector<int> bias_labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line[0] == '#') {
      continue;
    }
    const auto tokens = csv::split(line);
    if (tokens.size() != n_cols) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(n_cols) + " columns, got " +
                               std::to_string(tokens.size()));
    }
    for (std::size_t d = 0; d < dim; ++d) {
      features.push_back(csv::parse_double(tokens[d], line_no));
    }
    const long y = csv::parse_long(tokens[dim], line_no);
    if (y < 0) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": negative class label");
    }
    targets.push_back(static_cast<int>(y));
    for (std::size_t k = 0; k < n_biases; ++k) {
      bias_labels.push_back(
          static_cast<int>(csv::parse_long(tokens[dim + 1 + k], line_no)));
    }
  }

  LabeledDataset out;
  out.role = role;
  out.n_biases = n_biases;
  const std::size_t n = targets.size();
  if (n == 0) {
    throw std::runtime_error(path + ": no data rows");
  }
  int max_label = 0;
  for (const int y : targets) {
    max_label = std::max(max_label, y);
  }
  out.n_classes = static_cast<std::size_t>(max_label) + 1;
  out.features = Matrix2D(n, dim);
  out.features.values = std::move(features);
  out.targets = std::move(targets);
  out.bias_labels = std::move(bias_labels);
  return out;
}

}  // namespace echoes::data

#include "echoes/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "echoes/csv.hpp"

namespace echoes::weighting {

ClassErrorReport class_errors(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              std::size_t n_classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("class_errors: size mismatch");
  }
  if (n_classes == 0) {
    throw std::invalid_argument("class_errors: no classes");
  }
  std::vector<std::size_t> total(n_classes, 0);
  std::vector<std::size_t> wrong(n_classes, 0);
  ClassErrorReport report;
  report.per_sample_correct.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw std::invalid_argument("class_errors: label out of range");
    }
    const bool correct = predictions[i] == y;
    report.per_sample_correct[i] = correct ? 1 : 0;
    total[y] += 1;
    if (!correct) {
      wrong[y] += 1;
    }
  }
  report.per_class_error.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0) {
      throw std::invalid_argument("class_errors: class " + std::to_string(c) +
                                  " has no samples, error rate undefined");
    }
    report.per_class_error[c] =
        static_cast<double>(wrong[c]) / static_cast<double>(total[c]);
  }
  return report;
}

WeightVector echo_update(WeightVector w, const ClassErrorReport& report,
                         const std::vector<int>& labels, double alpha,
                         double t_error) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("echo_update: alpha must be in (0, 1]");
  }
  if (!(t_error > 0.0 && t_error <= 1.0)) {
    throw std::invalid_argument("echo_update: t_error must be in (0, 1]");
  }
  if (w.weights.size() != labels.size() ||
      report.per_sample_correct.size() != labels.size()) {
    throw std::invalid_argument("echo_update: size mismatch");
  }
  // Weights smaller than 2^-1000 stop decaying: they are already ~0 relative
  // to any live sample and further decay would underflow to zero, which the
  // inversion step rejects.
  constexpr double kWeightFloor = 0x1p-1000;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= report.per_class_error.size()) {
      throw std::invalid_argument("echo_update: label out of range");
    }
    if (!report.per_sample_correct[i] && report.per_class_error[c] < t_error &&
        w.weights[i] > kWeightFloor) {
      w.weights[i] *= alpha;
    }
  }
  w.epoch_count += 1;
  return w;
}

WeightVector invert(const WeightVector& w, double cap) {
  if (!(cap >= 1.0)) {
    throw std::invalid_argument("invert: cap must be >= 1");
  }
  WeightVector out;
  out.epoch_count = w.epoch_count;
  out.weights.resize(w.weights.size());
  for (std::size_t i = 0; i < w.weights.size(); ++i) {
    const double wi = w.weights[i];
    if (!(wi > 0.0)) {
      throw std::invalid_argument("invert: nonpositive weight");
    }
    out.weights[i] = std::min(1.0 / wi, cap);
  }
  return out;
}

WeightVector class_balance(WeightVector w, const std::vector<int>& labels,
                           std::size_t n_classes, bool rescale_to_unit_mean) {
  if (w.weights.size() != labels.size()) {
    throw std::invalid_argument("class_balance: size mismatch");
  }
  if (n_classes == 0) {
    throw std::invalid_argument("class_balance: no classes");
  }
  std::vector<double> class_sum(n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
      throw std::invalid_argument("class_balance: label out of range");
    }
    class_sum[c] += w.weights[i];
  }
  double product = 1.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!(class_sum[c] > 0.0)) {
      throw std::invalid_argument("class_balance: class " + std::to_string(c) +
                                  " has zero weight sum");
    }
    product *= class_sum[c];
  }
  std::vector<double> factor(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    factor[c] = product / class_sum[c];
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    w.weights[i] *= factor[labels[i]];
  }
  if (rescale_to_unit_mean && !w.weights.empty()) {
    double sum = 0.0;
    for (const double v : w.weights) {
      sum += v;
    }
    const double mean = sum / static_cast<double>(w.weights.size());
    for (double& v : w.weights) {
      v /= mean;
    }
  }
  return w;
}

double lff_weight(double loss_biased, double loss_target) {
  if (!(loss_biased >= 0.0) || !(loss_target >= 0.0)) {
    throw std::invalid_argument("lff_weight: losses must be nonnegative");
  }
  if (loss_biased == 0.0 && loss_target == 0.0) {
    throw std::invalid_argument("lff_weight: both losses zero, weight undefined");
  }
  return loss_biased / (loss_biased + loss_target);
}

void save_weight_snapshots_csv(const std::string& path,
                               const std::vector<WeightSnapshot>& snapshots,
                               const std::string& provenance) {
  auto out = csv::open_out(path);
  if (!provenance.empty()) {
    out << "# " << provenance << "\n";
  }
  out << "epoch,sample_index,weight\n";
  for (const auto& snap : snapshots) {
    for (std::size_t i = 0; i < snap.weights.size(); ++i) {
      out << snap.epoch << ',' << i << ',' << csv::fmt(snap.weights[i]) << '\n';
    }
  }
}

}  // namespace echoes::weighting

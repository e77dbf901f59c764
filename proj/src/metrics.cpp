#include "echoes/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace echoes::metrics {

GroupMetrics group_accuracy(const std::vector<int>& predictions,
                            const data::LabeledDataset& dataset) {
  if (predictions.size() != dataset.size()) {
    throw std::invalid_argument("group_accuracy: prediction count mismatch");
  }
  if (dataset.n_biases == 0) {
    throw std::invalid_argument("group_accuracy: dataset has no bias labels");
  }
  GroupMetrics m;
  m.n_biases = dataset.n_biases;
  m.n_classes = dataset.n_classes;
  const std::size_t n_masks = std::size_t{1} << dataset.n_biases;
  const std::size_t n_groups = dataset.n_classes * n_masks;
  std::vector<std::size_t> group_correct(n_groups, 0);
  m.per_group_count.assign(n_groups, 0);
  std::vector<std::size_t> align_correct(n_masks, 0);
  m.per_alignment_count.assign(n_masks, 0);

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const data::GroupId id = data::group_of(dataset, i);
    const std::size_t gidx = data::group_index(id, dataset.n_biases);
    const bool correct = predictions[i] == dataset.targets[i];
    m.per_group_count[gidx] += 1;
    m.per_alignment_count[id.conflict_mask] += 1;
    if (correct) {
      group_correct[gidx] += 1;
      align_correct[id.conflict_mask] += 1;
    }
  }

  m.per_group_acc.resize(n_groups);
  double acc_sum = 0.0;
  double worst = 1.0;
  for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
    if (m.per_group_count[gidx] == 0) {
      throw std::invalid_argument("group_accuracy: empty joint group " +
                                  std::to_string(gidx));
    }
    m.per_group_acc[gidx] = static_cast<double>(group_correct[gidx]) /
                            static_cast<double>(m.per_group_count[gidx]);
    acc_sum += m.per_group_acc[gidx];
    worst = std::min(worst, m.per_group_acc[gidx]);
  }
  m.avg_group_acc = acc_sum / static_cast<double>(n_groups);
  m.worst_group_acc = worst;

  m.per_alignment_acc.resize(n_masks);
  std::size_t conf_correct = 0, conf_total = 0;
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    m.per_alignment_acc[mask] =
        static_cast<double>(align_correct[mask]) /
        static_cast<double>(m.per_alignment_count[mask]);
    if (mask != 0) {
      conf_correct += align_correct[mask];
      conf_total += m.per_alignment_count[mask];
    }
  }
  m.aligned_acc = m.per_alignment_acc[0];
  m.conflicting_acc = conf_total == 0
                          ? 0.0
                          : static_cast<double>(conf_correct) /
                                static_cast<double>(conf_total);
  return m;
}

GroupMetrics group_accuracy(const nn::MlpModel& model,
                            const data::LabeledDataset& dataset) {
  return group_accuracy(nn::predict(model, dataset.features), dataset);
}

double bias_gap(const GroupMetrics& metrics, std::size_t bias_k) {
  if (bias_k >= metrics.n_biases) {
    throw std::invalid_argument("bias_gap: bias index out of range");
  }
  const std::size_t n_masks = std::size_t{1} << metrics.n_biases;
  const std::uint32_t bit = 1u << bias_k;
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    if (mask & bit) {
      continue;  // enumerate patterns with bias_k aligned; partner has it flipped
    }
    const double acc_aligned = metrics.per_alignment_acc[mask];
    const double acc_conflicting = metrics.per_alignment_acc[mask | bit];
    sum += std::abs(acc_aligned - acc_conflicting);
    ++terms;
  }
  return sum / static_cast<double>(terms);
}

double avg_bias_gap(const GroupMetrics& metrics) {
  double sum = 0.0;
  for (std::size_t k = 0; k < metrics.n_biases; ++k) {
    sum += bias_gap(metrics, k);
  }
  return sum / static_cast<double>(metrics.n_biases);
}

std::vector<std::uint8_t> conflict_flags(const data::LabeledDataset& dataset) {
  std::vector<std::uint8_t> flags(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    flags[i] = data::group_of(dataset, i).conflict_mask != 0 ? 1 : 0;
  }
  return flags;
}

PseudoLabelReport score_flags(const std::vector<std::uint8_t>& flags,
                              const data::LabeledDataset& dataset,
                              double threshold_tag) {
  if (flags.size() != dataset.size()) {
    throw std::invalid_argument("score_flags: flag count mismatch");
  }
  const std::vector<std::uint8_t> truth = conflict_flags(dataset);
  std::size_t tp = 0, fp = 0, fn = 0, flagged = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) {
      ++flagged;
      truth[i] ? ++tp : ++fp;
    } else if (truth[i]) {
      ++fn;
    }
  }
  PseudoLabelReport report;
  report.threshold = threshold_tag;
  report.flagged = flagged;
  report.precision = (tp + fp) == 0
                         ? 0.0
                         : static_cast<double>(tp) / static_cast<double>(tp + fp);
  report.recall = (tp + fn) == 0
                      ? 0.0
                      : static_cast<double>(tp) / static_cast<double>(tp + fn);
  report.f1 = (report.precision + report.recall) == 0.0
                  ? 0.0
                  : 2.0 * report.precision * report.recall /
                        (report.precision + report.recall);
  return report;
}

PseudoLabelReport pseudo_label_quality(const weighting::WeightVector& weights,
                                       const data::LabeledDataset& dataset,
                                       double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("pseudo_label_quality: threshold must be in (0, 1]");
  }
  if (weights.weights.size() != dataset.size()) {
    throw std::invalid_argument("pseudo_label_quality: weight count mismatch");
  }
  std::vector<std::uint8_t> flags(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    flags[i] = weights.weights[i] < threshold ? 1 : 0;
  }
  return score_flags(flags, dataset, threshold);
}

std::vector<std::uint8_t> flag_top_losses(const std::vector<double>& losses,
                                          std::size_t k) {
  std::vector<std::size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return losses[a] > losses[b];
  });
  std::vector<std::uint8_t> flags(losses.size(), 0);
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) {
    flags[idx[i]] = 1;
  }
  return flags;
}

std::vector<ErrorCurveRow> error_curves(const train::TrainResult& result,
                                        std::size_t n_biases,
                                        HistoryStream stream) {
  if (result.history.empty()) {
    throw std::invalid_argument("error_curves: empty history");
  }
  std::vector<ErrorCurveRow> rows;
  for (const train::EpochRecord& rec : result.history) {
    const std::vector<double>& errors = stream == HistoryStream::Biased
                                            ? rec.group_error_biased
                                            : rec.group_error_target;
    for (std::size_t mask = 0; mask < errors.size(); ++mask) {
      if (result.group_counts[mask] == 0) {
        continue;
      }
      rows.push_back({rec.epoch,
                      data::alignment_string(static_cast<std::uint32_t>(mask),
                                             n_biases),
                      errors[mask]});
    }
  }
  return rows;
}

}  // namespace echoes::metrics

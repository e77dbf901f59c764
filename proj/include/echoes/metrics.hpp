// Group-level evaluation: per-group and aggregate accuracies over the joint
// (target x alignment) groups, per-bias accuracy gaps over the alignment
// aggregates, pseudo-bias-label quality, and per-epoch diagnostic curves.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "echoes/data.hpp"
#include "echoes/nn.hpp"
#include "echoes/training.hpp"
#include "echoes/weighting.hpp"

namespace echoes::metrics {

struct GroupMetrics {
  std::size_t n_biases = 0;
  std::size_t n_classes = 0;
  // Joint groups indexed by data::group_index (target * 2^K + conflict mask).
  std::vector<double> per_group_acc;
  std::vector<std::size_t> per_group_count;
  double avg_group_acc = 0.0;    // unweighted mean over joint groups
  double worst_group_acc = 0.0;  // min over joint groups
  // Alignment aggregates indexed by conflict mask, pooled over target classes.
  std::vector<double> per_alignment_acc;
  std::vector<std::size_t> per_alignment_count;
  double aligned_acc = 0.0;      // mask == 0
  double conflicting_acc = 0.0;  // pooled over all masks != 0
};

// Accuracy per joint group. Every joint group must be non-empty (holds for
// generated test sets by construction).
GroupMetrics group_accuracy(const std::vector<int>& predictions,
                            const data::LabeledDataset& dataset);
GroupMetrics group_accuracy(const nn::MlpModel& model,
                            const data::LabeledDataset& dataset);

// Mean absolute accuracy drop when bias k flips from aligned to conflicting,
// averaged over the 2^(K-1) alignment patterns of the remaining biases.
double bias_gap(const GroupMetrics& metrics, std::size_t bias_k);
double avg_bias_gap(const GroupMetrics& metrics);

struct PseudoLabelReport {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t flagged = 0;
};

// Ground truth "bias-conflicting" flag: conflicting on at least one bias.
std::vector<std::uint8_t> conflict_flags(const data::LabeledDataset& dataset);

// Flags a sample as bias-conflicting where its weight is below the threshold,
// then scores the flags against the hidden conflict ground truth.
PseudoLabelReport pseudo_label_quality(const weighting::WeightVector& weights,
                                       const data::LabeledDataset& dataset,
                                       double threshold);
PseudoLabelReport score_flags(const std::vector<std::uint8_t>& flags,
                              const data::LabeledDataset& dataset,
                              double threshold_tag = 0.0);

// Flags the k samples with the largest losses (ties broken by lower index).
std::vector<std::uint8_t> flag_top_losses(const std::vector<double>& losses,
                                          std::size_t k);

struct ErrorCurveRow {
  std::size_t epoch = 0;
  std::string group;  // alignment pattern, e.g. "AC"
  double error_rate = 0.0;
};

enum class HistoryStream { Biased, Target };

// (epoch, group, error_rate) rows for plotting, one row per epoch and
// non-empty alignment group of the chosen model stream.
std::vector<ErrorCurveRow> error_curves(const train::TrainResult& result,
                                        std::size_t n_biases,
                                        HistoryStream stream);

}  // namespace echoes::metrics

// Sample-weight mathematics: the echo-chamber decay rule with class-level
// gating, weight inversion with a cap, class-level balancing, and the
// relative-difficulty weight used by the LfF baseline.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace echoes::weighting {

struct WeightVector {
  std::vector<double> weights;    // one per training sample
  std::size_t epoch_count = 0;    // completed update rounds

  static WeightVector ones(std::size_t n) { return {std::vector<double>(n, 1.0), 0}; }
};

struct ClassErrorReport {
  std::vector<double> per_class_error;          // [0,1] per class
  std::vector<std::uint8_t> per_sample_correct;
};

// Error rate per class. Every class must appear at least once, otherwise the
// rate is undefined and the call is rejected.
ClassErrorReport class_errors(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              std::size_t n_classes);

// One echo-chamber round: a sample's weight is multiplied by alpha iff it was
// misclassified and its class error this round is strictly below t_error.
// All other weights pass through bit-identically. alpha in (0, 1]: zero is
// excluded so the inverted weights stay finite.
WeightVector echo_update(WeightVector w, const ClassErrorReport& report,
                         const std::vector<int>& labels, double alpha,
                         double t_error);

// out_i = min(1 / w_i, cap). Requires strictly positive weights and cap >= 1.
WeightVector invert(const WeightVector& w, double cap);

// Rescales each class by prod_g S_g / S_c (S_g = pre-balance weight sum of
// class g) so that all classes end with the same weight sum. The within-class
// proportions are untouched: one common factor per class. With
// rescale_to_unit_mean (default) the result is then divided by its mean so the
// absolute scale stays O(1) regardless of class count.
WeightVector class_balance(WeightVector w, const std::vector<int>& labels,
                           std::size_t n_classes,
                           bool rescale_to_unit_mean = true);

// L_B / (L_B + L_D); rejected when both losses are zero.
double lff_weight(double loss_biased, double loss_target);

struct WeightSnapshot {
  std::size_t epoch = 0;
  std::vector<double> weights;
};

// Diagnostic export, one row per (epoch, sample): epoch,sample_index,weight.
void save_weight_snapshots_csv(const std::string& path,
                               const std::vector<WeightSnapshot>& snapshots,
                               const std::string& provenance = "");

}  // namespace echoes::weighting

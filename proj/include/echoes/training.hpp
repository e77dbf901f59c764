// Trainers: the echo-chamber biased model, the joint biased/target method,
// and the baselines (plain ERM, LfF, JTT, GroupDRO). The optimization cores
// operate on a DatasetView (features + targets only); instrumented wrappers
// own the labeled dataset and turn per-epoch telemetry into group-level
// diagnostics. GroupDRO is the supervised reference and is the only core
// that receives bias labels.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "echoes/data.hpp"
#include "echoes/nn.hpp"
#include "echoes/weighting.hpp"

namespace echoes::train {

enum class Method { Vanilla, Echoes, Lff, Jtt, GroupDro };

const char* method_name(Method m);
Method method_from_name(const std::string& name);  // throws on unknown name

struct TrainConfig {
  Method method = Method::Echoes;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 3e-4;
  double alpha = 0.5;      // echo decay factor, (0, 1]
  double lambda = 1000.0;  // debiased-term scale in the joint loss
  double t_error = 0.5;    // class-error gate for the echo update
  double q = 0.7;          // GCE exponent for the LfF biased model
  std::size_t jtt_first_stage_epochs = 2;
  double jtt_upweight = 20.0;
  double groupdro_step = 0.01;
  double invert_cap = 1e6;      // cap on inverted weights
  bool balance_rescale = true;  // rescale balanced weights to mean 1
  std::vector<std::size_t> hidden_dims = {32};
  std::uint64_t seed = 0;
  bool record_weight_snapshots = false;

  void validate() const;  // throws std::invalid_argument
};

// Per-epoch observation handed to the caller while a core runs. Pointers are
// valid only during the callback. Group-blind by construction: predictions
// and weights are per-sample, never per-group.
struct EpochTelemetry {
  std::size_t epoch = 0;  // 1-based
  std::size_t batches = 0;
  std::optional<double> loss_biased;
  std::optional<double> loss_debiased;
  const std::vector<int>* predictions_biased = nullptr;
  const std::vector<int>* predictions_target = nullptr;
  const std::vector<double>* weights = nullptr;
  const std::vector<double>* group_weights = nullptr;  // GroupDRO only
  const nn::MlpModel* biased_model = nullptr;
  const nn::MlpModel* target_model = nullptr;
};
using EpochObserver = std::function<void(const EpochTelemetry&)>;

struct CoreResult {
  nn::MlpModel target_model;
  std::optional<nn::MlpModel> biased_model;
  std::optional<weighting::WeightVector> final_biased_weights;
  std::vector<std::string> warnings;
};

// Optimization cores. Deterministic for a fixed (config, seed): model
// initialization and epoch shuffles come from fixed derived streams.
CoreResult vanilla_core(data::DatasetView view, const TrainConfig& cfg,
                        const EpochObserver& observe = {});
CoreResult biased_echo_core(data::DatasetView view, const TrainConfig& cfg,
                            const EpochObserver& observe = {});
CoreResult echoes_core(data::DatasetView view, const TrainConfig& cfg,
                       const EpochObserver& observe = {});
CoreResult lff_core(data::DatasetView view, const TrainConfig& cfg,
                    const EpochObserver& observe = {});
CoreResult jtt_core(data::DatasetView view, const TrainConfig& cfg,
                    const EpochObserver& observe = {});
CoreResult groupdro_core(const data::LabeledDataset& dataset,
                         const TrainConfig& cfg,
                         const EpochObserver& observe = {});

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> loss_biased;
  std::optional<double> loss_debiased;
  // Train error rate per alignment pattern (indexed by conflict mask),
  // pooled over target classes; empty when the stream is absent. Entries for
  // empty groups are 0 and are skipped on export (see group_counts).
  std::vector<double> group_error_biased;
  std::vector<double> group_error_target;
  std::optional<double> mean_weight_aligned;
  std::optional<double> mean_weight_conflicting;
};

struct TrainResult {
  nn::MlpModel target_model;
  std::optional<nn::MlpModel> biased_model;
  std::optional<weighting::WeightVector> final_biased_weights;
  std::vector<EpochRecord> history;  // exactly config.epochs entries
  std::vector<std::size_t> group_counts;  // train samples per conflict mask
  std::vector<weighting::WeightSnapshot> weight_snapshots;  // if requested
  std::vector<std::string> warnings;
};

// Instrumented trainers: run the matching core on dataset.view() and join the
// telemetry with the hidden bias labels to produce group-level history.
TrainResult train_vanilla(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult train_biased_echo(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult train_echoes(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult train_lff(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult train_jtt(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult train_groupdro(const data::LabeledDataset& dataset, TrainConfig cfg);
TrainResult run_training(const data::LabeledDataset& dataset, const TrainConfig& cfg);

// History CSV: epoch,split,group,error_rate,mean_weight_aligned,
// mean_weight_conflicting,loss_biased,loss_debiased; one row per epoch,
// model stream ("biased"/"target") and non-empty alignment group.
void write_history_csv(const std::string& path, const TrainResult& result,
                       std::size_t n_biases, const std::string& provenance = "");

namespace detail {

// Derived RNG streams shared by every core, so that trainers that must match
// bit-for-bit (e.g. the joint method at alpha=1 vs. plain ERM) consume
// identical sequences.
inline constexpr std::uint64_t kStreamInitPrimary = 0;
inline constexpr std::uint64_t kStreamInitSecondary = 1;
inline constexpr std::uint64_t kStreamShuffle = 2;

// One pass of weighted-CE minibatch Adam over `epochs` epochs with static
// per-sample weights. Shuffle order is drawn from `shuffle_rng`, continuing
// whatever sequence the caller already consumed. Returns the mean over
// batches of the per-batch weighted-mean loss, one entry per epoch.
std::vector<double> fit_static_weights(data::DatasetView view,
                                       nn::MlpModel& model,
                                       nn::AdamState& adam,
                                       const std::vector<double>& weights,
                                       std::size_t epochs,
                                       std::size_t batch_size,
                                       Rng& shuffle_rng,
                                       const std::function<void(std::size_t, double)>&
                                           epoch_done = {});

// Per-sample LfF weights from current per-sample CE losses; 0.5 where both
// losses are exactly zero (neither model prefers the sample).
std::vector<double> lff_batch_weights(const std::vector<double>& loss_biased,
                                      const std::vector<double>& loss_target);

}  // namespace detail

}  // namespace echoes::train

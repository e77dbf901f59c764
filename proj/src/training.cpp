#include "echoes/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "echoes/csv.hpp"
#include "echoes/rng.hpp"

namespace echoes::train {

namespace {

using data::DatasetView;
using data::LabeledDataset;
using nn::AdamState;
using nn::ForwardTrace;
using nn::MlpModel;
using weighting::ClassErrorReport;
using weighting::WeightVector;

std::vector<std::size_t> model_dims(const DatasetView& view, const TrainConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(view.features->cols);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(view.n_classes);
  return dims;
}

void check_view(const DatasetView& view) {
  if (view.size() == 0) {
    throw std::invalid_argument("train: empty dataset");
  }
  if (view.n_classes < 2) {
    throw std::invalid_argument("train: need at least 2 classes");
  }
}

struct Batch {
  Matrix2D x;
  std::vector<int> y;
  const std::size_t* idx;
  std::size_t count;
};

Batch gather(const DatasetView& view, const std::vector<std::size_t>& order,
             std::size_t begin, std::size_t end) {
  const std::size_t count = end - begin;
  const std::size_t dim = view.features->cols;
  Batch batch;
  batch.x = Matrix2D(count, dim);
  batch.y.resize(count);
  batch.idx = order.data() + begin;
  batch.count = count;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order[begin + i];
    std::copy_n(view.features->row(src), dim, batch.x.row(i));
    batch.y[i] = (*view.targets)[src];
  }
  return batch;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

double checked_mean(double sum, std::size_t count) {
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::Vanilla:
      return "vanilla";
    case Method::Echoes:
      return "echoes";
    case Method::Lff:
      return "lff";
    case Method::Jtt:
      return "jtt";
    case Method::GroupDro:
      return "groupdro";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "vanilla") return Method::Vanilla;
  if (name == "echoes") return Method::Echoes;
  if (name == "lff") return Method::Lff;
  if (name == "jtt") return Method::Jtt;
  if (name == "groupdro") return Method::GroupDro;
  throw std::invalid_argument("unknown method: '" + name + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) {
    throw std::invalid_argument("config: batch_size must be positive");
  }
  if (!(lr > 0.0)) {
    throw std::invalid_argument("config: lr must be positive");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("config: alpha must be in (0, 1]");
  }
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("config: lambda must be nonnegative");
  }
  if (!(t_error > 0.0 && t_error <= 1.0)) {
    throw std::invalid_argument("config: t_error must be in (0, 1]");
  }
  if (!(q > 0.0 && q <= 1.0)) {
    throw std::invalid_argument("config: q must be in (0, 1]");
  }
  if (!(jtt_upweight >= 1.0)) {
    throw std::invalid_argument("config: jtt_upweight must be >= 1");
  }
  if (!(groupdro_step >= 0.0)) {
    throw std::invalid_argument("config: groupdro_step must be nonnegative");
  }
  if (!(invert_cap >= 1.0)) {
    throw std::invalid_argument("config: invert_cap must be >= 1");
  }
  for (const std::size_t h : hidden_dims) {
    if (h == 0) {
      throw std::invalid_argument("config: zero hidden dimension");
    }
  }
}

namespace detail {

std::vector<double> fit_static_weights(DatasetView view, MlpModel& model,
                                       AdamState& adam,
                                       const std::vector<double>& weights,
                                       std::size_t epochs,
                                       std::size_t batch_size, Rng& shuffle_rng,
                                       const std::function<void(std::size_t, double)>&
                                           epoch_done) {
  const std::size_t n = view.size();
  if (weights.size() != n) {
    throw std::invalid_argument("fit_static_weights: weight count mismatch");
  }
  std::vector<std::size_t> order(n);
  std::vector<double> epoch_losses;
  epoch_losses.reserve(epochs);
  std::vector<double> w;
  for (std::size_t e = 0; e < epochs; ++e) {
    // Each epoch shuffles the identity permutation with the continuing
    // stream, so the batch order depends only on (seed, epoch index).
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      const std::size_t end = std::min(n, begin + batch_size);
      Batch batch = gather(view, order, begin, end);
      w.resize(batch.count);
      for (std::size_t i = 0; i < batch.count; ++i) {
        w[i] = weights[batch.idx[i]];
      }
      ForwardTrace trace;
      const Matrix2D logits = nn::forward(model, batch.x, trace);
      const nn::LossOutput loss = nn::weighted_cross_entropy(logits, batch.y, w);
      const nn::Gradients grads = nn::backward(model, trace, loss.logit_grad);
      nn::adam_step(adam, model, grads);
      loss_sum += loss.total;
      ++n_batches;
    }
    const double mean_loss = checked_mean(loss_sum, n_batches);
    epoch_losses.push_back(mean_loss);
    if (epoch_done) {
      epoch_done(e, mean_loss);
    }
  }
  return epoch_losses;
}

std::vector<double> lff_batch_weights(const std::vector<double>& loss_biased,
                                      const std::vector<double>& loss_target) {
  if (loss_biased.size() != loss_target.size()) {
    throw std::invalid_argument("lff_batch_weights: size mismatch");
  }
  std::vector<double> w(loss_biased.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    // Both losses exactly zero means both models are maximally confident and
    // correct; the sample carries no preference either way.
    w[i] = (loss_biased[i] == 0.0 && loss_target[i] == 0.0)
               ? 0.5
               : weighting::lff_weight(loss_biased[i], loss_target[i]);
  }
  return w;
}

}  // namespace detail

CoreResult vanilla_core(DatasetView view, const TrainConfig& cfg,
                        const EpochObserver& observe) {
  cfg.validate();
  check_view(view);
  const std::size_t n = view.size();
  Rng init_rng(cfg.seed, detail::kStreamInitPrimary);
  MlpModel model = nn::make_mlp(model_dims(view, cfg), init_rng);
  AdamState adam = nn::make_adam(model, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);
  const std::vector<double> ones(n, 1.0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss =
        detail::fit_static_weights(view, model, adam, ones, 1, cfg.batch_size,
                                   shuffle_rng)[0];
    if (observe) {
      const std::vector<int> preds = nn::predict(model, *view.features);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = batches_per_epoch(n, cfg.batch_size);
      t.loss_debiased = loss;
      t.predictions_target = &preds;
      t.weights = &ones;
      t.target_model = &model;
      observe(t);
    }
  }
  CoreResult result;
  result.target_model = std::move(model);
  return result;
}

CoreResult biased_echo_core(DatasetView view, const TrainConfig& cfg,
                            const EpochObserver& observe) {
  cfg.validate();
  check_view(view);
  const std::size_t n = view.size();
  Rng init_rng(cfg.seed, detail::kStreamInitPrimary);
  MlpModel model = nn::make_mlp(model_dims(view, cfg), init_rng);
  AdamState adam = nn::make_adam(model, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);
  WeightVector wb = WeightVector::ones(n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss =
        detail::fit_static_weights(view, model, adam, wb.weights, 1,
                                   cfg.batch_size, shuffle_rng)[0];
    const std::vector<int> preds = nn::predict(model, *view.features);
    const ClassErrorReport report =
        weighting::class_errors(preds, *view.targets, view.n_classes);
    wb = weighting::echo_update(std::move(wb), report, *view.targets, cfg.alpha,
                                cfg.t_error);
    if (observe) {
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = batches_per_epoch(n, cfg.batch_size);
      t.loss_biased = loss;
      t.predictions_biased = &preds;
      t.weights = &wb.weights;
      t.biased_model = &model;
      observe(t);
    }
  }
  CoreResult result;
  result.biased_model = model;
  result.target_model = std::move(model);
  result.final_biased_weights = std::move(wb);
  return result;
}

CoreResult echoes_core(DatasetView view, const TrainConfig& cfg,
                       const EpochObserver& observe) {
  cfg.validate();
  check_view(view);
  const std::size_t n = view.size();
  Rng init_f(cfg.seed, detail::kStreamInitPrimary);
  Rng init_g(cfg.seed, detail::kStreamInitSecondary);
  const auto dims = model_dims(view, cfg);
  MlpModel f = nn::make_mlp(dims, init_f);
  MlpModel g = nn::make_mlp(dims, init_g);
  AdamState adam_f = nn::make_adam(f, cfg.lr);
  AdamState adam_g = nn::make_adam(g, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);

  WeightVector wb = WeightVector::ones(n);
  std::vector<double> wd(n, 0.0);  // target model idle until the first refresh

  std::vector<std::size_t> order(n);
  std::vector<double> wf_batch, wd_batch;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_f_sum = 0.0;
    double loss_g_sum = 0.0;
    std::size_t n_batches = 0;
    std::size_t g_batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      Batch batch = gather(view, order, begin, end);
      wf_batch.resize(batch.count);
      wd_batch.resize(batch.count);
      double wd_sum = 0.0;
      for (std::size_t i = 0; i < batch.count; ++i) {
        wf_batch[i] = wb.weights[batch.idx[i]];
        wd_batch[i] = wd[batch.idx[i]];
        wd_sum += wd_batch[i];
      }

      ForwardTrace trace_f;
      const Matrix2D logits_f = nn::forward(f, batch.x, trace_f);
      const nn::LossOutput loss_f =
          nn::weighted_cross_entropy(logits_f, batch.y, wf_batch);
      const nn::Gradients grads_f = nn::backward(f, trace_f, loss_f.logit_grad);

      if (wd_sum > 0.0) {
        ForwardTrace trace_g;
        const Matrix2D logits_g = nn::forward(g, batch.x, trace_g);
        nn::LossOutput loss_g =
            nn::weighted_cross_entropy(logits_g, batch.y, wd_batch);
        for (double& v : loss_g.logit_grad.values) {
          v *= cfg.lambda;
        }
        const nn::Gradients grads_g = nn::backward(g, trace_g, loss_g.logit_grad);
        nn::adam_step(adam_g, g, grads_g);
        loss_g_sum += loss_g.total;
        ++g_batches;
      }

      nn::adam_step(adam_f, f, grads_f);
      loss_f_sum += loss_f.total;
      ++n_batches;
    }

    const std::vector<int> preds_f = nn::predict(f, *view.features);
    const ClassErrorReport report =
        weighting::class_errors(preds_f, *view.targets, view.n_classes);
    wb = weighting::echo_update(std::move(wb), report, *view.targets, cfg.alpha,
                                cfg.t_error);
    wd = weighting::class_balance(weighting::invert(wb, cfg.invert_cap),
                                  *view.targets, view.n_classes,
                                  cfg.balance_rescale)
             .weights;

    if (observe) {
      const std::vector<int> preds_g = nn::predict(g, *view.features);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = n_batches;
      t.loss_biased = checked_mean(loss_f_sum, n_batches);
      if (g_batches > 0) {
        t.loss_debiased = checked_mean(loss_g_sum, g_batches);
      }
      t.predictions_biased = &preds_f;
      t.predictions_target = &preds_g;
      t.weights = &wb.weights;
      t.biased_model = &f;
      t.target_model = &g;
      observe(t);
    }
  }

  CoreResult result;
  result.target_model = std::move(g);
  result.biased_model = std::move(f);
  result.final_biased_weights = std::move(wb);
  return result;
}

CoreResult lff_core(DatasetView view, const TrainConfig& cfg,
                    const EpochObserver& observe) {
  cfg.validate();
  check_view(view);
  const std::size_t n = view.size();
  Rng init_f(cfg.seed, detail::kStreamInitPrimary);
  Rng init_g(cfg.seed, detail::kStreamInitSecondary);
  const auto dims = model_dims(view, cfg);
  MlpModel f = nn::make_mlp(dims, init_f);
  MlpModel g = nn::make_mlp(dims, init_g);
  AdamState adam_f = nn::make_adam(f, cfg.lr);
  AdamState adam_g = nn::make_adam(g, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);

  std::vector<std::size_t> order(n);
  std::vector<double> unit;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_f_sum = 0.0;
    double loss_g_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      Batch batch = gather(view, order, begin, end);
      unit.assign(batch.count, 1.0);

      ForwardTrace trace_f;
      const Matrix2D logits_f = nn::forward(f, batch.x, trace_f);
      const nn::LossOutput gce = nn::gce_loss(logits_f, batch.y, cfg.q);

      ForwardTrace trace_g;
      const Matrix2D logits_g = nn::forward(g, batch.x, trace_g);
      const nn::LossOutput ce_f =
          nn::weighted_cross_entropy(logits_f, batch.y, unit);
      const nn::LossOutput ce_g =
          nn::weighted_cross_entropy(logits_g, batch.y, unit);
      const std::vector<double> w =
          detail::lff_batch_weights(ce_f.per_sample, ce_g.per_sample);
      const nn::LossOutput loss_g =
          nn::weighted_cross_entropy(logits_g, batch.y, w);

      const nn::Gradients grads_f = nn::backward(f, trace_f, gce.logit_grad);
      const nn::Gradients grads_g = nn::backward(g, trace_g, loss_g.logit_grad);
      nn::adam_step(adam_f, f, grads_f);
      nn::adam_step(adam_g, g, grads_g);
      loss_f_sum += gce.total;
      loss_g_sum += loss_g.total;
      ++n_batches;
    }

    if (observe) {
      const std::vector<int> preds_f = nn::predict(f, *view.features);
      const std::vector<int> preds_g = nn::predict(g, *view.features);
      const std::vector<double> ce_f_full =
          nn::per_sample_ce(f, *view.features, *view.targets);
      const std::vector<double> ce_g_full =
          nn::per_sample_ce(g, *view.features, *view.targets);
      const std::vector<double> w_full =
          detail::lff_batch_weights(ce_f_full, ce_g_full);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = n_batches;
      t.loss_biased = checked_mean(loss_f_sum, n_batches);
      t.loss_debiased = checked_mean(loss_g_sum, n_batches);
      t.predictions_biased = &preds_f;
      t.predictions_target = &preds_g;
      t.weights = &w_full;
      t.biased_model = &f;
      t.target_model = &g;
      observe(t);
    }
  }

  CoreResult result;
  result.target_model = std::move(g);
  result.biased_model = std::move(f);
  return result;
}

CoreResult jtt_core(DatasetView view, const TrainConfig& cfg,
                    const EpochObserver& observe) {
  cfg.validate();
  check_view(view);
  if (cfg.jtt_first_stage_epochs >= cfg.epochs) {
    throw std::invalid_argument(
        "config: jtt_first_stage_epochs must be less than epochs");
  }
  const std::size_t n = view.size();
  Rng init_a(cfg.seed, detail::kStreamInitPrimary);
  MlpModel identifier = nn::make_mlp(model_dims(view, cfg), init_a);
  AdamState adam_a = nn::make_adam(identifier, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);
  const std::vector<double> ones(n, 1.0);

  for (std::size_t epoch = 1; epoch <= cfg.jtt_first_stage_epochs; ++epoch) {
    const double loss =
        detail::fit_static_weights(view, identifier, adam_a, ones, 1,
                                   cfg.batch_size, shuffle_rng)[0];
    if (observe) {
      const std::vector<int> preds = nn::predict(identifier, *view.features);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = batches_per_epoch(n, cfg.batch_size);
      t.loss_biased = loss;
      t.predictions_biased = &preds;
      t.weights = &ones;
      t.biased_model = &identifier;
      observe(t);
    }
  }

  // Error set: training samples the stage-1 model misclassifies.
  const std::vector<int> stage1_preds = nn::predict(identifier, *view.features);
  std::vector<double> stage2_weights(n, 1.0);
  std::size_t error_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (stage1_preds[i] != (*view.targets)[i]) {
      stage2_weights[i] = cfg.jtt_upweight;
      ++error_count;
    }
  }
  CoreResult result;
  if (error_count == 0) {
    result.warnings.push_back(
        "jtt: stage-1 error set is empty; stage 2 reduces to plain training");
  }

  Rng init_b(cfg.seed, detail::kStreamInitSecondary);
  MlpModel final_model = nn::make_mlp(model_dims(view, cfg), init_b);
  AdamState adam_b = nn::make_adam(final_model, cfg.lr);
  for (std::size_t epoch = cfg.jtt_first_stage_epochs + 1; epoch <= cfg.epochs;
       ++epoch) {
    const double loss =
        detail::fit_static_weights(view, final_model, adam_b, stage2_weights, 1,
                                   cfg.batch_size, shuffle_rng)[0];
    if (observe) {
      const std::vector<int> preds = nn::predict(final_model, *view.features);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = batches_per_epoch(n, cfg.batch_size);
      t.loss_debiased = loss;
      t.predictions_target = &preds;
      t.weights = &stage2_weights;
      t.target_model = &final_model;
      observe(t);
    }
  }

  result.target_model = std::move(final_model);
  result.biased_model = std::move(identifier);
  return result;
}

CoreResult groupdro_core(const LabeledDataset& dataset, const TrainConfig& cfg,
                         const EpochObserver& observe) {
  cfg.validate();
  const DatasetView view = dataset.view();
  check_view(view);
  if (dataset.n_biases == 0) {
    throw std::invalid_argument("groupdro: dataset has no bias labels");
  }
  const std::size_t n = view.size();
  const std::size_t n_groups = dataset.n_classes
                               << dataset.n_biases;  // C * 2^K joint groups
  std::vector<std::size_t> sample_group(n);
  for (std::size_t i = 0; i < n; ++i) {
    sample_group[i] = data::group_index(data::group_of(dataset, i),
                                        dataset.n_biases);
  }

  Rng init_rng(cfg.seed, detail::kStreamInitPrimary);
  MlpModel model = nn::make_mlp(model_dims(view, cfg), init_rng);
  AdamState adam = nn::make_adam(model, cfg.lr);
  Rng shuffle_rng(cfg.seed, detail::kStreamShuffle);

  // Weights live on the groups that actually occur in the training data;
  // an unobserved group cannot be reweighted.
  std::vector<std::size_t> group_total(n_groups, 0);
  for (const std::size_t gidx : sample_group) {
    group_total[gidx] += 1;
  }
  std::size_t populated = 0;
  for (const std::size_t count : group_total) {
    populated += count > 0;
  }
  std::vector<double> group_q(n_groups, 0.0);
  for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
    if (group_total[gidx] > 0) {
      group_q[gidx] = 1.0 / static_cast<double>(populated);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> unit;
  std::vector<std::size_t> batch_group_count(n_groups);
  std::vector<double> batch_group_loss(n_groups);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      Batch batch = gather(view, order, begin, end);
      unit.assign(batch.count, 1.0);

      ForwardTrace trace;
      const Matrix2D logits = nn::forward(model, batch.x, trace);
      nn::LossOutput ce = nn::weighted_cross_entropy(logits, batch.y, unit);

      std::fill(batch_group_count.begin(), batch_group_count.end(), 0);
      std::fill(batch_group_loss.begin(), batch_group_loss.end(), 0.0);
      for (std::size_t i = 0; i < batch.count; ++i) {
        const std::size_t gidx = sample_group[batch.idx[i]];
        batch_group_count[gidx] += 1;
        batch_group_loss[gidx] += ce.per_sample[i];
      }
      // Exponentiated-gradient ascent on the group weights, then normalize.
      double q_sum = 0.0;
      for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
        if (batch_group_count[gidx] > 0) {
          batch_group_loss[gidx] /=
              static_cast<double>(batch_group_count[gidx]);
          group_q[gidx] *= std::exp(cfg.groupdro_step * batch_group_loss[gidx]);
        }
        q_sum += group_q[gidx];
      }
      for (double& qv : group_q) {
        qv /= q_sum;
      }

      // Batch objective: sum_g q_g * mean loss of g. The unit-weight CE grad
      // rows are (1/count)(p - onehot); rescale row i to q_g / n_g(batch).
      double batch_loss = 0.0;
      for (std::size_t gidx = 0; gidx < n_groups; ++gidx) {
        if (batch_group_count[gidx] > 0) {
          batch_loss += group_q[gidx] * batch_group_loss[gidx];
        }
      }
      for (std::size_t i = 0; i < batch.count; ++i) {
        const std::size_t gidx = sample_group[batch.idx[i]];
        const double scale = static_cast<double>(batch.count) * group_q[gidx] /
                             static_cast<double>(batch_group_count[gidx]);
        double* row = ce.logit_grad.row(i);
        for (std::size_t j = 0; j < ce.logit_grad.cols; ++j) {
          row[j] *= scale;
        }
      }
      const nn::Gradients grads = nn::backward(model, trace, ce.logit_grad);
      nn::adam_step(adam, model, grads);
      loss_sum += batch_loss;
      ++n_batches;
    }

    if (observe) {
      const std::vector<int> preds = nn::predict(model, *view.features);
      EpochTelemetry t;
      t.epoch = epoch;
      t.batches = n_batches;
      t.loss_debiased = checked_mean(loss_sum, n_batches);
      t.predictions_target = &preds;
      t.group_weights = &group_q;
      t.target_model = &model;
      observe(t);
    }
  }

  CoreResult result;
  result.target_model = std::move(model);
  return result;
}

namespace {

// Joins bias-blind telemetry with the hidden bias labels.
class Instrumenter {
 public:
  Instrumenter(const LabeledDataset& dataset, const TrainConfig& cfg)
      : dataset_(dataset), cfg_(cfg) {
    const std::size_t n_masks = std::size_t{1} << dataset.n_biases;
    masks_.resize(dataset.size());
    counts_.assign(n_masks, 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      masks_[i] = data::group_of(dataset, i).conflict_mask;
      counts_[masks_[i]] += 1;
    }
  }

  EpochObserver observer() {
    return [this](const EpochTelemetry& t) { record(t); };
  }

  void finish(CoreResult core, TrainResult& out) {
    out.target_model = std::move(core.target_model);
    out.biased_model = std::move(core.biased_model);
    out.final_biased_weights = std::move(core.final_biased_weights);
    out.warnings = std::move(core.warnings);
    out.history = std::move(history_);
    out.weight_snapshots = std::move(snapshots_);
    out.group_counts = counts_;
    if (out.history.size() != cfg_.epochs) {
      throw std::logic_error("training: history entry count != epochs");
    }
  }

 private:
  std::vector<double> group_errors(const std::vector<int>& preds) const {
    std::vector<double> wrong(counts_.size(), 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] != dataset_.targets[i]) {
        wrong[masks_[i]] += 1.0;
      }
    }
    for (std::size_t m = 0; m < wrong.size(); ++m) {
      wrong[m] = counts_[m] == 0 ? 0.0
                                 : wrong[m] / static_cast<double>(counts_[m]);
    }
    return wrong;
  }

  void record(const EpochTelemetry& t) {
    EpochRecord rec;
    rec.epoch = t.epoch;
    rec.loss_biased = t.loss_biased;
    rec.loss_debiased = t.loss_debiased;
    if ((t.loss_biased && !std::isfinite(*t.loss_biased)) ||
        (t.loss_debiased && !std::isfinite(*t.loss_debiased))) {
      throw std::runtime_error("training diverged: non-finite loss at epoch " +
                               std::to_string(t.epoch));
    }
    if (t.predictions_biased) {
      rec.group_error_biased = group_errors(*t.predictions_biased);
    }
    if (t.predictions_target) {
      rec.group_error_target = group_errors(*t.predictions_target);
    }
    if (t.weights) {
      double sum_aligned = 0.0, sum_conflicting = 0.0;
      std::size_t n_aligned = 0, n_conflicting = 0;
      for (std::size_t i = 0; i < t.weights->size(); ++i) {
        const double w = (*t.weights)[i];
        if (!std::isfinite(w)) {
          throw std::runtime_error("training diverged: non-finite weight");
        }
        if (masks_[i] == 0) {
          sum_aligned += w;
          ++n_aligned;
        } else {
          sum_conflicting += w;
          ++n_conflicting;
        }
      }
      if (n_aligned > 0) {
        rec.mean_weight_aligned = sum_aligned / static_cast<double>(n_aligned);
      }
      if (n_conflicting > 0) {
        rec.mean_weight_conflicting =
            sum_conflicting / static_cast<double>(n_conflicting);
      }
      if (cfg_.record_weight_snapshots) {
        snapshots_.push_back({t.epoch, *t.weights});
      }
    }
    history_.push_back(std::move(rec));
  }

  const LabeledDataset& dataset_;
  const TrainConfig& cfg_;
  std::vector<std::uint32_t> masks_;
  std::vector<std::size_t> counts_;
  std::vector<EpochRecord> history_;
  std::vector<weighting::WeightSnapshot> snapshots_;
};

template <typename CoreFn>
TrainResult instrumented(const LabeledDataset& dataset, const TrainConfig& cfg,
                         CoreFn&& core) {
  Instrumenter inst(dataset, cfg);
  TrainResult result;
  inst.finish(core(inst.observer()), result);
  return result;
}

}  // namespace

TrainResult train_vanilla(const LabeledDataset& dataset, TrainConfig cfg) {
  cfg.method = Method::Vanilla;
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return vanilla_core(dataset.view(), cfg, obs);
  });
}

TrainResult train_biased_echo(const LabeledDataset& dataset, TrainConfig cfg) {
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return biased_echo_core(dataset.view(), cfg, obs);
  });
}

TrainResult train_echoes(const LabeledDataset& dataset, TrainConfig cfg) {
  cfg.method = Method::Echoes;
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return echoes_core(dataset.view(), cfg, obs);
  });
}

TrainResult train_lff(const LabeledDataset& dataset, TrainConfig cfg) {
  cfg.method = Method::Lff;
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return lff_core(dataset.view(), cfg, obs);
  });
}

TrainResult train_jtt(const LabeledDataset& dataset, TrainConfig cfg) {
  cfg.method = Method::Jtt;
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return jtt_core(dataset.view(), cfg, obs);
  });
}

TrainResult train_groupdro(const LabeledDataset& dataset, TrainConfig cfg) {
  cfg.method = Method::GroupDro;
  return instrumented(dataset, cfg, [&](const EpochObserver& obs) {
    return groupdro_core(dataset, cfg, obs);
  });
}

TrainResult run_training(const LabeledDataset& dataset, const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::Vanilla:
      return train_vanilla(dataset, cfg);
    case Method::Echoes:
      return train_echoes(dataset, cfg);
    case Method::Lff:
      return train_lff(dataset, cfg);
    case Method::Jtt:
      return train_jtt(dataset, cfg);
    case Method::GroupDro:
      return train_groupdro(dataset, cfg);
  }
  throw std::invalid_argument("run_training: unknown method");
}

void write_history_csv(const std::string& path, const TrainResult& result,
                       std::size_t n_biases, const std::string& provenance) {
  auto out = csv::open_out(path);
  if (!provenance.empty()) {
    out << "# " << provenance << "\n";
  }
  out << "epoch,split,group,error_rate,mean_weight_aligned,"
         "mean_weight_conflicting,loss_biased,loss_debiased\n";
  const auto opt = [](const std::optional<double>& v) {
    return v ? csv::fmt(*v) : std::string();
  };
  for (const EpochRecord& rec : result.history) {
    const auto emit = [&](const char* split, const std::vector<double>& errors,
                          const std::optional<double>& loss_b,
                          const std::optional<double>& loss_d) {
      for (std::size_t mask = 0; mask < errors.size(); ++mask) {
        if (result.group_counts[mask] == 0) {
          continue;
        }
        out << rec.epoch << ',' << split << ','
            << data::alignment_string(static_cast<std::uint32_t>(mask), n_biases)
            << ',' << csv::fmt(errors[mask]) << ',' << opt(rec.mean_weight_aligned)
            << ',' << opt(rec.mean_weight_conflicting) << ',' << opt(loss_b) << ','
            << opt(loss_d) << '\n';
      }
    };
    emit("biased", rec.group_error_biased, rec.loss_biased, rec.loss_debiased);
    emit("target", rec.group_error_target, rec.loss_biased, rec.loss_debiased);
  }
}

}  // namespace echoes::train

// Minimal dense feed-forward network: rectifier hidden layers, raw logits
// out, per-sample-weighted softmax losses, manual backprop, Adam. Everything
// is a value type; training code owns all state explicitly.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "echoes/matrix.hpp"
#include "echoes/rng.hpp"

namespace echoes::nn {

struct MlpModel {
  std::vector<std::size_t> layer_dims;        // input, hidden..., output
  std::vector<Matrix2D> weights;              // weights[l]: dims[l] x dims[l+1]
  std::vector<std::vector<double>> biases;    // biases[l]: dims[l+1]

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t parameter_count() const;
  bool finite() const;
};

// Weights uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
MlpModel make_mlp(const std::vector<std::size_t>& layer_dims, Rng& rng);

// Parameter-shaped container for gradients.
struct Gradients {
  std::vector<Matrix2D> weights;
  std::vector<std::vector<double>> biases;
};
Gradients zero_gradients(const MlpModel& model);

struct ForwardTrace {
  std::vector<Matrix2D> inputs;  // inputs[l] = activations fed to layer l
  std::vector<Matrix2D> pre;     // pre[l] = pre-activation output of layer l
};

Matrix2D forward(const MlpModel& model, const Matrix2D& batch);
Matrix2D forward(const MlpModel& model, const Matrix2D& batch, ForwardTrace& trace);

// Backprop of a loss gradient w.r.t. the logits through the stored trace.
Gradients backward(const MlpModel& model, const ForwardTrace& trace,
                   const Matrix2D& logit_grad);
// Convenience overload that recomputes the trace from the batch.
Gradients backward(const MlpModel& model, const Matrix2D& batch,
                   const Matrix2D& logit_grad);

struct LossOutput {
  double total = 0.0;               // weighted mean over the batch
  std::vector<double> per_sample;   // unweighted per-sample losses, >= 0
  Matrix2D logit_grad;              // d(total) / d(logits)
};

Matrix2D softmax_rows(const Matrix2D& logits);

// total = sum_i w_i * ce_i / sum_i w_i, ce_i = -log softmax(logits_i)[y_i].
// Rejects negative weights and all-zero weight batches.
LossOutput weighted_cross_entropy(const Matrix2D& logits,
                                  const std::vector<int>& labels,
                                  std::span<const double> weights);

// Generalized cross entropy (1 - p_y^q) / q, unweighted mean, q in (0, 1].
LossOutput gce_loss(const Matrix2D& logits, const std::vector<int>& labels,
                    double q);

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  double beta1_pow = 1.0;  // beta1^step, maintained incrementally
  double beta2_pow = 1.0;
  std::vector<Matrix2D> m_w, v_w;
  std::vector<std::vector<double>> m_b, v_b;
};

AdamState make_adam(const MlpModel& model, double lr);
void adam_step(AdamState& state, MlpModel& model, const Gradients& grads);

// Argmax class per row; ties resolve to the lowest index. Evaluates in
// row chunks to bound the working set.
std::vector<int> predict(const MlpModel& model, const Matrix2D& inputs,
                         std::size_t chunk_rows = 1024);

// Per-sample cross-entropy losses over a full dataset, chunked like predict().
std::vector<double> per_sample_ce(const MlpModel& model, const Matrix2D& inputs,
                                  const std::vector<int>& labels,
                                  std::size_t chunk_rows = 1024);

}  // namespace echoes::nn

#include "echoes/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace echoes::nn {

namespace {

void check_labels(const std::vector<int>& labels, std::size_t n_rows,
                  std::size_t n_classes) {
  if (labels.size() != n_rows) {
    throw std::invalid_argument("loss: labels/logits row mismatch");
  }
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw std::invalid_argument("loss: label out of range: " + std::to_string(y));
    }
  }
}

// Writes softmax of one logit row and returns log(sum exp(z - max)) + max - z_y,
// i.e. the cross entropy of the target class, without ever taking log(0).
double softmax_row_ce(const double* logits, std::size_t n_classes, int label,
                      double* probs) {
  double maxv = logits[0];
  for (std::size_t j = 1; j < n_classes; ++j) {
    maxv = std::max(maxv, logits[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n_classes; ++j) {
    probs[j] = std::exp(logits[j] - maxv);
    sum += probs[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n_classes; ++j) {
    probs[j] *= inv;
  }
  return std::log(sum) - (logits[label] - maxv);
}

}  // namespace

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

bool MlpModel::finite() const {
  for (const auto& w : weights) {
    if (!w.finite()) {
      return false;
    }
  }
  for (const auto& b : biases) {
    for (const double v : b) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

MlpModel make_mlp(const std::vector<std::size_t>& layer_dims, Rng& rng) {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("make_mlp: need at least input and output dims");
  }
  for (const std::size_t d : layer_dims) {
    if (d == 0) {
      throw std::invalid_argument("make_mlp: zero layer dimension");
    }
  }
  MlpModel model;
  model.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l];
    const std::size_t fan_out = layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix2D w(fan_in, fan_out);
    for (double& v : w.values) {
      v = rng.uniform(-limit, limit);
    }
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(fan_out, 0.0);
  }
  return model;
}

Gradients zero_gradients(const MlpModel& model) {
  Gradients g;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    g.weights.emplace_back(model.weights[l].rows, model.weights[l].cols);
    g.biases.emplace_back(model.biases[l].size(), 0.0);
  }
  return g;
}

Matrix2D forward(const MlpModel& model, const Matrix2D& batch, ForwardTrace& trace) {
  if (batch.cols != model.input_dim()) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols) +
                                " features, model expects " +
                                std::to_string(model.input_dim()));
  }
  const std::size_t n_layers = model.num_layers();
  trace.inputs.clear();
  trace.pre.clear();
  trace.inputs.reserve(n_layers);
  trace.pre.reserve(n_layers);
  Matrix2D cur = batch;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix2D z = matmul(cur, model.weights[l]);
    kernels::ops().add_bias(z.values.data(), model.biases[l].data(), z.rows, z.cols);
    trace.inputs.push_back(std::move(cur));
    if (l + 1 < n_layers) {
      Matrix2D a(z.rows, z.cols);
      kernels::ops().relu(z.values.data(), a.values.data(), z.size());
      trace.pre.push_back(std::move(z));
      cur = std::move(a);
    } else {
      trace.pre.push_back(z);  // keep a copy; z is the output
      cur = std::move(z);
    }
  }
  return cur;
}

Matrix2D forward(const MlpModel& model, const Matrix2D& batch) {
  ForwardTrace trace;
  return forward(model, batch, trace);
}

Gradients backward(const MlpModel& model, const ForwardTrace& trace,
                   const Matrix2D& logit_grad) {
  const std::size_t n_layers = model.num_layers();
  if (trace.inputs.size() != n_layers || trace.pre.size() != n_layers) {
    throw std::invalid_argument("backward: trace does not match model");
  }
  if (logit_grad.rows != trace.pre.back().rows ||
      logit_grad.cols != model.output_dim()) {
    throw std::invalid_argument("backward: logit_grad shape mismatch");
  }
  Gradients grads = zero_gradients(model);
  Matrix2D delta = logit_grad;
  for (std::size_t l = n_layers; l-- > 0;) {
    // dW = X^T * delta, dB = column sums of delta.
    grads.weights[l] = matmul(transpose(trace.inputs[l]), delta);
    auto& db = grads.biases[l];
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* row = delta.row(i);
      for (std::size_t j = 0; j < delta.cols; ++j) {
        db[j] += row[j];
      }
    }
    if (l > 0) {
      Matrix2D da = matmul(delta, transpose(model.weights[l]));
      Matrix2D dz(da.rows, da.cols);
      kernels::ops().relu_grad(trace.pre[l - 1].values.data(), da.values.data(),
                               dz.values.data(), da.size());
      delta = std::move(dz);
    }
  }
  return grads;
}

Gradients backward(const MlpModel& model, const Matrix2D& batch,
                   const Matrix2D& logit_grad) {
  ForwardTrace trace;
  forward(model, batch, trace);
  return backward(model, trace, logit_grad);
}

Matrix2D softmax_rows(const Matrix2D& logits) {
  Matrix2D probs(logits.rows, logits.cols);
  std::vector<double> row(logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    softmax_row_ce(logits.row(i), logits.cols, 0, probs.row(i));
  }
  return probs;
}

LossOutput weighted_cross_entropy(const Matrix2D& logits,
                                  const std::vector<int>& labels,
                                  std::span<const double> weights) {
  const std::size_t n = logits.rows;
  const std::size_t n_classes = logits.cols;
  if (n == 0) {
    throw std::invalid_argument("weighted_cross_entropy: empty batch");
  }
  check_labels(labels, n, n_classes);
  if (weights.size() != n) {
    throw std::invalid_argument("weighted_cross_entropy: weight/batch size mismatch");
  }
  double weight_sum = 0.0;
  for (const double w : weights) {
    if (!(w >= 0.0)) {
      throw std::invalid_argument("weighted_cross_entropy: negative weight");
    }
    weight_sum += w;
  }
  if (weight_sum <= 0.0) {
    throw std::invalid_argument(
        "weighted_cross_entropy: all weights zero, mean undefined");
  }

  LossOutput out;
  out.per_sample.resize(n);
  out.logit_grad = Matrix2D(n, n_classes);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* grow = out.logit_grad.row(i);
    const double ce = softmax_row_ce(logits.row(i), n_classes, labels[i], grow);
    out.per_sample[i] = ce;
    acc += weights[i] * ce;
    const double scale = weights[i] / weight_sum;
    for (std::size_t j = 0; j < n_classes; ++j) {
      grow[j] *= scale;
    }
    grow[labels[i]] -= scale;
  }
  out.total = acc / weight_sum;
  return out;
}

LossOutput gce_loss(const Matrix2D& logits, const std::vector<int>& labels,
                    double q) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw std::invalid_argument("gce_loss: q must be in (0, 1]");
  }
  const std::size_t n = logits.rows;
  const std::size_t n_classes = logits.cols;
  if (n == 0) {
    throw std::invalid_argument("gce_loss: empty batch");
  }
  check_labels(labels, n, n_classes);

  LossOutput out;
  out.per_sample.resize(n);
  out.logit_grad = Matrix2D(n, n_classes);
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* grow = out.logit_grad.row(i);
    softmax_row_ce(logits.row(i), n_classes, labels[i], grow);
    const double py = grow[labels[i]];
    const double pyq = std::pow(py, q);
    out.per_sample[i] = (1.0 - pyq) / q;
    acc += out.per_sample[i];
    // d/dz_j (1 - p_y^q)/q = p_y^q * (p_j - [j == y])
    const double scale = pyq * inv_n;
    for (std::size_t j = 0; j < n_classes; ++j) {
      grow[j] *= scale;
    }
    grow[labels[i]] -= scale;
  }
  out.total = acc * inv_n;
  return out;
}

AdamState make_adam(const MlpModel& model, double lr) {
  if (!(lr > 0.0)) {
    throw std::invalid_argument("make_adam: lr must be positive");
  }
  AdamState s;
  s.lr = lr;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    s.m_w.emplace_back(model.weights[l].rows, model.weights[l].cols);
    s.v_w.emplace_back(model.weights[l].rows, model.weights[l].cols);
    s.m_b.emplace_back(model.biases[l].size(), 0.0);
    s.v_b.emplace_back(model.biases[l].size(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, MlpModel& model, const Gradients& grads) {
  if (state.m_w.size() != model.num_layers() ||
      grads.weights.size() != model.num_layers()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.step += 1;
  state.beta1_pow *= state.beta1;
  state.beta2_pow *= state.beta2;
  const double bc1 = 1.0 - state.beta1_pow;
  const double bc2 = 1.0 - state.beta2_pow;
  const auto& k = kernels::ops();
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (grads.weights[l].rows != model.weights[l].rows ||
        grads.weights[l].cols != model.weights[l].cols ||
        grads.biases[l].size() != model.biases[l].size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    k.adam_update(model.weights[l].values.data(), state.m_w[l].values.data(),
                  state.v_w[l].values.data(), grads.weights[l].values.data(),
                  model.weights[l].size(), state.lr, state.beta1, state.beta2,
                  state.eps, bc1, bc2);
    k.adam_update(model.biases[l].data(), state.m_b[l].data(),
                  state.v_b[l].data(), grads.biases[l].data(),
                  model.biases[l].size(), state.lr, state.beta1, state.beta2,
                  state.eps, bc1, bc2);
  }
}

std::vector<int> predict(const MlpModel& model, const Matrix2D& inputs,
                         std::size_t chunk_rows) {
  std::vector<int> preds(inputs.rows);
  for (std::size_t start = 0; start < inputs.rows; start += chunk_rows) {
    const std::size_t count = std::min(chunk_rows, inputs.rows - start);
    Matrix2D chunk(count, inputs.cols);
    std::copy_n(inputs.row(start), count * inputs.cols, chunk.values.data());
    const Matrix2D logits = forward(model, chunk);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = logits.row(i);
      int best = 0;
      for (std::size_t j = 1; j < logits.cols; ++j) {
        if (row[j] > row[best]) {
          best = static_cast<int>(j);
        }
      }
      preds[start + i] = best;
    }
  }
  return preds;
}

std::vector<double> per_sample_ce(const MlpModel& model, const Matrix2D& inputs,
                                  const std::vector<int>& labels,
                                  std::size_t chunk_rows) {
  if (labels.size() != inputs.rows) {
    throw std::invalid_argument("per_sample_ce: label count mismatch");
  }
  std::vector<double> losses(inputs.rows);
  std::vector<double> probs(model.output_dim());
  for (std::size_t start = 0; start < inputs.rows; start += chunk_rows) {
    const std::size_t count = std::min(chunk_rows, inputs.rows - start);
    Matrix2D chunk(count, inputs.cols);
    std::copy_n(inputs.row(start), count * inputs.cols, chunk.values.data());
    const Matrix2D logits = forward(model, chunk);
    for (std::size_t i = 0; i < count; ++i) {
      const int y = labels[start + i];
      if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
        throw std::invalid_argument("per_sample_ce: label out of range");
      }
      losses[start + i] = softmax_row_ce(logits.row(i), logits.cols, y, probs.data());
    }
  }
  return losses;
}

}  // namespace echoes::nn

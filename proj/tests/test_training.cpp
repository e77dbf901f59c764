#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "echoes/data.hpp"
#include "echoes/metrics.hpp"
#include "echoes/training.hpp"

using namespace echoes;
using train::Method;
using train::TrainConfig;

namespace {

std::uint64_t hash_doubles(std::uint64_t h, const std::vector<double>& xs) {
  for (const double x : xs) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    h ^= bits;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t model_hash(const nn::MlpModel& model) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    h = hash_doubles(h, model.weights[l].values);
    h = hash_doubles(h, model.biases[l]);
  }
  return h;
}

bool models_identical(const nn::MlpModel& a, const nn::MlpModel& b) {
  if (a.layer_dims != b.layer_dims) {
    return false;
  }
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    if (a.weights[l].values != b.weights[l].values ||
        a.biases[l] != b.biases[l]) {
      return false;
    }
  }
  return true;
}

data::LabeledDataset small_train_set(std::uint64_t seed = 5,
                                     std::size_t n = 600) {
  data::SyntheticSpec spec;
  spec.n_train = n;
  spec.n_test = 80;
  spec.skew = {0.8, 0.8};  // enough conflicting samples even at small n
  spec.seed = seed;
  auto [train_set, test_set] = data::generate(spec);
  return std::move(train_set);
}

TrainConfig small_config(Method method) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = 6;
  cfg.batch_size = 128;
  cfg.hidden_dims = {8};
  cfg.seed = 17;
  return cfg;
}

std::vector<std::size_t> dims_for(const data::LabeledDataset& ds,
                                  const TrainConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(ds.features.cols);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(ds.n_classes);
  return dims;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("zero epochs returns the initialization") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Vanilla);
  cfg.epochs = 0;
  const auto result = train::train_vanilla(ds, cfg);
  CHECK(result.history.empty());
  Rng init(cfg.seed, train::detail::kStreamInitPrimary);
  const nn::MlpModel expected = nn::make_mlp(dims_for(ds, cfg), init);
  CHECK(models_identical(result.target_model, expected));
}

TEST_CASE("same seed twice gives bit-identical results") {
  const auto ds = small_train_set();
  const TrainConfig cfg = small_config(Method::Vanilla);
  const auto a = train::train_vanilla(ds, cfg);
  const auto b = train::train_vanilla(ds, cfg);
  CHECK(models_identical(a.target_model, b.target_model));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].loss_debiased == b.history[e].loss_debiased);
  }
}

TEST_CASE("empty dataset is rejected") {
  data::LabeledDataset empty;
  empty.n_classes = 2;
  empty.n_biases = 1;
  CHECK_THROWS_AS(train::train_vanilla(empty, small_config(Method::Vanilla)),
                  std::invalid_argument);
}

TEST_CASE("alpha 1: the joint method's biased stream is bit-identical to ERM") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Echoes);
  cfg.alpha = 1.0;
  cfg.epochs = 5;

  std::vector<std::uint64_t> vanilla_stream, echoes_stream;
  train::vanilla_core(ds.view(), cfg, [&](const train::EpochTelemetry& t) {
    vanilla_stream.push_back(model_hash(*t.target_model));
  });
  const auto echoes_result =
      train::echoes_core(ds.view(), cfg, [&](const train::EpochTelemetry& t) {
        echoes_stream.push_back(model_hash(*t.biased_model));
      });
  REQUIRE(vanilla_stream.size() == cfg.epochs);
  CHECK(vanilla_stream == echoes_stream);

  // Weights stay exactly one under alpha = 1.
  REQUIRE(echoes_result.final_biased_weights.has_value());
  for (const double w : echoes_result.final_biased_weights->weights) {
    CHECK(w == 1.0);
  }
}

TEST_CASE("lambda 0: the target model never leaves its initialization") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Echoes);
  cfg.lambda = 0.0;
  const auto result = train::train_echoes(ds, cfg);
  Rng init(cfg.seed, train::detail::kStreamInitSecondary);
  const nn::MlpModel expected = nn::make_mlp(dims_for(ds, cfg), init);
  CHECK(models_identical(result.target_model, expected));
}

TEST_CASE("epoch 1 runs with zero target weights: target model idle") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Echoes);
  Rng init(cfg.seed, train::detail::kStreamInitSecondary);
  const nn::MlpModel g0 = nn::make_mlp(dims_for(ds, cfg), init);
  std::vector<std::uint64_t> g_stream;
  std::vector<bool> has_debiased_loss;
  train::echoes_core(ds.view(), cfg, [&](const train::EpochTelemetry& t) {
    g_stream.push_back(model_hash(*t.target_model));
    has_debiased_loss.push_back(t.loss_debiased.has_value());
  });
  CHECK(g_stream[0] == model_hash(g0));   // idle through epoch 1
  CHECK(g_stream[1] != model_hash(g0));   // training from epoch 2
  CHECK_FALSE(has_debiased_loss[0]);
  CHECK(has_debiased_loss[1]);
}

TEST_CASE("alpha 1 with balanced classes: target weights stay all-equal") {
  // Hand-balanced dataset: equal class counts so the class-balance factors
  // coincide and the rescaled target weights are exactly 1.
  auto ds = small_train_set(9, 400);
  std::size_t n0 = 0;
  for (const int y : ds.targets) {
    n0 += y == 0;
  }
  // Flip trailing labels to exactly balance the classes (features untouched;
  // only the weight algebra matters here).
  std::size_t want0 = ds.size() / 2;
  for (std::size_t i = 0; i < ds.size() && n0 != want0; ++i) {
    if (n0 > want0 && ds.targets[i] == 0) {
      ds.targets[i] = 1;
      --n0;
    } else if (n0 < want0 && ds.targets[i] == 1) {
      ds.targets[i] = 0;
      ++n0;
    }
  }
  TrainConfig cfg = small_config(Method::Echoes);
  cfg.alpha = 1.0;
  cfg.epochs = 3;
  const auto wb = weighting::WeightVector::ones(ds.size());
  const auto wd = weighting::class_balance(weighting::invert(wb, cfg.invert_cap),
                                           ds.targets, ds.n_classes, true);
  for (const double w : wd.weights) {
    CHECK(w == 1.0);
  }
}

TEST_CASE("jtt with upweight 1 equals unit-weight two-stage training") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Jtt);
  cfg.jtt_first_stage_epochs = 2;
  cfg.jtt_upweight = 1.0;
  const auto result = train::jtt_core(ds.view(), cfg, {});

  // Manual replication: stage 1 trains a throwaway model to advance the
  // shared shuffle stream, stage 2 trains the reported model on unit weights.
  const auto view = ds.view();
  Rng init_a(cfg.seed, train::detail::kStreamInitPrimary);
  nn::MlpModel model_a = nn::make_mlp(dims_for(ds, cfg), init_a);
  nn::AdamState adam_a = nn::make_adam(model_a, cfg.lr);
  Rng shuffle(cfg.seed, train::detail::kStreamShuffle);
  const std::vector<double> ones(ds.size(), 1.0);
  train::detail::fit_static_weights(view, model_a, adam_a, ones,
                                    cfg.jtt_first_stage_epochs, cfg.batch_size,
                                    shuffle);
  Rng init_b(cfg.seed, train::detail::kStreamInitSecondary);
  nn::MlpModel model_b = nn::make_mlp(dims_for(ds, cfg), init_b);
  nn::AdamState adam_b = nn::make_adam(model_b, cfg.lr);
  train::detail::fit_static_weights(view, model_b, adam_b, ones,
                                    cfg.epochs - cfg.jtt_first_stage_epochs,
                                    cfg.batch_size, shuffle);
  CHECK(models_identical(result.target_model, model_b));
  CHECK(models_identical(*result.biased_model, model_a));
}

TEST_CASE("jtt records a warning when the error set is empty") {
  // Trivially separable data: huge separation, no noise overlap.
  data::SyntheticSpec spec;
  spec.n_train = 200;
  spec.n_test = 40;
  spec.skew = {0.8};
  spec.n_biases = 1;
  spec.target_sep = 30.0;
  spec.bias_sep = {40.0};
  spec.noise_sigma = 0.1;
  spec.seed = 4;
  auto [train_set, test_set] = data::generate(spec);
  TrainConfig cfg = small_config(Method::Jtt);
  cfg.epochs = 14;
  cfg.jtt_first_stage_epochs = 12;  // long stage 1: zero training errors left
  cfg.lr = 0.05;
  const auto result = train::train_jtt(train_set, cfg);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("error set is empty") != std::string::npos);
}

TEST_CASE("jtt rejects a first stage at least as long as the run") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Jtt);
  cfg.jtt_first_stage_epochs = cfg.epochs;
  CHECK_THROWS_AS(train::train_jtt(ds, cfg), std::invalid_argument);
}

TEST_CASE("groupdro with a single populated group matches plain ERM") {
  // All samples in one joint group: y = 0, fully aligned.
  data::LabeledDataset ds;
  ds.n_biases = 1;
  ds.n_classes = 2;
  const std::size_t n = 96;
  ds.features = Matrix2D(n, 3);
  Rng rng(33);
  for (double& v : ds.features.values) {
    v = rng.uniform(-1.0, 1.0);
  }
  ds.targets.assign(n, 0);
  ds.bias_labels.assign(n, 0);
  TrainConfig cfg = small_config(Method::GroupDro);
  cfg.epochs = 4;
  const auto dro = train::groupdro_core(ds, cfg, {});
  const auto erm = train::vanilla_core(ds.view(), cfg, {});
  CHECK(models_identical(dro.target_model, erm.target_model));
}

TEST_CASE("groupdro group weights stay positive and sum to one") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::GroupDro);
  cfg.groupdro_step = 0.05;
  train::groupdro_core(ds, cfg, [&](const train::EpochTelemetry& t) {
    REQUIRE(t.group_weights != nullptr);
    double sum = 0.0;
    for (const double q : *t.group_weights) {
      CHECK(q > 0.0);
      sum += q;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  });
}

TEST_CASE("lff batch weights: symmetry and the both-zero guard") {
  const std::vector<double> a = {1.3, 0.2, 0.0};
  const std::vector<double> b = {1.3, 0.2, 0.0};
  const auto w = train::detail::lff_batch_weights(a, b);
  CHECK(w == std::vector<double>{0.5, 0.5, 0.5});
  const auto w2 = train::detail::lff_batch_weights({3.0}, {1.0});
  CHECK(w2[0] == doctest::Approx(0.75));
}

TEST_CASE("lff runs deterministically and returns both models") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Lff);
  cfg.epochs = 3;
  const auto a = train::train_lff(ds, cfg);
  const auto b = train::train_lff(ds, cfg);
  REQUIRE(a.biased_model.has_value());
  CHECK(models_identical(a.target_model, b.target_model));
  CHECK(models_identical(*a.biased_model, *b.biased_model));
  CHECK(a.history.size() == cfg.epochs);
}

TEST_CASE("history bookkeeping: size, batches, finiteness, weight means") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Echoes);
  cfg.record_weight_snapshots = true;
  std::vector<std::size_t> batch_counts;
  train::echoes_core(ds.view(), cfg, [&](const train::EpochTelemetry& t) {
    batch_counts.push_back(t.batches);
  });
  const std::size_t expected_batches =
      (ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (const std::size_t b : batch_counts) {
    CHECK(b == expected_batches);
  }

  const auto result = train::train_echoes(ds, cfg);
  REQUIRE(result.history.size() == cfg.epochs);
  for (const auto& rec : result.history) {
    if (rec.loss_biased) {
      CHECK(std::isfinite(*rec.loss_biased));
    }
    REQUIRE(rec.mean_weight_aligned.has_value());
    REQUIRE(rec.mean_weight_conflicting.has_value());
    CHECK(std::isfinite(*rec.mean_weight_aligned));
    CHECK(*rec.mean_weight_aligned <= 1.0);
    CHECK(rec.group_error_biased.size() == 4);
    CHECK(rec.group_error_target.size() == 4);
  }
  CHECK(result.weight_snapshots.size() == cfg.epochs);
  CHECK(result.weight_snapshots.front().weights.size() == ds.size());
  REQUIRE(result.final_biased_weights.has_value());
  REQUIRE(result.biased_model.has_value());
}

TEST_CASE("error_curves emit one row per epoch and non-empty group") {
  const auto ds = small_train_set();
  TrainConfig cfg = small_config(Method::Vanilla);
  const auto result = train::train_vanilla(ds, cfg);
  std::size_t populated = 0;
  for (const std::size_t c : result.group_counts) {
    populated += c > 0;
  }
  REQUIRE(populated == 4);  // all alignment groups present at skew 0.8
  const auto rows =
      metrics::error_curves(result, ds.n_biases, metrics::HistoryStream::Target);
  CHECK(rows.size() == cfg.epochs * populated);
  CHECK(rows.front().epoch == 1);
  CHECK(rows.front().group == "AA");
}

TEST_CASE("run_training dispatches every method") {
  const auto ds = small_train_set();
  for (const Method m : {Method::Vanilla, Method::Echoes, Method::Lff,
                         Method::Jtt, Method::GroupDro}) {
    TrainConfig cfg = small_config(m);
    cfg.epochs = 3;
    cfg.jtt_first_stage_epochs = 1;
    const auto result = train::run_training(ds, cfg);
    CHECK(result.history.size() == cfg.epochs);
  }
  CHECK(train::method_from_name("echoes") == Method::Echoes);
  CHECK_THROWS_AS(train::method_from_name("nope"), std::invalid_argument);
}

TEST_CASE("vanilla on the default spec: aligned group is mastered") {
  data::SyntheticSpec spec;
  spec.seed = 7;
  const auto [train_set, test_set] = data::generate(spec);
  TrainConfig cfg;
  cfg.method = Method::Vanilla;
  cfg.seed = 100;
  const auto result = train::train_vanilla(train_set, cfg);
  // Final-epoch train error on the fully aligned group.
  const double aa_error = result.history.back().group_error_target[0];
  CHECK(aa_error < 0.05);
  // The aligned group ends below where the fully conflicting group started.
  const double cc_error_first = result.history.front().group_error_target[3];
  CHECK(aa_error < cc_error_first);
}

}  // TEST_SUITE

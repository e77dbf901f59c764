#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "echoes/rng.hpp"
#include "echoes/weighting.hpp"

using namespace echoes;
using weighting::ClassErrorReport;
using weighting::WeightVector;

namespace {

// Random fixture: every class present, weights exact powers of two (the form
// echo decay produces for alpha = 0.5).
struct Fixture {
  std::vector<int> labels;
  WeightVector weights;
  std::size_t n_classes;
};

Fixture random_fixture(Rng& rng, bool pow2_weights) {
  Fixture f;
  f.n_classes = 2 + rng.below(4);
  const std::size_t n = f.n_classes + rng.below(160);
  f.labels.resize(n);
  for (std::size_t c = 0; c < f.n_classes; ++c) {
    f.labels[c] = static_cast<int>(c);  // guarantee presence
  }
  for (std::size_t i = f.n_classes; i < n; ++i) {
    f.labels[i] = static_cast<int>(rng.below(f.n_classes));
  }
  f.weights.weights.resize(n);
  for (double& w : f.weights.weights) {
    w = pow2_weights ? std::ldexp(1.0, -static_cast<int>(rng.below(41)))
                     : rng.uniform(0.01, 5.0);
  }
  return f;
}

}  // namespace

TEST_SUITE("weighting") {

TEST_CASE("class_errors: all correct / all wrong / hand mix") {
  const std::vector<int> labels = {0, 0, 1, 1};
  auto all_correct = weighting::class_errors(labels, labels, 2);
  CHECK(all_correct.per_class_error == std::vector<double>{0.0, 0.0});

  const std::vector<int> flipped = {1, 1, 0, 0};
  auto all_wrong = weighting::class_errors(flipped, labels, 2);
  CHECK(all_wrong.per_class_error == std::vector<double>{1.0, 1.0});

  const std::vector<int> mixed = {0, 1, 1, 1};
  auto report = weighting::class_errors(mixed, labels, 2);
  CHECK(report.per_class_error[0] == doctest::Approx(0.5));
  CHECK(report.per_class_error[1] == doctest::Approx(0.0));
  CHECK(report.per_sample_correct ==
        std::vector<std::uint8_t>{1, 0, 1, 1});
}

TEST_CASE("class_errors rejects an absent class") {
  const std::vector<int> labels = {0, 0, 0};
  CHECK_THROWS_AS(weighting::class_errors(labels, labels, 2),
                  std::invalid_argument);
}

TEST_CASE("echo_update: alpha 1 is the identity") {
  const std::vector<int> labels = {0, 1, 0, 1};
  WeightVector w = WeightVector::ones(4);
  w.weights = {1.0, 0.5, 0.25, 1.0};
  const auto before = w.weights;
  const auto report = weighting::class_errors({1, 1, 0, 0}, labels, 2);
  const auto after = weighting::echo_update(w, report, labels, 1.0, 0.5);
  CHECK(after.weights == before);
  CHECK(after.epoch_count == 1);
}

TEST_CASE("echo_update: misclassified sample in a gated class decays") {
  const std::vector<int> labels = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1};
  std::vector<int> preds = labels;
  preds[0] = 1;  // one class-0 error: class error 0.1 < 0.3
  WeightVector w = WeightVector::ones(labels.size());
  const auto report = weighting::class_errors(preds, labels, 2);
  const auto after = weighting::echo_update(w, report, labels, 0.5, 0.3);
  CHECK(after.weights[0] == 0.5);
  for (std::size_t i = 1; i < labels.size(); ++i) {
    CHECK(after.weights[i] == 1.0);
  }
}

TEST_CASE("echo_update: high class error blocks the decay") {
  const std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  std::vector<int> preds = labels;
  preds[0] = preds[1] = preds[2] = 1;  // class-0 error 0.6 >= t_error 0.5
  WeightVector w = WeightVector::ones(labels.size());
  const auto report = weighting::class_errors(preds, labels, 2);
  const auto after = weighting::echo_update(w, report, labels, 0.5, 0.5);
  for (const double v : after.weights) {
    CHECK(v == 1.0);
  }
}

TEST_CASE("echo_update rejects alpha outside (0, 1]") {
  const std::vector<int> labels = {0, 1};
  WeightVector w = WeightVector::ones(2);
  const auto report = weighting::class_errors({0, 1}, labels, 2);
  CHECK_THROWS_AS(weighting::echo_update(w, report, labels, 0.0, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(weighting::echo_update(w, report, labels, 1.5, 0.5),
                  std::invalid_argument);
}

TEST_CASE("invert: identity on ones, reciprocal, cap") {
  WeightVector ones = WeightVector::ones(3);
  const auto same = weighting::invert(ones, 1e6);
  CHECK(same.weights == std::vector<double>{1.0, 1.0, 1.0});

  WeightVector w{{0.25, 1.0, std::ldexp(1.0, -30)}, 5};
  const auto inv = weighting::invert(w, 1e6);
  CHECK(inv.weights[0] == 4.0);
  CHECK(inv.weights[1] == 1.0);
  CHECK(inv.weights[2] == 1e6);  // 2^30 > 1e6, the cap engages
  CHECK(inv.epoch_count == 5);

  WeightVector bad{{0.5, 0.0}, 0};
  CHECK_THROWS_AS(weighting::invert(bad, 1e6), std::invalid_argument);
  CHECK_THROWS_AS(weighting::invert(w, 0.5), std::invalid_argument);
}

TEST_CASE("invert of invert is the identity away from the cap") {
  Rng rng(31);
  WeightVector w;
  w.weights.resize(64);
  for (double& v : w.weights) {
    v = std::ldexp(rng.uniform(0.5, 1.0), -static_cast<int>(rng.below(20)));
  }
  const auto twice = weighting::invert(weighting::invert(w, 1e12), 1e12);
  for (std::size_t i = 0; i < w.weights.size(); ++i) {
    CHECK(twice.weights[i] ==
          doctest::Approx(w.weights[i]).epsilon(1e-15));
  }
}

TEST_CASE("class_balance: sums 2 and 4 both become 8 without rescale") {
  // class 0 holds weights {1, 1}, class 1 holds {1, 3}.
  WeightVector w{{1.0, 1.0, 1.0, 3.0}, 0};
  const std::vector<int> labels = {0, 0, 1, 1};
  const auto out = weighting::class_balance(w, labels, 2, false);
  CHECK(out.weights[0] + out.weights[1] == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(out.weights[2] + out.weights[3] == doctest::Approx(8.0).epsilon(1e-12));
  // factors: class 0 scaled by 8/2 = 4, class 1 by 8/4 = 2
  CHECK(out.weights[0] == 4.0);
  CHECK(out.weights[3] == 6.0);
}

TEST_CASE("class_balance: equal sums S go to S^2, ratios untouched") {
  WeightVector w{{2.0, 1.0, 1.5, 1.5}, 0};
  const std::vector<int> labels = {0, 0, 1, 1};
  const auto out = weighting::class_balance(w, labels, 2, false);
  CHECK(out.weights[0] + out.weights[1] == doctest::Approx(9.0));
  CHECK(out.weights[2] + out.weights[3] == doctest::Approx(9.0));
  CHECK(out.weights[0] / out.weights[1] == doctest::Approx(2.0));
}

TEST_CASE("class_balance: a single class multiplies by exactly one") {
  WeightVector w{{0.5, 0.125, 2.0}, 0};
  const std::vector<int> labels = {0, 0, 0};
  const auto out = weighting::class_balance(w, labels, 1, false);
  CHECK(out.weights == w.weights);
}

TEST_CASE("class_balance rejects a zero class sum and bad labels") {
  WeightVector w{{1.0, 0.0}, 0};
  const std::vector<int> labels = {0, 1};
  CHECK_THROWS_AS(weighting::class_balance(w, labels, 2, false),
                  std::invalid_argument);
}

TEST_CASE("class_balance property: equalized sums, exact within-class ratios") {
  Rng rng(57);
  for (int trial = 0; trial < 100; ++trial) {
    const bool pow2 = trial % 2 == 0;
    Fixture f = random_fixture(rng, pow2);
    const auto out =
        weighting::class_balance(f.weights, f.labels, f.n_classes, true);

    std::vector<double> sums(f.n_classes, 0.0);
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      sums[f.labels[i]] += out.weights[i];
    }
    for (std::size_t c = 1; c < f.n_classes; ++c) {
      CHECK(std::abs(sums[c] - sums[0]) <= 1e-9 * std::abs(sums[0]));
    }

    // Mean 1 after the default global rescale.
    double total = 0.0;
    for (const double v : out.weights) {
      total += v;
    }
    CHECK(total / static_cast<double>(out.weights.size()) ==
          doctest::Approx(1.0).epsilon(1e-12));

    // Within-class ratios: bit-exact for power-of-two weights, else 2 ulp.
    for (std::size_t i = 1; i < f.labels.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (f.labels[i] != f.labels[j]) {
          continue;
        }
        const double before = f.weights.weights[i] / f.weights.weights[j];
        const double after = out.weights[i] / out.weights[j];
        if (pow2) {
          CHECK(after == before);
        } else {
          CHECK(after == doctest::Approx(before).epsilon(1e-15));
        }
      }
    }
  }
}

TEST_CASE("echo decay property: monotone, gated, exact powers of alpha") {
  Rng rng(91);
  const std::size_t n = 120;
  const std::size_t n_classes = 3;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % n_classes);
  }
  WeightVector w = WeightVector::ones(n);
  std::vector<int> decay_count(n, 0);
  for (int round = 0; round < 40; ++round) {
    std::vector<int> preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      // mostly correct so that class error stays below the gate at random
      preds[i] = rng.uniform01() < 0.8
                     ? labels[i]
                     : static_cast<int>(rng.below(n_classes));
    }
    const auto report = weighting::class_errors(preds, labels, n_classes);
    const auto before = w.weights;
    w = weighting::echo_update(std::move(w), report, labels, 0.5, 0.4);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(w.weights[i] <= before[i]);  // monotone non-increasing
      const bool decayed = w.weights[i] != before[i];
      const bool eligible = !report.per_sample_correct[i] &&
                            report.per_class_error[labels[i]] < 0.4;
      CHECK(decayed == eligible);
      if (decayed) {
        decay_count[i] += 1;
      }
    }
  }
  CHECK(w.epoch_count == 40);
  for (std::size_t i = 0; i < n; ++i) {
    // alpha = 0.5 decays are exact: w = 2^-m for the observed m
    CHECK(w.weights[i] == std::ldexp(1.0, -decay_count[i]));
  }
}

TEST_CASE("lff_weight: symmetry, zero case, 3:1") {
  CHECK(weighting::lff_weight(2.5, 2.5) == 0.5);
  CHECK(weighting::lff_weight(0.0, 1.0) == 0.0);
  CHECK(weighting::lff_weight(3.0, 1.0) == doctest::Approx(0.75));
  CHECK_THROWS_AS(weighting::lff_weight(0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(weighting::lff_weight(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("weight snapshots export one row per epoch and sample") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "echoes_weights_test.csv").string();
  std::vector<weighting::WeightSnapshot> snaps = {
      {1, {1.0, 0.5}},
      {2, {1.0, 0.25}},
  };
  weighting::save_weight_snapshots_csv(path, snaps, "config_hash=f00 seed=1");
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    lines.push_back(line);
  }
  REQUIRE(lines.size() == 6);  // provenance + header + 4 rows
  CHECK(lines[0] == "# config_hash=f00 seed=1");
  CHECK(lines[1] == "epoch,sample_index,weight");
  CHECK(lines[3] == "1,1,0.5");
  CHECK(lines[5] == "2,1,0.25");
  fs::remove(path);
}

}  // TEST_SUITE

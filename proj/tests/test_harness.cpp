#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "echoes/harness.hpp"

using namespace echoes;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (const char c : text) {
    n += c == '\n';
  }
  return n;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("echoes_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_config(const std::string& out_dir) {
  json j;
  j["dataset"]["synthetic"] = {{"n_train", 320}, {"n_test", 80},
                               {"skew", {0.8, 0.8}}, {"seed", 5}};
  j["output_dir"] = out_dir;
  j["runs"] = json::array({
      json{{"method", "vanilla"}, {"repeats", 2}, {"seed", 100}, {"epochs", 3},
           {"batch_size", 128}, {"hidden_dims", {8}}},
      json{{"method", "echoes"}, {"repeats", 1}, {"seed", 100}, {"epochs", 3},
           {"batch_size", 128}, {"hidden_dims", {8}},
           {"record_weight_snapshots", true}},
  });
  return j;
}

// Byte-level snapshot of every regular file under a directory.
std::map<std::string, std::string> dir_snapshot(const fs::path& dir) {
  std::map<std::string, std::string> snap;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      snap[fs::relative(entry.path(), dir).string()] = slurp(entry.path());
    }
  }
  return snap;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config parsing: defaults, hash stability, strict keys") {
  const json j = tiny_config("outdir");
  const auto a = harness::config_from_json(j);
  const auto b = harness::config_from_json(j);
  CHECK(a.hash == b.hash);
  CHECK(a.hash.size() == 16);
  REQUIRE(a.runs.size() == 2);
  CHECK(a.runs[0].config.method == train::Method::Vanilla);
  CHECK(a.runs[0].repeats == 2);
  CHECK(a.runs[0].config.lr == 3e-4);       // untouched default
  CHECK(a.runs[0].config.epochs == 3);      // file override
  CHECK(a.output_dir == "outdir");
  REQUIRE(a.synthetic.has_value());
  CHECK(a.synthetic->n_train == 320);

  json bad = j;
  bad["runs"][0]["learning_rate"] = 0.1;  // typo for lr
  CHECK_THROWS_AS(harness::config_from_json(bad), std::invalid_argument);
  json bad2 = j;
  bad2["runs"][0]["method"] = "sgd";
  CHECK_THROWS_AS(harness::config_from_json(bad2), std::invalid_argument);
  json bad3 = j;
  bad3["sweep"] = {{"name", "alpha"}, {"values", json::array()}};
  CHECK_THROWS_AS(harness::config_from_json(bad3), std::invalid_argument);
}

TEST_CASE("cli overrides: method filter, seed, output dir") {
  auto config = harness::config_from_json(tiny_config("outdir"));
  harness::CliOverrides overrides;
  overrides.method = "vanilla";
  overrides.seed = 900;
  overrides.output_dir = "elsewhere";
  harness::apply_overrides(config, overrides);
  REQUIRE(config.runs.size() == 1);
  CHECK(config.runs[0].config.method == train::Method::Vanilla);
  CHECK(config.runs[0].config.seed == 900);
  CHECK(config.output_dir == "elsewhere");

  // Overriding to a method absent from the file creates a default run.
  auto config2 = harness::config_from_json(tiny_config("outdir"));
  harness::CliOverrides overrides2;
  overrides2.method = "jtt";
  harness::apply_overrides(config2, overrides2);
  REQUIRE(config2.runs.size() == 1);
  CHECK(config2.runs[0].config.method == train::Method::Jtt);

  harness::CliOverrides bad;
  bad.method = "nope";
  CHECK_THROWS_AS(harness::apply_overrides(config, bad), std::invalid_argument);
}

TEST_CASE("generate writes the dataset files and a manifest, deterministically") {
  const fs::path dir = fresh_dir("gen");
  auto config = harness::config_from_json(tiny_config(dir.string()));
  harness::cmd_generate(config);
  const std::string train_csv = slurp(dir / "train.csv");
  const std::string test_csv = slurp(dir / "test.csv");
  // provenance comment + header + one line per sample
  CHECK(line_count(train_csv) == 320 + 2);
  CHECK(line_count(test_csv) == 80 + 2);
  CHECK(train_csv.rfind("# config_hash=" + config.hash, 0) == 0);
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("config_hash") == config.hash);
  CHECK(manifest.at("train_rows") == 320);
  CHECK(manifest.at("dataset").at("n_train") == 320);

  // Re-running produces byte-identical files.
  const auto before = dir_snapshot(dir);
  harness::cmd_generate(config);
  CHECK(dir_snapshot(dir) == before);
}

TEST_CASE("generate rejects an unbalanceable test size") {
  const fs::path dir = fresh_dir("genbad");
  json j = tiny_config(dir.string());
  j["dataset"]["synthetic"]["n_test"] = 81;
  CHECK_THROWS_AS(harness::config_from_json(j), std::invalid_argument);
}

TEST_CASE("train produces the full file set and is byte-deterministic") {
  const fs::path dir = fresh_dir("train");
  auto config = harness::config_from_json(tiny_config(dir.string()));
  harness::cmd_generate(config);
  const auto records = harness::cmd_train(config);
  REQUIRE(records.size() == 3);  // vanilla x2 + echoes x1
  CHECK(records[0].method == "vanilla");
  CHECK(records[0].seed == 100);
  CHECK(records[1].seed == 101);
  CHECK(records[2].method == "echoes");
  CHECK(records[2].pseudo_f1.has_value());
  CHECK_FALSE(records[0].pseudo_f1.has_value());

  for (const char* name :
       {"history_vanilla_seed100.csv", "history_vanilla_seed101.csv",
        "history_echoes_seed100.csv", "metrics_vanilla_seed100.json",
        "metrics_echoes_seed100.json", "metrics.csv", "summary.csv",
        "weights_echoes_seed100.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir / name));
  }
  // Snapshot export: one row per (epoch, sample) plus provenance and header.
  CHECK(line_count(slurp(dir / "weights_echoes_seed100.csv")) == 2 + 3 * 320);

  const json metrics = json::parse(slurp(dir / "metrics_echoes_seed100.json"));
  CHECK(metrics.at("method") == "echoes");
  CHECK(metrics.at("config_hash") == config.hash);
  CHECK(metrics.at("per_group_acc").size() == 8);

  // summary.csv: provenance + header + one row per method
  const std::string summary = slurp(dir / "summary.csv");
  CHECK(line_count(summary) == 2 + 2);

  // metrics.csv: provenance + header + one row per run
  CHECK(line_count(slurp(dir / "metrics.csv")) == 2 + 3);

  // Determinism: a second run over the same config reproduces every byte.
  const auto before = dir_snapshot(dir);
  harness::cmd_train(config);
  CHECK(dir_snapshot(dir) == before);
}

TEST_CASE("train rejects a missing dataset") {
  const fs::path dir = fresh_dir("nodata");
  auto config = harness::config_from_json(tiny_config(dir.string()));
  CHECK_THROWS_AS(harness::cmd_train(config), std::runtime_error);
}

TEST_CASE("train honors explicit csv paths") {
  const fs::path gen_dir = fresh_dir("csvsrc");
  auto gen_config = harness::config_from_json(tiny_config(gen_dir.string()));
  harness::cmd_generate(gen_config);

  const fs::path out_dir = fresh_dir("csvout");
  json j = tiny_config(out_dir.string());
  j["dataset"]["csv"] = {{"train", (gen_dir / "train.csv").string()},
                         {"test", (gen_dir / "test.csv").string()}};
  j["runs"] = json::array({json{{"method", "vanilla"}, {"repeats", 1},
                                {"seed", 1}, {"epochs", 2},
                                {"hidden_dims", {8}}}});
  auto config = harness::config_from_json(j);
  const auto records = harness::cmd_train(config);
  CHECK(records.size() == 1);
  CHECK(fs::exists(out_dir / "summary.csv"));
}

TEST_CASE("parallel jobs produce the same bytes as a serial run") {
  const fs::path dir_a = fresh_dir("jobs1");
  auto config_a = harness::config_from_json(tiny_config(dir_a.string()));
  harness::cmd_generate(config_a);
  harness::cmd_train(config_a);

  const fs::path dir_b = fresh_dir("jobs2");
  json j = tiny_config(dir_b.string());
  j["jobs"] = 2;
  auto config_b = harness::config_from_json(j);
  harness::cmd_generate(config_b);
  harness::cmd_train(config_b);

  auto snap_a = dir_snapshot(dir_a);
  auto snap_b = dir_snapshot(dir_b);
  // The config hash differs (jobs key), so strip the provenance lines.
  for (auto* snap : {&snap_a, &snap_b}) {
    for (auto& [name, text] : *snap) {
      if (const auto pos = text.find('\n');
          pos != std::string::npos && text.rfind("# config_hash=", 0) == 0) {
        text = text.substr(pos + 1);
      }
    }
  }
  snap_a.erase("manifest.json");
  snap_b.erase("manifest.json");
  for (auto& [name, text] : snap_a) {
    if (name.rfind("metrics_", 0) == 0) {
      continue;  // JSON files carry the hash in a field, compared below
    }
    CAPTURE(name);
    CHECK(text == snap_b.at(name));
  }
}

TEST_CASE("sweep: alpha grid writes one row per value") {
  const fs::path dir = fresh_dir("sweepalpha");
  json j = tiny_config(dir.string());
  j.erase("runs");
  j["sweep"] = {{"name", "alpha"}, {"values", {0.5, 1.0}}, {"repeats", 1},
                {"seed", 100},     {"epochs", 3},          {"hidden_dims", {8}},
                {"batch_size", 128}};
  auto config = harness::config_from_json(j);
  harness::cmd_generate(config);
  harness::cmd_sweep(config);
  const std::string csv = slurp(dir / "sweep_alpha.csv");
  CHECK(line_count(csv) == 2 + 2);
  CHECK(csv.find("alpha,method,repeats,") != std::string::npos);
  CHECK(csv.find("\n0.5,echoes,1,") != std::string::npos);
  CHECK(csv.find("\n1,echoes,1,") != std::string::npos);
}

TEST_CASE("sweep: fraction grid subsamples the training data") {
  const fs::path dir = fresh_dir("sweepfrac");
  json j = tiny_config(dir.string());
  j.erase("runs");
  j["sweep"] = {{"name", "fraction"}, {"values", {1.0, 0.5}}, {"repeats", 1},
                {"seed", 100},        {"epochs", 2},           {"hidden_dims", {8}},
                {"batch_size", 128}};
  auto config = harness::config_from_json(j);
  harness::cmd_generate(config);
  harness::cmd_sweep(config);
  const std::string csv = slurp(dir / "sweep_fraction.csv");
  CHECK(line_count(csv) == 2 + 2);
  CHECK(csv.find("fraction,method,repeats,") != std::string::npos);
  CHECK(csv.find("\n1,vanilla,1,") != std::string::npos);
  CHECK(csv.find("\n0.5,vanilla,1,") != std::string::npos);

  json bad = j;
  bad["sweep"]["values"] = {0.5, 1.5};
  CHECK_THROWS_AS(harness::cmd_sweep(harness::config_from_json(bad)),
                  std::invalid_argument);
}

TEST_CASE("evaluate rebuilds summary.csv byte-identically") {
  const fs::path dir = fresh_dir("eval");
  auto config = harness::config_from_json(tiny_config(dir.string()));
  harness::cmd_generate(config);
  harness::cmd_train(config);
  const std::string original = slurp(dir / "summary.csv");
  fs::remove(dir / "summary.csv");
  harness::cmd_evaluate(dir.string());
  CHECK(slurp(dir / "summary.csv") == original);

  const fs::path empty = fresh_dir("evalempty");
  CHECK_THROWS_AS(harness::cmd_evaluate(empty.string()), std::runtime_error);
}

TEST_CASE("repository example configs parse") {
  const std::string base = ECHOES_SOURCE_DIR;
  const auto def = harness::load_config(base + "/configs/default.json");
  CHECK(def.runs.size() == 5);
  REQUIRE(def.synthetic.has_value());
  CHECK(def.synthetic->n_train == 8000);
  const auto alpha = harness::load_config(base + "/configs/alpha_sweep.json");
  REQUIRE(alpha.sweep.has_value());
  CHECK(alpha.sweep->values.size() == 6);
  CHECK(alpha.sweep->config.method == train::Method::Echoes);
  const auto frac = harness::load_config(base + "/configs/fraction_sweep.json");
  REQUIRE(frac.sweep.has_value());
  CHECK(frac.sweep->config.method == train::Method::Vanilla);
}

TEST_CASE("cli binary: exit codes and messages") {
  const fs::path dir = fresh_dir("cli");
  const fs::path cfg_path = dir / "config.json";
  {
    std::ofstream out(cfg_path);
    out << tiny_config((dir / "out").string()).dump(2);
  }
  const std::string cli = ECHOES_CLI_PATH;
  const std::string log = (dir / "log.txt").string();

  const int gen_rc = std::system(
      (cli + " generate --config " + cfg_path.string() + " >" + log + " 2>&1")
          .c_str());
  CHECK(gen_rc == 0);
  CHECK(fs::exists(dir / "out" / "train.csv"));

  const int train_rc = std::system(
      (cli + " train --config " + cfg_path.string() + " --method vanilla >" +
       log + " 2>&1")
          .c_str());
  CHECK(train_rc == 0);
  CHECK(fs::exists(dir / "out" / "summary.csv"));

  const int bad_method_rc = std::system(
      (cli + " train --config " + cfg_path.string() + " --method sgd >" + log +
       " 2>&1")
          .c_str());
  CHECK(bad_method_rc != 0);
  CHECK(slurp(log).find("unknown method") != std::string::npos);

  const int no_config_rc =
      std::system((cli + " train >" + log + " 2>&1").c_str());
  CHECK(no_config_rc != 0);

  const int eval_rc = std::system(
      (cli + " evaluate --out " + (dir / "out").string() + " >" + log + " 2>&1")
          .c_str());
  CHECK(eval_rc == 0);
}

}  // TEST_SUITE

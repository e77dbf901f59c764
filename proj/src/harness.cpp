#include "echoes/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "echoes/csv.hpp"

namespace echoes::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using train::Method;
using train::TrainConfig;

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return it.key() == k;
        }) == allowed.end()) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " +
                                  where);
    }
  }
}

data::SyntheticSpec synthetic_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"n_train", "n_test", "n_classes", "n_biases", "skew",
                       "target_sep", "bias_sep", "block_dim", "noise_dim",
                       "noise_sigma", "seed"},
                      "dataset.synthetic");
  data::SyntheticSpec spec;
  if (j.contains("n_biases")) {
    j.at("n_biases").get_to(spec.n_biases);
    spec.skew.assign(spec.n_biases, 0.95);
    spec.bias_sep.assign(spec.n_biases, 8.0);
  }
  if (j.contains("n_train")) j.at("n_train").get_to(spec.n_train);
  if (j.contains("n_test")) j.at("n_test").get_to(spec.n_test);
  if (j.contains("n_classes")) j.at("n_classes").get_to(spec.n_classes);
  if (j.contains("skew")) j.at("skew").get_to(spec.skew);
  if (j.contains("target_sep")) j.at("target_sep").get_to(spec.target_sep);
  if (j.contains("bias_sep")) j.at("bias_sep").get_to(spec.bias_sep);
  if (j.contains("block_dim")) j.at("block_dim").get_to(spec.block_dim);
  if (j.contains("noise_dim")) j.at("noise_dim").get_to(spec.noise_dim);
  if (j.contains("noise_sigma")) j.at("noise_sigma").get_to(spec.noise_sigma);
  if (j.contains("seed")) j.at("seed").get_to(spec.seed);
  spec.validate();
  return spec;
}

json synthetic_to_json(const data::SyntheticSpec& spec) {
  json j;
  j["n_train"] = spec.n_train;
  j["n_test"] = spec.n_test;
  j["n_classes"] = spec.n_classes;
  j["n_biases"] = spec.n_biases;
  j["skew"] = spec.skew;
  j["target_sep"] = spec.target_sep;
  j["bias_sep"] = spec.bias_sep;
  j["block_dim"] = spec.block_dim;
  j["noise_dim"] = spec.noise_dim;
  j["noise_sigma"] = spec.noise_sigma;
  j["seed"] = spec.seed;
  return j;
}

constexpr std::initializer_list<const char*> kTrainConfigKeys = {
    "method",        "epochs",      "batch_size",
    "lr",            "alpha",       "lambda",
    "t_error",       "q",           "jtt_first_stage_epochs",
    "jtt_upweight",  "groupdro_step", "invert_cap",
    "balance_rescale", "hidden_dims", "seed",
    "record_weight_snapshots"};

void train_config_from_json(const json& j, TrainConfig& cfg) {
  if (j.contains("method")) {
    cfg.method = train::method_from_name(j.at("method").get<std::string>());
  }
  if (j.contains("epochs")) j.at("epochs").get_to(cfg.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(cfg.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(cfg.lr);
  if (j.contains("alpha")) j.at("alpha").get_to(cfg.alpha);
  if (j.contains("lambda")) j.at("lambda").get_to(cfg.lambda);
  if (j.contains("t_error")) j.at("t_error").get_to(cfg.t_error);
  if (j.contains("q")) j.at("q").get_to(cfg.q);
  if (j.contains("jtt_first_stage_epochs")) {
    j.at("jtt_first_stage_epochs").get_to(cfg.jtt_first_stage_epochs);
  }
  if (j.contains("jtt_upweight")) j.at("jtt_upweight").get_to(cfg.jtt_upweight);
  if (j.contains("groupdro_step")) j.at("groupdro_step").get_to(cfg.groupdro_step);
  if (j.contains("invert_cap")) j.at("invert_cap").get_to(cfg.invert_cap);
  if (j.contains("balance_rescale")) {
    j.at("balance_rescale").get_to(cfg.balance_rescale);
  }
  if (j.contains("hidden_dims")) j.at("hidden_dims").get_to(cfg.hidden_dims);
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
  if (j.contains("record_weight_snapshots")) {
    j.at("record_weight_snapshots").get_to(cfg.record_weight_snapshots);
  }
  cfg.validate();
}

std::vector<const char*> with_extra(std::initializer_list<const char*> base,
                                    std::initializer_list<const char*> extra) {
  std::vector<const char*> keys(base);
  keys.insert(keys.end(), extra.begin(), extra.end());
  return keys;
}

double mean_of(const std::vector<double>& xs) {
  double sum = 0.0;
  for (const double x : xs) {
    sum += x;
  }
  return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) {
    return 0.0;
  }
  const double mean = mean_of(xs);
  double acc = 0.0;
  for (const double x : xs) {
    acc += (x - mean) * (x - mean);
  }
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

void write_text_file(const std::string& path, const std::string& content) {
  auto out = csv::open_out(path);
  out << content;
}

json run_record_to_json(const RunRecord& rec, const std::string& hash) {
  json j;
  j["method"] = rec.method;
  j["seed"] = rec.seed;
  j["config_hash"] = hash;
  j["avg_group_acc"] = rec.test_metrics.avg_group_acc;
  j["worst_group_acc"] = rec.test_metrics.worst_group_acc;
  for (std::size_t k = 0; k < rec.gaps.size(); ++k) {
    j["gap_bias" + std::to_string(k)] = rec.gaps[k];
  }
  j["avg_bias_gap"] = rec.avg_gap;
  j["aligned_acc"] = rec.test_metrics.aligned_acc;
  j["conflicting_acc"] = rec.test_metrics.conflicting_acc;
  if (rec.pseudo_f1) {
    j["pseudo_f1"] = *rec.pseudo_f1;
  } else {
    j["pseudo_f1"] = nullptr;
  }
  json groups = json::object();
  const std::size_t n_masks = std::size_t{1} << rec.test_metrics.n_biases;
  for (std::size_t c = 0; c < rec.test_metrics.n_classes; ++c) {
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
      const data::GroupId id{static_cast<int>(c),
                             static_cast<std::uint32_t>(mask)};
      groups[data::group_label(id, rec.test_metrics.n_biases)] =
          rec.test_metrics
              .per_group_acc[data::group_index(id, rec.test_metrics.n_biases)];
    }
  }
  j["per_group_acc"] = groups;
  j["warnings"] = rec.warnings;
  return j;
}

RunRecord run_record_from_json(const json& j) {
  RunRecord rec;
  j.at("method").get_to(rec.method);
  j.at("seed").get_to(rec.seed);
  rec.test_metrics.avg_group_acc = j.at("avg_group_acc").get<double>();
  rec.test_metrics.worst_group_acc = j.at("worst_group_acc").get<double>();
  rec.test_metrics.aligned_acc = j.at("aligned_acc").get<double>();
  rec.test_metrics.conflicting_acc = j.at("conflicting_acc").get<double>();
  for (std::size_t k = 0; j.contains("gap_bias" + std::to_string(k)); ++k) {
    rec.gaps.push_back(j.at("gap_bias" + std::to_string(k)).get<double>());
  }
  rec.avg_gap = j.at("avg_bias_gap").get<double>();
  if (!j.at("pseudo_f1").is_null()) {
    rec.pseudo_f1 = j.at("pseudo_f1").get<double>();
  }
  return rec;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<RunRecord>& records,
                       std::size_t n_biases, const std::string& hash) {
  auto out = csv::open_out(path);
  out << "# config_hash=" << hash << "\n";
  out << "method,seed,avg_group_acc,worst_group_acc";
  for (std::size_t k = 0; k < n_biases; ++k) {
    out << ",gap_bias" << k;
  }
  out << ",avg_bias_gap,pseudo_f1\n";
  for (const RunRecord& rec : records) {
    out << rec.method << ',' << rec.seed << ','
        << csv::fmt(rec.test_metrics.avg_group_acc) << ','
        << csv::fmt(rec.test_metrics.worst_group_acc);
    for (const double gap : rec.gaps) {
      out << ',' << csv::fmt(gap);
    }
    out << ',' << csv::fmt(rec.avg_gap) << ','
        << (rec.pseudo_f1 ? csv::fmt(*rec.pseudo_f1) : std::string()) << '\n';
  }
}

void write_summary_csv(const std::string& path, std::vector<RunRecord> records,
                       std::size_t n_biases, const std::string& hash) {
  std::stable_sort(records.begin(), records.end(),
                   [](const RunRecord& a, const RunRecord& b) {
                     return a.method != b.method ? a.method < b.method
                                                 : a.seed < b.seed;
                   });
  auto out = csv::open_out(path);
  out << "# config_hash=" << hash << "\n";
  out << "method,repeats,avg_group_acc_mean,avg_group_acc_std,"
         "worst_group_acc_mean,worst_group_acc_std";
  for (std::size_t k = 0; k < n_biases; ++k) {
    out << ",gap_bias" << k << "_mean,gap_bias" << k << "_std";
  }
  out << ",avg_bias_gap_mean,avg_bias_gap_std,pseudo_f1_mean,pseudo_f1_std\n";

  for (std::size_t i = 0; i < records.size();) {
    std::size_t j = i;
    while (j < records.size() && records[j].method == records[i].method) {
      ++j;
    }
    std::vector<double> avg, worst, avg_gap, f1;
    std::vector<std::vector<double>> gaps(n_biases);
    bool all_f1 = true;
    for (std::size_t r = i; r < j; ++r) {
      avg.push_back(records[r].test_metrics.avg_group_acc);
      worst.push_back(records[r].test_metrics.worst_group_acc);
      avg_gap.push_back(records[r].avg_gap);
      for (std::size_t k = 0; k < n_biases && k < records[r].gaps.size(); ++k) {
        gaps[k].push_back(records[r].gaps[k]);
      }
      if (records[r].pseudo_f1) {
        f1.push_back(*records[r].pseudo_f1);
      } else {
        all_f1 = false;
      }
    }
    out << records[i].method << ',' << (j - i) << ',' << csv::fmt(mean_of(avg))
        << ',' << csv::fmt(std_of(avg)) << ',' << csv::fmt(mean_of(worst)) << ','
        << csv::fmt(std_of(worst));
    for (std::size_t k = 0; k < n_biases; ++k) {
      out << ',' << csv::fmt(mean_of(gaps[k])) << ',' << csv::fmt(std_of(gaps[k]));
    }
    out << ',' << csv::fmt(mean_of(avg_gap)) << ',' << csv::fmt(std_of(avg_gap));
    if (all_f1 && !f1.empty()) {
      out << ',' << csv::fmt(mean_of(f1)) << ',' << csv::fmt(std_of(f1));
    } else {
      out << ",,";
    }
    out << '\n';
    i = j;
  }
}

// Runs tasks[0..n) on `jobs` threads. Tasks must be independent; the first
// exception wins and is rethrown after all threads join.
void parallel_tasks(std::size_t n, std::size_t jobs,
                    const std::function<void(std::size_t)>& task) {
  if (n == 0) {
    return;
  }
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      task(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) {
          return;
        }
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) {
            error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& worker : workers) {
    worker.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

struct LoadedData {
  data::LabeledDataset train;
  data::LabeledDataset test;
};

LoadedData load_dataset(const ExperimentConfig& config) {
  std::string train_path, test_path;
  if (config.csv) {
    train_path = config.csv->train;
    test_path = config.csv->test;
  } else {
    train_path = (fs::path(config.output_dir) / "train.csv").string();
    test_path = (fs::path(config.output_dir) / "test.csv").string();
  }
  if (!fs::exists(train_path) || !fs::exists(test_path)) {
    throw std::runtime_error(
        "dataset files not found (" + train_path + ", " + test_path +
        "); run the generate command first or point dataset.csv at them");
  }
  LoadedData loaded{data::load_csv(train_path, data::DatasetRole::Train),
                    data::load_csv(test_path, data::DatasetRole::Test)};
  // Class count must cover both splits (a rare class may miss the train file).
  const std::size_t n_classes =
      std::max(loaded.train.n_classes, loaded.test.n_classes);
  loaded.train.n_classes = n_classes;
  loaded.test.n_classes = n_classes;
  return loaded;
}

RunRecord evaluate_run(const train::TrainResult& result,
                       const data::LabeledDataset& train_set,
                       const data::LabeledDataset& test_set,
                       const TrainConfig& cfg) {
  RunRecord rec;
  rec.method = train::method_name(cfg.method);
  rec.seed = cfg.seed;
  rec.test_metrics = metrics::group_accuracy(result.target_model, test_set);
  for (std::size_t k = 0; k < test_set.n_biases; ++k) {
    rec.gaps.push_back(metrics::bias_gap(rec.test_metrics, k));
  }
  rec.avg_gap = metrics::avg_bias_gap(rec.test_metrics);
  if (result.final_biased_weights) {
    rec.pseudo_f1 =
        metrics::pseudo_label_quality(*result.final_biased_weights, train_set, 0.5)
            .f1;
  }
  rec.warnings = result.warnings;
  return rec;
}

std::string run_file_stem(const RunRecord& rec) {
  return rec.method + "_seed" + std::to_string(rec.seed);
}

}  // namespace

std::string config_hash(const json& j) {
  const std::string dump = j.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown_keys(j, {"dataset", "runs", "sweep", "output_dir", "jobs"},
                      "top level");
  ExperimentConfig config;
  config.hash = config_hash(j);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown_keys(d, {"synthetic", "csv"}, "dataset");
    if (d.contains("synthetic")) {
      config.synthetic = synthetic_from_json(d.at("synthetic"));
    }
    if (d.contains("csv")) {
      const json& c = d.at("csv");
      reject_unknown_keys(c, {"train", "test"}, "dataset.csv");
      config.csv = CsvPaths{c.at("train").get<std::string>(),
                            c.at("test").get<std::string>()};
    }
  }
  if (j.contains("output_dir")) {
    j.at("output_dir").get_to(config.output_dir);
  }
  if (j.contains("jobs")) {
    j.at("jobs").get_to(config.jobs);
    if (config.jobs == 0) {
      throw std::invalid_argument("config: jobs must be positive");
    }
  }
  if (j.contains("runs")) {
    for (const json& r : j.at("runs")) {
      {
        const auto keys = with_extra(kTrainConfigKeys, {"repeats"});
        for (auto it = r.begin(); it != r.end(); ++it) {
          if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
                return it.key() == k;
              }) == keys.end()) {
            throw std::invalid_argument("config: unknown key '" + it.key() +
                                        "' in runs[]");
          }
        }
      }
      RunSpec spec;
      train_config_from_json(r, spec.config);
      if (r.contains("repeats")) {
        r.at("repeats").get_to(spec.repeats);
        if (spec.repeats == 0) {
          throw std::invalid_argument("config: repeats must be positive");
        }
      }
      config.runs.push_back(std::move(spec));
    }
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    {
      const auto keys = with_extra(kTrainConfigKeys, {"name", "values", "repeats"});
      for (auto it = s.begin(); it != s.end(); ++it) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
              return it.key() == k;
            }) == keys.end()) {
          throw std::invalid_argument("config: unknown key '" + it.key() +
                                      "' in sweep");
        }
      }
    }
    SweepSpec sweep;
    sweep.name = s.at("name").get<std::string>();
    if (sweep.name != "alpha" && sweep.name != "fraction") {
      throw std::invalid_argument("config: sweep.name must be 'alpha' or 'fraction'");
    }
    // Method defaults: the joint method for the alpha ablation, plain ERM for
    // the data-fraction study.
    sweep.config.method =
        sweep.name == "alpha" ? Method::Echoes : Method::Vanilla;
    train_config_from_json(s, sweep.config);
    if (s.contains("values")) {
      s.at("values").get_to(sweep.values);
      if (sweep.values.empty()) {
        throw std::invalid_argument("config: sweep.values must be non-empty");
      }
    } else {
      sweep.values = sweep.name == "alpha"
                         ? std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9, 1.0}
                         : std::vector<double>{1.0, 0.5, 0.2, 0.1};
    }
    if (s.contains("repeats")) {
      s.at("repeats").get_to(sweep.repeats);
      if (sweep.repeats == 0) {
        throw std::invalid_argument("config: repeats must be positive");
      }
    }
    config.sweep = std::move(sweep);
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config: " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_overrides(ExperimentConfig& config, const CliOverrides& overrides) {
  if (overrides.output_dir) {
    config.output_dir = *overrides.output_dir;
  }
  if (overrides.jobs) {
    config.jobs = *overrides.jobs;
  }
  if (overrides.method) {
    const Method m = train::method_from_name(*overrides.method);
    std::vector<RunSpec> kept;
    for (const RunSpec& run : config.runs) {
      if (run.config.method == m) {
        kept.push_back(run);
      }
    }
    if (kept.empty()) {
      RunSpec run;
      run.config.method = m;
      kept.push_back(run);
    }
    config.runs = std::move(kept);
  }
  if (overrides.seed) {
    for (RunSpec& run : config.runs) {
      run.config.seed = *overrides.seed;
    }
    if (config.sweep) {
      config.sweep->config.seed = *overrides.seed;
    }
    if (config.synthetic) {
      config.synthetic->seed = *overrides.seed;
    }
  }
}

void cmd_generate(const ExperimentConfig& config) {
  if (!config.synthetic) {
    throw std::invalid_argument("generate: config has no dataset.synthetic spec");
  }
  const data::SyntheticSpec& spec = *config.synthetic;
  fs::create_directories(config.output_dir);
  const auto [train_set, test_set] = data::generate(spec);
  const std::string prov =
      "config_hash=" + config.hash + " seed=" + std::to_string(spec.seed);
  data::save_csv(train_set, (fs::path(config.output_dir) / "train.csv").string(),
                 prov);
  data::save_csv(test_set, (fs::path(config.output_dir) / "test.csv").string(),
                 prov);
  json manifest;
  manifest["config_hash"] = config.hash;
  manifest["seed"] = spec.seed;
  manifest["dataset"] = synthetic_to_json(spec);
  manifest["train_rows"] = train_set.size();
  manifest["test_rows"] = test_set.size();
  write_text_file((fs::path(config.output_dir) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
}

std::vector<RunRecord> cmd_train(const ExperimentConfig& config) {
  if (config.runs.empty()) {
    throw std::invalid_argument("train: config has no runs");
  }
  const LoadedData loaded = load_dataset(config);
  fs::create_directories(config.output_dir);

  std::vector<TrainConfig> run_configs;
  for (const RunSpec& run : config.runs) {
    for (std::size_t r = 0; r < run.repeats; ++r) {
      TrainConfig cfg = run.config;
      cfg.seed = run.config.seed + r;
      run_configs.push_back(cfg);
    }
  }

  std::vector<RunRecord> records(run_configs.size());
  parallel_tasks(run_configs.size(), config.jobs, [&](std::size_t i) {
    const TrainConfig& cfg = run_configs[i];
    const train::TrainResult result = train::run_training(loaded.train, cfg);
    RunRecord rec = evaluate_run(result, loaded.train, loaded.test, cfg);
    const std::string stem = run_file_stem(rec);
    const std::string prov =
        "config_hash=" + config.hash + " seed=" + std::to_string(cfg.seed);
    train::write_history_csv(
        (fs::path(config.output_dir) / ("history_" + stem + ".csv")).string(),
        result, loaded.train.n_biases, prov);
    write_text_file(
        (fs::path(config.output_dir) / ("metrics_" + stem + ".json")).string(),
        run_record_to_json(rec, config.hash).dump(2) + "\n");
    if (!result.weight_snapshots.empty()) {
      weighting::save_weight_snapshots_csv(
          (fs::path(config.output_dir) / ("weights_" + stem + ".csv")).string(),
          result.weight_snapshots, prov);
    }
    records[i] = std::move(rec);
  });

  write_metrics_csv((fs::path(config.output_dir) / "metrics.csv").string(),
                    records, loaded.train.n_biases, config.hash);
  write_summary_csv((fs::path(config.output_dir) / "summary.csv").string(),
                    records, loaded.train.n_biases, config.hash);
  return records;
}

void cmd_sweep(const ExperimentConfig& config) {
  if (!config.sweep) {
    throw std::invalid_argument("sweep: config has no sweep section");
  }
  const SweepSpec& sweep = *config.sweep;
  const LoadedData loaded = load_dataset(config);
  fs::create_directories(config.output_dir);

  struct SweepTask {
    double value;
    TrainConfig cfg;
  };
  std::vector<SweepTask> tasks;
  for (const double value : sweep.values) {
    if (sweep.name == "fraction" && !(value > 0.0 && value <= 1.0)) {
      throw std::invalid_argument("sweep: fraction values must be in (0, 1]");
    }
    for (std::size_t r = 0; r < sweep.repeats; ++r) {
      TrainConfig cfg = sweep.config;
      cfg.seed = sweep.config.seed + r;
      if (sweep.name == "alpha") {
        cfg.alpha = value;
        cfg.validate();
      }
      tasks.push_back({value, cfg});
    }
  }

  std::vector<RunRecord> records(tasks.size());
  parallel_tasks(tasks.size(), config.jobs, [&](std::size_t i) {
    const SweepTask& task = tasks[i];
    if (sweep.name == "fraction") {
      const data::LabeledDataset subset =
          data::subsample(loaded.train, task.value, task.cfg.seed);
      const train::TrainResult result = train::run_training(subset, task.cfg);
      records[i] = evaluate_run(result, subset, loaded.test, task.cfg);
    } else {
      const train::TrainResult result = train::run_training(loaded.train, task.cfg);
      records[i] = evaluate_run(result, loaded.train, loaded.test, task.cfg);
    }
  });

  auto out = csv::open_out(
      (fs::path(config.output_dir) / ("sweep_" + sweep.name + ".csv")).string());
  out << "# config_hash=" << config.hash << "\n";
  out << sweep.name
      << ",method,repeats,avg_group_acc_mean,avg_group_acc_std,"
         "worst_group_acc_mean,worst_group_acc_std,aligned_acc_mean,"
         "aligned_acc_std,conflicting_acc_mean,conflicting_acc_std,"
         "avg_bias_gap_mean,avg_bias_gap_std\n";
  std::size_t task_idx = 0;
  for (const double value : sweep.values) {
    std::vector<double> avg, worst, aligned, conflicting, gap;
    for (std::size_t r = 0; r < sweep.repeats; ++r, ++task_idx) {
      const RunRecord& rec = records[task_idx];
      avg.push_back(rec.test_metrics.avg_group_acc);
      worst.push_back(rec.test_metrics.worst_group_acc);
      aligned.push_back(rec.test_metrics.aligned_acc);
      conflicting.push_back(rec.test_metrics.conflicting_acc);
      gap.push_back(rec.avg_gap);
    }
    out << csv::fmt(value) << ',' << train::method_name(sweep.config.method) << ','
        << sweep.repeats << ',' << csv::fmt(mean_of(avg)) << ','
        << csv::fmt(std_of(avg)) << ',' << csv::fmt(mean_of(worst)) << ','
        << csv::fmt(std_of(worst)) << ',' << csv::fmt(mean_of(aligned)) << ','
        << csv::fmt(std_of(aligned)) << ',' << csv::fmt(mean_of(conflicting))
        << ',' << csv::fmt(std_of(conflicting)) << ',' << csv::fmt(mean_of(gap))
        << ',' << csv::fmt(std_of(gap)) << '\n';
  }
}

void cmd_evaluate(const std::string& output_dir) {
  if (!fs::is_directory(output_dir)) {
    throw std::runtime_error("evaluate: no such directory: " + output_dir);
  }
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(output_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && name.size() > 5 &&
        name.substr(name.size() - 5) == ".json") {
      paths.push_back(entry.path().string());
    }
  }
  if (paths.empty()) {
    throw std::runtime_error("evaluate: no metrics_*.json files in " + output_dir);
  }
  std::sort(paths.begin(), paths.end());
  std::vector<RunRecord> records;
  std::string hash;
  std::size_t n_biases = 0;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    json j;
    in >> j;
    if (hash.empty() && j.contains("config_hash")) {
      hash = j.at("config_hash").get<std::string>();
    }
    records.push_back(run_record_from_json(j));
    n_biases = std::max(n_biases, records.back().gaps.size());
  }
  write_summary_csv((fs::path(output_dir) / "summary.csv").string(), records,
                    n_biases, hash);
}

}  // namespace echoes::harness

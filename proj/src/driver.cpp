#include "amal/driver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "amal/analysis.hpp"
#include "amal/data.hpp"
#include "amal/kd.hpp"
#include "amal/rng.hpp"
#include "amal/rules.hpp"
#include "amal/runio.hpp"

namespace amal::driver {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ParseError("invalid JSON in config: " + path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object: " + path);
  return j;
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "teacher") return KlDirection::teacher_ref;
  if (s == "literal") return KlDirection::student_ref;
  throw ConfigError("unknown kl_direction '" + s + "' (expected teacher or literal)");
}

std::vector<Index> full_dims(const json& hidden, Index input, Index output,
                             const std::string& key) {
  std::vector<Index> dims{input};
  if (!hidden.is_array()) throw ConfigError("'" + key + "' must be an array of hidden sizes");
  for (const auto& h : hidden) dims.push_back(h.get<Index>());
  dims.push_back(output);
  return dims;
}

struct SgdSettings {
  double lr = 0.05, momentum = 0.9, weight_decay = 5e-4, gamma = 0.1;
  std::vector<int> milestones;
};

SgdSettings parse_sgd(const json& j) {
  SgdSettings s;
  s.lr = j.value("lr", 0.05);
  s.momentum = j.value("momentum", 0.9);
  s.weight_decay = j.value("weight_decay", 5e-4);
  s.gamma = j.value("gamma", 0.1);
  if (j.contains("milestones"))
    for (const auto& m : j.at("milestones")) s.milestones.push_back(m.get<int>());
  return s;
}

MetaConfig parse_meta(const json& parent) {
  MetaConfig meta;
  if (!parent.contains("meta")) return meta;
  const json& j = parent.at("meta");
  check_keys(j, {"period", "lr_lambda", "init_value", "init_row", "last_layer_only",
                 "val_batch", "lambda_lo", "lambda_hi"},
             "meta");
  meta.period = j.value("period", meta.period);
  meta.lr_lambda = j.value("lr_lambda", meta.lr_lambda);
  meta.init_value = j.value("init_value", meta.init_value);
  if (j.contains("init_row"))
    for (const auto& v : j.at("init_row")) meta.init_row.push_back(v.get<double>());
  meta.last_layer_only = j.value("last_layer_only", meta.last_layer_only);
  meta.val_batch = j.value("val_batch", meta.val_batch);
  meta.lambda_lo = j.value("lambda_lo", meta.lambda_lo);
  meta.lambda_hi = j.value("lambda_hi", meta.lambda_hi);
  meta.validate();
  return meta;
}

struct DataManifest {
  int classes = 0;
  Index labeled = 0;
};

DataManifest read_manifest(const std::string& data_dir) {
  std::ifstream is(fs::path(data_dir) / "dataset.json");
  if (!is) throw IoError("cannot open dataset.json in " + data_dir);
  json j = json::parse(is);
  DataManifest m;
  m.classes = j.at("classes").get<int>();
  m.labeled = j.value("labeled", 0);
  return m;
}

void run_seeds(int seeds, const std::function<void(int)>& fn) {
  if (seeds < 1) throw ConfigError("--seeds must be at least 1");
  int workers = std::min(seeds, thread_cap());
  if (workers <= 1) {
    for (int s = 0; s < seeds; ++s) fn(s);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int s = next.fetch_add(1);
        if (s >= seeds) return;
        try {
          fn(s);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::string resolve_out_dir(const std::string& requested) {
  const char* env = std::getenv("AMAL_OUT_DIR");
  return (env && *env) ? std::string(env) : requested;
}

int thread_cap() {
  const char* env = std::getenv("AMAL_THREADS");
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (env && *env) {
    int cap = std::atoi(env);
    if (cap >= 1) return std::min(cap, hw);
  }
  return hw;
}

void gen_data(const std::string& config_path, const std::string& out_dir_req) {
  json cfg = load_config(config_path);
  const std::string out_dir = resolve_out_dir(out_dir_req);
  fs::create_directories(out_dir);
  const std::string kind = cfg.value("kind", "kd");
  const std::uint64_t seed = cfg.value("seed", 0ull);

  if (kind == "kd") {
    check_keys(cfg,
               {"kind", "seed", "n_total", "features", "classes", "class_sep", "informative",
                "train", "val", "test", "noise_fraction"},
               "gen-data config");
    Dataset all = gen_synthetic(seed, cfg.value("n_total", 10000), cfg.value("features", 14),
                                cfg.value("classes", 20), cfg.value("class_sep", 1.6),
                                cfg.value("informative", 10));
    SplitSizes sizes;
    sizes.train = cfg.value("train", 8100);
    sizes.val = cfg.value("val", 900);
    sizes.test = cfg.value("test", 1000);
    SplitResult parts = split(all, sizes, mix_seed(seed, 1));
    Dataset train = inject_label_noise(parts.train, cfg.value("noise_fraction", 0.1),
                                       mix_seed(seed, 2));
    save_dataset(train, (fs::path(out_dir) / "train.csv").string());
    save_dataset(parts.val, (fs::path(out_dir) / "val.csv").string());
    save_dataset(parts.test, (fs::path(out_dir) / "test.csv").string());
    json manifest = {{"kind", "kd"}, {"classes", all.class_count}, {"seed", seed}};
    std::ofstream os(fs::path(out_dir) / "dataset.json");
    os << manifest.dump(2) << '\n';
  } else if (kind == "rules") {
    check_keys(cfg,
               {"kind", "seed", "features", "classes", "class_sep", "informative", "labeled",
                "unlabeled", "test", "rules", "rule_precision", "rule_coverage"},
               "gen-data config");
    const Index labeled = cfg.value("labeled", 200);
    const Index unlabeled = cfg.value("unlabeled", 1586);
    const Index test = cfg.value("test", 250);
    Dataset all = gen_synthetic(seed, labeled + unlabeled + test, cfg.value("features", 14),
                                cfg.value("classes", 2), cfg.value("class_sep", 1.2),
                                cfg.value("informative", 10));
    SplitSizes sizes;
    sizes.train = labeled + unlabeled;
    sizes.val = 0;
    sizes.test = test;
    SplitResult parts = split(all, sizes, mix_seed(seed, 1));
    // Split groups rows by class; reshuffle so the labeled prefix is random.
    Rng rng = make_rng(seed, 2);
    Dataset pool = subset(parts.train, shuffled_indices(parts.train.size(), rng), "pool");
    LfDataset lf = gen_synthetic_lfs(pool, cfg.value("rules", 10),
                                     cfg.value("rule_precision", 0.75),
                                     cfg.value("rule_coverage", 0.866), labeled, mix_seed(seed, 3));
    save_dataset(pool, (fs::path(out_dir) / "pool.csv").string());
    save_lfs(lf, (fs::path(out_dir) / "lfs.csv").string());
    save_dataset(parts.test, (fs::path(out_dir) / "test.csv").string());
    json manifest = {{"kind", "rules"},
                     {"classes", all.class_count},
                     {"labeled", labeled},
                     {"seed", seed}};
    std::ofstream os(fs::path(out_dir) / "dataset.json");
    os << manifest.dump(2) << '\n';
  } else {
    throw ConfigError("unknown gen-data kind '" + kind + "'");
  }
}

void train_teacher_cmd(const std::string& config_path, const std::string& data_dir,
                       const std::string& out_dir_req) {
  json cfg = load_config(config_path);
  check_keys(cfg,
             {"seed", "dims", "activation", "lr", "momentum", "weight_decay", "milestones",
              "gamma", "epochs", "batch_size", "checkpoint_epochs", "temperature"},
             "train-teacher config");
  const std::string out_dir = resolve_out_dir(out_dir_req);
  DataManifest manifest = read_manifest(data_dir);
  Dataset train =
      load_dataset((fs::path(data_dir) / "train.csv").string(), manifest.classes);

  SgdSettings sgd = parse_sgd(cfg);
  TrainSchedule schedule;
  schedule.epochs = cfg.value("epochs", 60);
  schedule.batch_size = cfg.value("batch_size", 128);
  std::vector<int> checkpoints;
  if (cfg.contains("checkpoint_epochs"))
    for (const auto& e : cfg.at("checkpoint_epochs")) checkpoints.push_back(e.get<int>());

  std::vector<Index> dims = full_dims(cfg.value("dims", json::array({64, 64})), train.dim(),
                                      train.class_count, "dims");
  MlpParams probe = init_mlp(dims, parse_activation(cfg.value("activation", "relu")), 0);
  SgdState state = SgdState::for_params(probe, sgd.lr, sgd.momentum, sgd.weight_decay,
                                        sgd.milestones, sgd.gamma);
  TeacherBundle bundle =
      train_teacher(train, dims, parse_activation(cfg.value("activation", "relu")), state,
                    schedule, checkpoints, cfg.value("seed", 0ull));
  bundle.temperature = cfg.value("temperature", 4.0);
  save_teacher_bundle(bundle, out_dir);
}

namespace {

KdConfig parse_kd_config(const json& cfg, Index input_dim, int classes) {
  KdConfig kd;
  kd.student_dims = full_dims(cfg.value("student_dims", json::array({8})), input_dim,
                              classes, "student_dims");
  kd.activation = parse_activation(cfg.value("activation", "relu"));
  kd.tau = cfg.value("tau", 4.0);
  kd.lambda_a = cfg.value("lambda_a", 0.9);
  kd.kl_direction = parse_kl_direction(cfg.value("kl_direction", "teacher"));
  SgdSettings sgd = parse_sgd(cfg);
  kd.lr = sgd.lr;
  kd.momentum = sgd.momentum;
  kd.weight_decay = sgd.weight_decay;
  kd.milestones = sgd.milestones;
  kd.gamma = sgd.gamma;
  kd.reset_momentum_at_milestones = cfg.value("reset_momentum", false);
  kd.schedule.epochs = cfg.value("epochs", 60);
  kd.schedule.batch_size = cfg.value("batch_size", 128);
  return kd;
}

}  // namespace

void distill_cmd(const std::string& config_path, const std::string& data_dir,
                 const std::string& teachers_dir, const std::string& mode_str, int seeds,
                 const std::string& out_dir_req) {
  json cfg = load_config(config_path);
  check_keys(cfg,
             {"student_dims", "activation", "tau", "lambda_a", "kl_direction", "lr", "momentum",
              "weight_decay", "milestones", "gamma", "epochs", "batch_size", "meta",
              "reset_momentum"},
             "distill config");
  KdMode mode;
  if (mode_str == "none") mode = KdMode::none;
  else if (mode_str == "fixed") mode = KdMode::fixed;
  else if (mode_str == "amal") mode = KdMode::amal;
  else throw ConfigError("unknown distill mode '" + mode_str + "'");

  const std::string out_dir = resolve_out_dir(out_dir_req);
  DataManifest manifest = read_manifest(data_dir);
  Dataset train = load_dataset((fs::path(data_dir) / "train.csv").string(), manifest.classes);
  Dataset val = load_dataset((fs::path(data_dir) / "val.csv").string(), manifest.classes);
  Dataset test = load_dataset((fs::path(data_dir) / "test.csv").string(), manifest.classes);

  TeacherBundle bundle;
  if (mode != KdMode::none) {
    if (teachers_dir.empty()) throw ConfigError("distill: --teachers required unless mode=none");
    bundle = load_teacher_bundle(teachers_dir);
  }
  KdConfig kd = parse_kd_config(cfg, train.dim(), manifest.classes);
  MetaConfig meta = parse_meta(cfg);

  json echo = cfg;
  echo["mode"] = mode_str;
  echo["data"] = data_dir;
  echo["teachers"] = teachers_dir;

  run_seeds(seeds, [&](int s) {
    RunResult r = run_kd(kd, bundle, mode, meta, train, val, test,
                         static_cast<std::uint64_t>(s));
    r.config_json = echo.dump();
    write_run_dir((fs::path(out_dir) / ("seed_" + std::to_string(s))).string(), r);
  });
}

void rules_cmd(const std::string& config_path, const std::string& data_dir,
               const std::string& mode_str, int seeds, const std::string& out_dir_req) {
  json cfg = load_config(config_path);
  check_keys(cfg,
             {"model_dims", "activation", "val_count", "hit_init", "miss_init", "lr", "momentum",
              "weight_decay", "milestones", "gamma", "epochs", "batch_size", "meta",
              "reset_momentum"},
             "rules config");
  RulesMode mode;
  if (mode_str == "only_l") mode = RulesMode::only_l;
  else if (mode_str == "spear") mode = RulesMode::spear_fixed;
  else if (mode_str == "amal") mode = RulesMode::amal;
  else throw ConfigError("unknown rules mode '" + mode_str + "'");

  const std::string out_dir = resolve_out_dir(out_dir_req);
  DataManifest manifest = read_manifest(data_dir);
  Dataset pool = load_dataset((fs::path(data_dir) / "pool.csv").string(), manifest.classes);
  Dataset test = load_dataset((fs::path(data_dir) / "test.csv").string(), manifest.classes);
  LfDataset lf;
  lf.base = pool;
  load_lfs((fs::path(data_dir) / "lfs.csv").string(), lf.fires, lf.rule_classes);
  lf.labeled_count = manifest.labeled;
  lf.validate();

  RulesConfig rc;
  rc.model_dims = full_dims(cfg.value("model_dims", json::array({32})), pool.dim(),
                            manifest.classes, "model_dims");
  rc.activation = parse_activation(cfg.value("activation", "relu"));
  rc.val_count = cfg.value("val_count", 100);
  rc.hit_init = cfg.value("hit_init", 0.7);
  rc.miss_init = cfg.value("miss_init", 0.3);
  SgdSettings sgd = parse_sgd(cfg);
  rc.lr = sgd.lr;
  rc.momentum = sgd.momentum;
  rc.weight_decay = sgd.weight_decay;
  rc.milestones = sgd.milestones;
  rc.gamma = sgd.gamma;
  rc.reset_momentum_at_milestones = cfg.value("reset_momentum", false);
  rc.schedule.epochs = cfg.value("epochs", 60);
  rc.schedule.batch_size = cfg.value("batch_size", 64);
  MetaConfig meta = parse_meta(cfg);

  json echo = cfg;
  echo["mode"] = mode_str;
  echo["data"] = data_dir;

  run_seeds(seeds, [&](int s) {
    RulesRunResult r = run_rules(lf, test, mode, rc, meta, static_cast<std::uint64_t>(s));
    r.run.config_json = echo.dump();
    write_run_dir((fs::path(out_dir) / ("seed_" + std::to_string(s))).string(), r.run);
  });
}

void coreset_cmd(const std::string& lambdas_path, const std::string& strategy_str,
                 double fraction, const std::string& data_dir, std::uint64_t seed,
                 const std::string& out_dir_req) {
  const std::string out_dir = resolve_out_dir(out_dir_req);
  fs::create_directories(out_dir);
  DataManifest manifest = read_manifest(data_dir);
  Dataset train = load_dataset((fs::path(data_dir) / "train.csv").string(), manifest.classes);
  Dataset val = load_dataset((fs::path(data_dir) / "val.csv").string(), manifest.classes);
  Dataset test = load_dataset((fs::path(data_dir) / "test.csv").string(), manifest.classes);
  MixingWeights lambdas = load_lambdas(lambdas_path);
  if (lambdas.rows() != train.size())
    throw ConfigError("coreset: lambda table rows do not match the training set");

  Vector probs;
  if (strategy_str == "random") {
    probs = Vector::Constant(train.size(), 1.0 / static_cast<double>(train.size()));
  } else {
    CoresetStrategy strategy;
    if (strategy_str == "sq") strategy = CoresetStrategy::sq_norm;
    else if (strategy_str == "diff") strategy = CoresetStrategy::abs_diff;
    else if (strategy_str == "ratio") strategy = CoresetStrategy::ratio;
    else throw ConfigError("unknown coreset strategy '" + strategy_str + "'");
    probs = coreset_probs(lambdas, strategy).probs;
  }
  std::vector<Index> idx = sample_coreset(probs, fraction, seed);
  {
    std::ofstream os(fs::path(out_dir) / "coreset_indices.csv");
    os << "instance_id\n";
    for (Index i : idx) os << i << '\n';
  }

  std::vector<Index> dims{train.dim(), 8, static_cast<Index>(train.class_count)};
  MlpParams probe = init_mlp(dims, Activation::relu, 0);
  SgdState sgd = SgdState::for_params(probe, 0.05, 0.9, 5e-4, {30, 45}, 0.1);
  TrainSchedule schedule;
  RunResult r = retrain_on_coreset(idx, train, val, test, dims, Activation::relu, sgd,
                                   schedule, seed);
  json echo = {{"mode", "coreset_" + strategy_str},
               {"fraction", fraction},
               {"lambdas", lambdas_path},
               {"data", data_dir}};
  r.config_json = echo.dump();
  write_run_dir((fs::path(out_dir) / "run").string(), r);
}

void analyze_cmd(const std::string& run_dir, const std::string& what,
                 const std::string& out_dir_req) {
  const std::string out_dir = resolve_out_dir(out_dir_req);
  fs::create_directories(out_dir);
  RunResult run = read_run_dir(run_dir);
  json cfg = json::parse(run.config_json);
  const std::string data_dir = cfg.at("data").get<std::string>();
  DataManifest manifest = read_manifest(data_dir);
  Dataset train = load_dataset((fs::path(data_dir) / "train.csv").string(), manifest.classes);
  if (run.final_lambdas.rows() != train.size())
    throw ConfigError("analyze: lambda table does not match the training set");

  auto write_hist = [&](const HistogramPair& h, const std::string& stem,
                        const std::string& label) {
    std::ofstream os(fs::path(out_dir) / (stem + ".csv"));
    os << "bin_lo,bin_hi,clean,noisy\n";
    char buf[80];
    for (std::size_t b = 0; b < h.clean.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", h.edges(static_cast<Index>(b)),
                    h.edges(static_cast<Index>(b) + 1));
      os << buf << ',' << h.clean[b] << ',' << h.noisy[b] << '\n';
    }
    std::vector<SvgBarGroup> groups(2);
    groups[0].name = "clean";
    groups[1].name = "noisy";
    for (std::size_t b = 0; b < h.clean.size(); ++b) {
      groups[0].heights.push_back(static_cast<double>(h.clean[b]));
      groups[1].heights.push_back(static_cast<double>(h.noisy[b]));
    }
    svg_histogram(h.edges, groups, label, (fs::path(out_dir) / (stem + ".svg")).string());
  };

  if (what == "hist") {
    write_hist(lambda_diff_histogram(run.final_lambdas, train.noise_mask, 20), "hist",
               "lambda_a - lambda_p");
  } else if (what == "sumhist") {
    write_hist(lambda_sum_histogram(run.final_lambdas, train.noise_mask, 20), "sumhist",
               "lambda_a + lambda_p");
  } else if (what == "buckets") {
    const std::string teachers_dir = cfg.at("teachers").get<std::string>();
    if (teachers_dir.empty()) throw ConfigError("analyze buckets: run has no teachers");
    TeacherBundle bundle = load_teacher_bundle(teachers_dir);
    const TeacherEntry& t = bundle.teachers.back();
    Vector probs(train.size());
    for (Index i = 0; i < train.size(); ++i) {
      RowVector p = softmax_t(t.cached_logits.row(i), 1.0);
      probs(i) = p(train.labels[static_cast<std::size_t>(i)]);
    }
    Vector edges(11);
    for (int b = 0; b <= 10; ++b) edges(b) = static_cast<double>(b) / 10.0;
    BucketStats stats = confidence_buckets(run.final_lambdas, probs, train.noise_mask, edges);
    std::ofstream os(fs::path(out_dir) / "buckets.csv");
    os << "bucket_lo,bucket_hi,clean_count,clean_mean,clean_sem,noisy_count,noisy_mean,"
          "noisy_sem\n";
    char buf[200];
    for (Index b = 0; b + 1 <= 10; ++b) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld,%.17g,%.17g,%lld,%.17g,%.17g",
                    edges(b), edges(b + 1),
                    static_cast<long long>(stats.clean.count[static_cast<std::size_t>(b)]),
                    stats.clean.mean(b), stats.clean.sem(b),
                    static_cast<long long>(stats.noisy.count[static_cast<std::size_t>(b)]),
                    stats.noisy.mean(b), stats.noisy.sem(b));
      os << buf << '\n';
    }
    std::vector<SvgSeries> series(2);
    series[0].name = "clean";
    series[1].name = "noisy";
    for (Index b = 0; b < 10; ++b) {
      double mid = 0.5 * (edges(b) + edges(b + 1));
      if (stats.clean.count[static_cast<std::size_t>(b)] > 0) {
        series[0].x.push_back(mid);
        series[0].y.push_back(stats.clean.mean(b));
      }
      if (stats.noisy.count[static_cast<std::size_t>(b)] > 0) {
        series[1].x.push_back(mid);
        series[1].y.push_back(stats.noisy.mean(b));
      }
    }
    svg_line_chart(series, "teacher confidence at true label", "mean lambda_a",
                   (fs::path(out_dir) / "buckets.svg").string());
  } else {
    throw ConfigError("unknown analyze kind '" + what + "' (expected hist|sumhist|buckets)");
  }
}

void report_cmd(const std::vector<std::string>& run_dirs, const std::string& out_dir_req) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run dir");
  const std::string out_dir = resolve_out_dir(out_dir_req);
  fs::create_directories(out_dir);

  struct Series {
    std::vector<std::vector<double>> per_seed;  // [seed][epoch] test accuracy
  };
  std::map<std::string, Series> by_mode;
  std::vector<std::string> dirs = run_dirs;
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    RunResult r = read_run_dir(dir);
    json cfg = json::parse(r.config_json);
    std::string mode = cfg.value("mode", "run");
    std::vector<double> acc;
    for (const auto& m : r.metrics) acc.push_back(m.test_acc);
    by_mode[mode].per_seed.push_back(std::move(acc));
  }

  std::size_t epochs = 0;
  for (const auto& [mode, s] : by_mode)
    for (const auto& v : s.per_seed) epochs = std::max(epochs, v.size());

  std::ofstream os(fs::path(out_dir) / "report.csv");
  os << "epoch";
  for (const auto& [mode, s] : by_mode) os << ',' << mode << "_mean," << mode << "_sem";
  os << '\n';
  std::vector<SvgSeries> chart;
  for (const auto& [mode, s] : by_mode) {
    SvgSeries sv;
    sv.name = mode;
    chart.push_back(sv);
  }
  char buf[64];
  std::vector<std::vector<double>> means(by_mode.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    os << e;
    std::size_t mi = 0;
    for (const auto& [mode, s] : by_mode) {
      double mean = 0.0, count = 0.0;
      for (const auto& v : s.per_seed)
        if (e < v.size()) {
          mean += v[e];
          count += 1.0;
        }
      mean = count > 0 ? mean / count : 0.0;
      double ss = 0.0;
      for (const auto& v : s.per_seed)
        if (e < v.size()) ss += (v[e] - mean) * (v[e] - mean);
      double sem = count > 1 ? std::sqrt(ss / (count - 1.0)) / std::sqrt(count) : 0.0;
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", mean, sem);
      os << buf;
      chart[mi].x.push_back(static_cast<double>(e));
      chart[mi].y.push_back(mean);
      ++mi;
    }
    os << '\n';
  }
  svg_line_chart(chart, "epoch", "test accuracy (mean over seeds)",
                 (fs::path(out_dir) / "report.svg").string());
}

}  // namespace amal::driver

#include "amal/kd.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "amal/rng.hpp"

namespace amal {

namespace fs = std::filesystem;
using nlohmann::json;

void TeacherBundle::validate() const {
  if (teachers.empty()) throw ConfigError("TeacherBundle: no teachers");
  if (temperature <= 0.0) throw ConfigError("TeacherBundle: temperature must be positive");
  const Index c = teachers.front().cached_logits.cols();
  const Index n = teachers.front().cached_logits.rows();
  for (const auto& t : teachers) {
    if (t.cached_logits.cols() != c || t.cached_logits.rows() != n)
      throw ConfigError("TeacherBundle: teachers disagree on cache shape");
    if (!t.params.layer_dims.empty() && t.params.output_dim() != c)
      throw ConfigError("TeacherBundle: teacher output dim does not match cache");
  }
}

namespace {

// CE against the labels vector a component loss provides for ids.
class CeComponentLoss final : public ComponentLoss {
 public:
  explicit CeComponentLoss(const std::vector<int>& labels) : labels_(labels) {}
  Index components() const override { return 1; }
  LossEval eval_component(Index, Index, Index id, const RowVector& logits) const override {
    LossEval e;
    e.value = ce_loss(logits, labels_[static_cast<std::size_t>(id)]);
    e.dlogits = ce_grad(logits, labels_[static_cast<std::size_t>(id)]);
    return e;
  }

 private:
  const std::vector<int>& labels_;
};

}  // namespace

TeacherBundle train_teacher(const Dataset& train, const std::vector<Index>& dims,
                            Activation activation, const SgdState& sgd_template,
                            const TrainSchedule& schedule,
                            const std::vector<int>& checkpoint_epochs, std::uint64_t seed) {
  train.validate();
  for (int e : checkpoint_epochs)
    if (e < 0 || e > schedule.epochs)
      throw ConfigError("train_teacher: checkpoint epoch outside [0, epochs]");

  MlpParams params = init_mlp(dims, activation, mix_seed(seed, 0));
  SgdState sgd = SgdState::for_params(params, sgd_template.lr0, sgd_template.momentum,
                                      sgd_template.weight_decay, sgd_template.milestones,
                                      sgd_template.gamma);
  sgd.reset_velocity_at_milestones = sgd_template.reset_velocity_at_milestones;
  CeComponentLoss ce(train.labels);
  Rng shuffle_rng = make_rng(seed, 1);

  TeacherBundle bundle;
  auto snapshot = [&](int after_epochs, const std::string& tag) {
    TeacherEntry entry;
    entry.tag = tag;
    entry.epoch = after_epochs;
    entry.params = params;
    entry.cached_logits = forward(params, train.features);
    bundle.teachers.push_back(std::move(entry));
  };

  std::vector<int> wanted = checkpoint_epochs;
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  std::size_t next = 0;
  while (next < wanted.size() && wanted[next] == 0) {
    snapshot(0, "e0");
    ++next;
  }
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    maybe_reset_velocity(sgd, epoch);
    std::vector<Index> order = shuffled_indices(train.size(), shuffle_rng);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(schedule.batch_size)) {
      std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(schedule.batch_size));
      Batch batch;
      batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
      batch.features.resize(static_cast<Index>(end - begin), train.features.cols());
      batch.labels.resize(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch.features.row(static_cast<Index>(i - begin)) = train.features.row(order[i]);
        batch.labels[i - begin] = train.labels[static_cast<std::size_t>(order[i])];
      }
      Matrix ones = Matrix::Ones(batch.size(), 1);
      WeightedInstanceLoss weighted(ce, ones);
      MlpGrads grads = per_instance_grads(params, batch, weighted);
      sgd_step(params, grads, sgd, epoch);
    }
    while (next < wanted.size() && wanted[next] == epoch + 1) {
      snapshot(epoch + 1, "e" + std::to_string(epoch + 1));
      ++next;
    }
  }
  if (bundle.teachers.empty() || bundle.teachers.back().epoch != schedule.epochs)
    snapshot(schedule.epochs, "final");
  else
    bundle.teachers.back().tag = "final";
  bundle.validate();
  return bundle;
}

KdComponentLoss::KdComponentLoss(const std::vector<int>& labels, const TeacherBundle& bundle,
                                 double tau, KlDirection direction, bool live_teacher_forward,
                                 const Matrix* train_features)
    : labels_(labels),
      bundle_(bundle),
      tau_(tau),
      direction_(direction),
      live_(live_teacher_forward),
      train_features_(train_features) {
  if (tau <= 0.0) throw ConfigError("KdComponentLoss: temperature must be positive");
  if (live_ && !train_features_)
    throw ConfigError("KdComponentLoss: live teacher mode needs the training features");
}

Index KdComponentLoss::components() const { return 1 + bundle_.teacher_count(); }

LossEval KdComponentLoss::eval_component(Index component, Index, Index id,
                                         const RowVector& logits) const {
  LossEval e;
  if (component == 0) {
    e.value = ce_loss(logits, labels_[static_cast<std::size_t>(id)]);
    e.dlogits = ce_grad(logits, labels_[static_cast<std::size_t>(id)]);
    return e;
  }
  const TeacherEntry& t = bundle_.teachers[static_cast<std::size_t>(component - 1)];
  RowVector teacher_logits;
  if (live_) {
    teacher_logits = forward(t.params, train_features_->row(id));
  } else {
    teacher_logits = t.cached_logits.row(id);
  }
  e.value = kd_loss(logits, teacher_logits, tau_, direction_);
  e.dlogits = kd_grad(logits, teacher_logits, tau_, direction_);
  return e;
}

namespace {

TrainTask make_task(const KdConfig& cfg, const Dataset& train, const Dataset& val,
                    const Dataset& test, const ComponentLoss& loss, std::uint64_t seed) {
  TrainTask task;
  task.train_features = &train.features;
  task.train_labels = &train.labels;
  task.val_features = &val.features;
  task.val_labels = &val.labels;
  task.test_features = &test.features;
  task.test_labels = &test.labels;
  task.loss = &loss;
  task.init = init_mlp(cfg.student_dims, cfg.activation, mix_seed(seed, 0));
  task.sgd = SgdState::for_params(task.init, cfg.lr, cfg.momentum, cfg.weight_decay,
                                  cfg.milestones, cfg.gamma);
  task.sgd.reset_velocity_at_milestones = cfg.reset_momentum_at_milestones;
  task.schedule = cfg.schedule;
  return task;
}

}  // namespace

RunResult run_kd(const KdConfig& cfg, const TeacherBundle& bundle, KdMode mode,
                 const MetaConfig& meta, const Dataset& train, const Dataset& val,
                 const Dataset& test, std::uint64_t seed) {
  if (mode == KdMode::none) {
    CeComponentLoss ce(train.labels);
    TrainTask task = make_task(cfg, train, val, test, ce, seed);
    RowVector row(1);
    row << 1.0;
    return train_fixed(task, row, seed);
  }

  bundle.validate();
  if (bundle.teachers.front().cached_logits.cols() != cfg.student_dims.back())
    throw ConfigError("run_kd: teacher and student class counts differ");
  if (bundle.teachers.front().cached_logits.rows() != train.size())
    throw ConfigError("run_kd: teacher cache rows do not match the training set");

  KdComponentLoss loss(train.labels, bundle, cfg.tau, cfg.kl_direction);
  TrainTask task = make_task(cfg, train, val, test, loss, seed);
  if (mode == KdMode::fixed) {
    const Index k = bundle.teacher_count();
    RowVector row(k + 1);
    row(0) = 1.0 - cfg.lambda_a;
    for (Index j = 1; j <= k; ++j) row(j) = cfg.lambda_a / static_cast<double>(k);
    return train_fixed(task, row, seed);
  }
  return train_amal(task, meta, seed);
}

RunResult run_self_distillation(const KdConfig& cfg, const MetaConfig& meta, const Dataset& train,
                                const Dataset& val, const Dataset& test, std::uint64_t seed,
                                KdMode mode, int teacher_epochs) {
  SgdState sgd_template;
  sgd_template.lr0 = cfg.lr;
  sgd_template.momentum = cfg.momentum;
  sgd_template.weight_decay = cfg.weight_decay;
  sgd_template.milestones = cfg.milestones;
  sgd_template.gamma = cfg.gamma;
  TrainSchedule teacher_schedule = cfg.schedule;
  if (teacher_epochs > 0) teacher_schedule.epochs = teacher_epochs;
  TeacherBundle bundle = train_teacher(train, cfg.student_dims, cfg.activation, sgd_template,
                                       teacher_schedule, {}, mix_seed(seed, 7));
  bundle.temperature = cfg.tau;
  return run_kd(cfg, bundle, mode, meta, train, val, test, seed);
}

void save_teacher_bundle(const TeacherBundle& bundle, const std::string& dir) {
  bundle.validate();
  fs::create_directories(dir);
  json manifest;
  manifest["temperature"] = bundle.temperature;
  manifest["teachers"] = json::array();
  char buf[40];
  for (const auto& t : bundle.teachers) {
    std::string ckpt = "teacher_" + t.tag + ".ckpt";
    std::string cache = "logits_" + t.tag + ".csv";
    save_checkpoint(t.params, (fs::path(dir) / ckpt).string());
    std::ofstream os(fs::path(dir) / cache);
    if (!os) throw IoError("cannot open logits cache for writing: " + cache);
    os << "teacher_id:" << t.tag << ",epoch:" << t.epoch << '\n';
    for (Index i = 0; i < t.cached_logits.rows(); ++i) {
      for (Index j = 0; j < t.cached_logits.cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.cached_logits(i, j));
        os << buf << (j + 1 == t.cached_logits.cols() ? '\n' : ',');
      }
    }
    manifest["teachers"].push_back(
        {{"tag", t.tag}, {"epoch", t.epoch}, {"checkpoint", ckpt}, {"logits", cache}});
  }
  std::ofstream os(fs::path(dir) / "bundle.json");
  os << manifest.dump(2) << '\n';
  if (!os) throw IoError("failed writing bundle manifest in " + dir);
}

TeacherBundle load_teacher_bundle(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "bundle.json");
  if (!is) throw IoError("cannot open bundle manifest in " + dir);
  json manifest = json::parse(is, nullptr, true, false);
  TeacherBundle bundle;
  bundle.temperature = manifest.at("temperature").get<double>();
  for (const auto& jt : manifest.at("teachers")) {
    TeacherEntry t;
    t.tag = jt.at("tag").get<std::string>();
    t.epoch = jt.at("epoch").get<int>();
    t.params = load_checkpoint((fs::path(dir) / jt.at("checkpoint").get<std::string>()).string());
    std::string cache = (fs::path(dir) / jt.at("logits").get<std::string>()).string();
    std::ifstream ls(cache);
    if (!ls) throw IoError("cannot open logits cache: " + cache);
    std::string line;
    if (!std::getline(ls, line) || line.rfind("teacher_id:", 0) != 0)
      throw ParseError(cache + ":1: expected teacher_id header");
    std::vector<double> flat;
    Index cols = 0;
    std::size_t line_no = 1;
    while (std::getline(ls, line)) {
      ++line_no;
      if (line.empty()) continue;
      Index c = 0;
      std::size_t start = 0;
      while (start <= line.size()) {
        std::size_t comma = line.find(',', start);
        std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                         : comma - start);
        try {
          flat.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ParseError(cache + ":" + std::to_string(line_no) + ": not a number: " + cell);
        }
        ++c;
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (cols == 0) cols = c;
      else if (c != cols)
        throw ParseError(cache + ":" + std::to_string(line_no) + ": ragged row");
    }
    t.cached_logits.resize(static_cast<Index>(flat.size()) / cols, cols);
    for (Index i = 0; i < t.cached_logits.rows(); ++i)
      for (Index j = 0; j < cols; ++j)
        t.cached_logits(i, j) = flat[static_cast<std::size_t>(i * cols + j)];
    bundle.teachers.push_back(std::move(t));
  }
  bundle.validate();
  return bundle;
}

}  // namespace amal

#include "amal/rules.hpp"

#include <cmath>

#include "amal/rng.hpp"

namespace amal {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) {
  if (p <= 0.0 || p >= 1.0) throw ConfigError("rule model probabilities must be in (0, 1)");
  return std::log(p / (1.0 - p));
}

}  // namespace

double RuleModelParams::hit_prob(Index j) const { return sigmoid(hit_logits(j)); }
double RuleModelParams::miss_prob(Index j) const { return sigmoid(miss_logits(j)); }

void RuleModelParams::validate() const {
  if (class_prior.size() < 2) throw ConfigError("RuleModelParams: need at least two classes");
  if (std::abs(class_prior.sum() - 1.0) > 1e-9 || (class_prior.array() <= 0.0).any())
    throw ConfigError("RuleModelParams: prior must be a positive distribution");
  if (hit_logits.size() != miss_logits.size() ||
      static_cast<Index>(rule_classes.size()) != hit_logits.size())
    throw ConfigError("RuleModelParams: per-rule parameter lengths disagree");
  for (int c : rule_classes)
    if (c < 0 || c >= class_count())
      throw ConfigError("RuleModelParams: rule class out of range");
  if (!hit_logits.allFinite() || !miss_logits.allFinite())
    throw ConfigError("RuleModelParams: non-finite logits");
}

RuleModelParams init_rule_model(const std::vector<int>& rule_classes, int class_count,
                                double hit_init, double miss_init) {
  RuleModelParams phi;
  phi.class_prior = Vector::Constant(class_count, 1.0 / static_cast<double>(class_count));
  phi.rule_classes = rule_classes;
  phi.hit_logits = Vector::Constant(static_cast<Index>(rule_classes.size()), logit(hit_init));
  phi.miss_logits = Vector::Constant(static_cast<Index>(rule_classes.size()), logit(miss_init));
  phi.validate();
  return phi;
}

RuleModelGrads RuleModelGrads::zeros_like(const RuleModelParams& phi) {
  RuleModelGrads g;
  g.hit = Vector::Zero(phi.rule_count());
  g.miss = Vector::Zero(phi.rule_count());
  return g;
}

Vector log_rule_joint(const RuleModelParams& phi, const RowVector& l) {
  if (l.size() != phi.rule_count()) throw ShapeError("rule firing vector length mismatch");
  Vector out = phi.class_prior.array().log();
  for (Index j = 0; j < phi.rule_count(); ++j) {
    const double fired = l(j);
    const double a = phi.hit_prob(j);
    const double b = phi.miss_prob(j);
    const double log_hit = fired != 0.0 ? std::log(a) : std::log1p(-a);
    const double log_miss = fired != 0.0 ? std::log(b) : std::log1p(-b);
    const int cj = phi.rule_classes[static_cast<std::size_t>(j)];
    for (Index y = 0; y < out.size(); ++y)
      out(y) += (static_cast<int>(y) == cj) ? log_hit : log_miss;
  }
  return out;
}

double rule_joint(const RuleModelParams& phi, const RowVector& l, int y) {
  if (y < 0 || y >= phi.class_count()) throw ConfigError("rule_joint: class out of range");
  return std::exp(log_rule_joint(phi, l)(y));
}

RowVector rule_posterior(const RuleModelParams& phi, const RowVector& l) {
  Vector lj = log_rule_joint(phi, l);
  double m = lj.maxCoeff();
  Vector e = (lj.array() - m).exp();
  return (e / e.sum()).transpose();
}

int hypothesized_label(const RuleModelParams& phi, const RowVector& l) {
  Vector lj = log_rule_joint(phi, l);
  int best = 0;
  for (Index y = 1; y < lj.size(); ++y)
    if (lj(y) > lj(best)) best = static_cast<int>(y);
  return best;
}

namespace {

// Agreement term KL(P_theta(.|x) || P_phi(.|l)) with gradients for both sides.
struct KlAgreement {
  double value = 0.0;
  RowVector dlogits;
  Vector dhit;
  Vector dmiss;
};

KlAgreement kl_agreement(const RuleModelParams& phi, const RowVector& student_logits,
                         const RowVector& l) {
  KlAgreement out;
  RowVector p = softmax_t(student_logits, 1.0);
  Vector lj = log_rule_joint(phi, l);
  double m = lj.maxCoeff();
  Vector el = (lj.array() - m).exp();
  RowVector q = (el / el.sum()).transpose();
  for (Index y = 0; y < p.size(); ++y) out.value += p(y) * (std::log(p(y)) - std::log(q(y)));
  // d/dz: p_j (r_j - sum p r), r = log p - log q
  RowVector r = p.array().log() - q.array().log();
  double mean_r = (p.array() * r.array()).sum();
  out.dlogits = (p.array() * (r.array() - mean_r)).matrix();
  // d/d(rule logits): through the log joint, dKL/dlog_joint_y = q_y - p_y
  out.dhit = Vector::Zero(phi.rule_count());
  out.dmiss = Vector::Zero(phi.rule_count());
  for (Index j = 0; j < phi.rule_count(); ++j) {
    const int cj = phi.rule_classes[static_cast<std::size_t>(j)];
    const double diff_c = q(cj) - p(cj);
    out.dhit(j) = diff_c * (l(j) - phi.hit_prob(j));
    out.dmiss(j) = -diff_c * (l(j) - phi.miss_prob(j));
  }
  return out;
}

}  // namespace

RuleLossEval rule_denoise_loss(const RuleModelParams& phi, const RowVector& student_logits,
                               const RowVector& l, std::optional<int> label,
                               const RowVector& lambda_row) {
  if (lambda_row.size() != 2)
    throw ShapeError("rule_denoise_loss: lambda row must be (lambda_p, lambda_a)");
  const double lam_p = lambda_row(0);
  const double lam_a = lambda_row(1);

  RuleLossEval out;
  out.dlogits = RowVector::Zero(student_logits.size());
  out.dphi = RuleModelGrads::zeros_like(phi);

  const bool fired = l.sum() > 0.0;
  if (!label.has_value() && !fired) return out;  // uncovered unlabeled instance

  // Primary CE: ground-truth target when labeled, hypothesized label otherwise
  // (a constant target; no gradient through the argmax).
  const int target = label.has_value() ? *label : hypothesized_label(phi, l);
  if (lam_p != 0.0) {
    out.value += lam_p * ce_loss(student_logits, target);
    out.dlogits += lam_p * ce_grad(student_logits, target);
  }

  if (lam_a != 0.0) {
    KlAgreement kl = kl_agreement(phi, student_logits, l);
    out.value += lam_a * kl.value;
    out.dlogits += lam_a * kl.dlogits;
    out.dphi.hit += lam_a * kl.dhit;
    out.dphi.miss += lam_a * kl.dmiss;
  }

  // Supervised rule-model likelihood, unweighted, labeled instances only.
  if (label.has_value()) {
    Vector lj = log_rule_joint(phi, l);
    out.value += -lj(*label);
    for (Index j = 0; j < phi.rule_count(); ++j) {
      const int cj = phi.rule_classes[static_cast<std::size_t>(j)];
      if (cj == *label)
        out.dphi.hit(j) += -(l(j) - phi.hit_prob(j));
      else
        out.dphi.miss(j) += -(l(j) - phi.miss_prob(j));
    }
  }
  return out;
}

RuleLossFullEval rule_denoise_loss_full(const MlpParams& theta, const RuleModelParams& phi,
                                        const RowVector& features, const RowVector& l,
                                        std::optional<int> label, const RowVector& lambda_row) {
  ForwardTrace trace = forward_trace(theta, features);
  RuleLossEval e = rule_denoise_loss(phi, trace.logits.row(0), l, label, lambda_row);
  RuleLossFullEval out;
  out.value = e.value;
  out.dtheta = backward_single(theta, trace, 0, e.dlogits);
  out.dphi = std::move(e.dphi);
  return out;
}

namespace {

// Per-training-instance view of the rules problem: which original LfDataset
// row an instance maps to and whether it carries a label.
struct RulesView {
  Matrix features;
  std::vector<int> labels;            // synthetic truth; loss uses labeled_flag
  std::vector<std::uint8_t> labeled;  // 1 = in D'
  std::vector<Index> lf_row;          // row into the firing matrix
};

class RulesComponentLoss final : public ComponentLoss {
 public:
  RulesComponentLoss(const RulesView& view, const LfDataset& lf, const RuleModelParams& phi)
      : view_(view), lf_(lf), phi_(phi) {}
  Index components() const override { return 2; }
  LossEval eval_component(Index component, Index, Index id,
                          const RowVector& logits) const override {
    LossEval e;
    e.value = 0.0;
    e.dlogits = RowVector::Zero(logits.size());
    const bool labeled = view_.labeled[static_cast<std::size_t>(id)] != 0;
    RowVector l = lf_.fires.row(view_.lf_row[static_cast<std::size_t>(id)]);
    const bool fired = l.sum() > 0.0;
    if (!labeled && !fired) return e;
    if (component == 0) {
      const int target =
          labeled ? view_.labels[static_cast<std::size_t>(id)] : hypothesized_label(phi_, l);
      e.value = ce_loss(logits, target);
      e.dlogits = ce_grad(logits, target);
    } else {
      KlAgreement kl = kl_agreement(phi_, logits, l);
      e.value = kl.value;
      e.dlogits = kl.dlogits;
    }
    return e;
  }

 private:
  const RulesView& view_;
  const LfDataset& lf_;
  const RuleModelParams& phi_;
};

// Joint phi updates: lambda_a-weighted KL plus unweighted LL_s, plain SGD.
class RulesHooks final : public TrainHooks {
 public:
  RulesHooks(const RulesView& view, const LfDataset& lf, RuleModelParams& phi)
      : view_(view), lf_(lf), phi_(phi) {}

  void on_model_batch(const Batch& batch, const Matrix& logits, const Matrix& lambda_rows,
                      double lr) override {
    RuleModelGrads acc = RuleModelGrads::zeros_like(phi_);
    for (Index i = 0; i < batch.size(); ++i) {
      const Index id = batch.indices[static_cast<std::size_t>(i)];
      const bool labeled = view_.labeled[static_cast<std::size_t>(id)] != 0;
      RowVector l = lf_.fires.row(view_.lf_row[static_cast<std::size_t>(id)]);
      std::optional<int> label =
          labeled ? std::optional<int>(view_.labels[static_cast<std::size_t>(id)]) : std::nullopt;
      RowVector lam(2);
      lam << 0.0, lambda_rows(i, 1);  // only the KL part reaches phi
      RuleLossEval e = rule_denoise_loss(phi_, logits.row(i), l, label, lam);
      acc.hit += e.dphi.hit;
      acc.miss += e.dphi.miss;
    }
    const double step = lr / static_cast<double>(batch.size());
    phi_.hit_logits -= step * acc.hit;
    phi_.miss_logits -= step * acc.miss;
  }

  double extra_loss(Index id, const RowVector&) const override {
    if (view_.labeled[static_cast<std::size_t>(id)] == 0) return 0.0;
    RowVector l = lf_.fires.row(view_.lf_row[static_cast<std::size_t>(id)]);
    return -log_rule_joint(phi_, l)(view_.labels[static_cast<std::size_t>(id)]);
  }

 private:
  const RulesView& view_;
  const LfDataset& lf_;
  RuleModelParams& phi_;
};

}  // namespace

RulesRunResult run_rules(const LfDataset& lf, const Dataset& test, RulesMode mode,
                         const RulesConfig& cfg, const MetaConfig& meta, std::uint64_t seed) {
  lf.validate();
  test.validate();
  if (cfg.val_count < 1) throw ConfigError("run_rules: val_count must be positive");
  if (cfg.val_count >= lf.labeled_count)
    throw ConfigError("run_rules: labeled set smaller than validation request");

  // Carve validation from the labeled part; remaining labeled rows train D'.
  Rng carve_rng = make_rng(seed, 11);
  std::vector<Index> labeled_order = shuffled_indices(lf.labeled_count, carve_rng);
  std::vector<Index> val_rows(labeled_order.begin(),
                              labeled_order.begin() + static_cast<std::ptrdiff_t>(cfg.val_count));
  std::vector<Index> train_labeled(labeled_order.begin() +
                                       static_cast<std::ptrdiff_t>(cfg.val_count),
                                   labeled_order.end());
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(train_labeled.begin(), train_labeled.end());

  Matrix val_features(static_cast<Index>(val_rows.size()), lf.base.dim());
  std::vector<int> val_labels(val_rows.size());
  for (std::size_t i = 0; i < val_rows.size(); ++i) {
    val_features.row(static_cast<Index>(i)) = lf.base.features.row(val_rows[i]);
    val_labels[i] = lf.base.labels[static_cast<std::size_t>(val_rows[i])];
  }

  RulesView view;
  const bool only_labeled = (mode == RulesMode::only_l);
  const Index n_unlabeled = lf.base.size() - lf.labeled_count;
  const Index n_train = static_cast<Index>(train_labeled.size()) +
                        (only_labeled ? 0 : n_unlabeled);
  view.features.resize(n_train, lf.base.dim());
  view.labels.resize(static_cast<std::size_t>(n_train));
  view.labeled.resize(static_cast<std::size_t>(n_train));
  view.lf_row.resize(static_cast<std::size_t>(n_train));
  Index at = 0;
  for (Index r : train_labeled) {
    view.features.row(at) = lf.base.features.row(r);
    view.labels[static_cast<std::size_t>(at)] = lf.base.labels[static_cast<std::size_t>(r)];
    view.labeled[static_cast<std::size_t>(at)] = 1;
    view.lf_row[static_cast<std::size_t>(at)] = r;
    ++at;
  }
  if (!only_labeled) {
    for (Index r = lf.labeled_count; r < lf.base.size(); ++r) {
      view.features.row(at) = lf.base.features.row(r);
      view.labels[static_cast<std::size_t>(at)] = lf.base.labels[static_cast<std::size_t>(r)];
      view.labeled[static_cast<std::size_t>(at)] = 0;
      view.lf_row[static_cast<std::size_t>(at)] = r;
      ++at;
    }
  }

  RuleModelParams phi =
      init_rule_model(lf.rule_classes, lf.base.class_count, cfg.hit_init, cfg.miss_init);

  TrainTask task;
  task.train_features = &view.features;
  task.train_labels = &view.labels;
  task.val_features = &val_features;
  task.val_labels = &val_labels;
  task.test_features = &test.features;
  task.test_labels = &test.labels;
  task.init = init_mlp(cfg.model_dims, cfg.activation, mix_seed(seed, 0));
  task.sgd = SgdState::for_params(task.init, cfg.lr, cfg.momentum, cfg.weight_decay,
                                  cfg.milestones, cfg.gamma);
  task.sgd.reset_velocity_at_milestones = cfg.reset_momentum_at_milestones;
  task.schedule = cfg.schedule;

  RulesRunResult out;
  if (mode == RulesMode::only_l) {
    // Plain CE on D' alone; labeling functions are ignored entirely.
    class OnlyLLoss final : public ComponentLoss {
     public:
      explicit OnlyLLoss(const std::vector<int>& labels) : labels_(labels) {}
      Index components() const override { return 1; }
      LossEval eval_component(Index, Index, Index id, const RowVector& logits) const override {
        LossEval e;
        e.value = ce_loss(logits, labels_[static_cast<std::size_t>(id)]);
        e.dlogits = ce_grad(logits, labels_[static_cast<std::size_t>(id)]);
        return e;
      }
     private:
      const std::vector<int>& labels_;
    } loss(view.labels);
    task.loss = &loss;
    RowVector row(1);
    row << 1.0;
    out.run = train_fixed(task, row, seed);
    out.final_phi = phi;
    return out;
  }

  RulesComponentLoss loss(view, lf, phi);
  RulesHooks hooks(view, lf, phi);
  task.loss = &loss;
  task.hooks = &hooks;
  if (mode == RulesMode::spear_fixed) {
    RowVector row(2);
    row << 1.0, 1.0;
    out.run = train_fixed(task, row, seed);
  } else {
    out.run = train_amal(task, meta, seed);
  }
  out.final_phi = phi;
  return out;
}

}  // namespace amal

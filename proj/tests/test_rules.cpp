#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "amal/data.hpp"
#include "amal/rules.hpp"
#include "amal/rng.hpp"
#include "oracle_mlp.hpp"

using namespace amal;

namespace {

RowVector rv(std::initializer_list<double> v) {
  RowVector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// Plain-loop enumeration of the joint for the oracle checks.
double joint_oracle(const RuleModelParams& phi, const RowVector& l, int y) {
  double p = phi.class_prior(y);
  for (Index j = 0; j < phi.rule_count(); ++j) {
    double on = (phi.rule_classes[static_cast<std::size_t>(j)] == y) ? phi.hit_prob(j)
                                                                     : phi.miss_prob(j);
    p *= (l(j) != 0.0) ? on : (1.0 - on);
  }
  return p;
}

bool params_identical(const MlpParams& a, const MlpParams& b) {
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    if ((a.weights[k].array() != b.weights[k].array()).any()) return false;
    if ((a.biases[k].array() != b.biases[k].array()).any()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("rule_joint: symmetry, boundary, enumeration oracle") {
  // uninformative rules: hit == miss makes the joint proportional to the prior
  RuleModelParams flat = init_rule_model({0, 1}, 2, 0.5, 0.5);
  RowVector l = rv({1.0, 0.0});
  double j0 = rule_joint(flat, l, 0);
  double j1 = rule_joint(flat, l, 1);
  CHECK(j0 == doctest::Approx(j1).epsilon(1e-12));

  // one near-perfectly precise rule fired: posterior mass concentrates
  RuleModelParams sharp = init_rule_model({0}, 3, 0.9, 1e-12);
  RowVector fired = rv({1.0});
  RowVector post = rule_posterior(sharp, fired);
  CHECK(post(0) >= 1.0 - 1e-9);

  // hand-set 2-rule 2-class vs enumeration
  RuleModelParams phi = init_rule_model({0, 1}, 2, 0.8, 0.25);
  for (int y = 0; y < 2; ++y)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        RowVector firing = rv({static_cast<double>(a), static_cast<double>(b)});
        CHECK(rule_joint(phi, firing, y) ==
              doctest::Approx(joint_oracle(phi, firing, y)).epsilon(1e-12));
        CHECK(rule_joint(phi, firing, y) > 0.0);
      }
}

TEST_CASE("rule_posterior: uniform, symmetric contradiction, brute-force normalization") {
  RuleModelParams phi = init_rule_model({0, 1, 2}, 3, 0.7, 0.2);
  RowVector none = rv({0.0, 0.0, 0.0});
  RowVector post = rule_posterior(phi, none);
  CHECK(std::abs(post.sum() - 1.0) <= 1e-12);
  // no rule fired with equal per-rule reliabilities: posterior stays uniform
  for (Index y = 0; y < 3; ++y) CHECK(post(y) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // contradictory equally-reliable rules on two classes
  RuleModelParams duo = init_rule_model({0, 1}, 2, 0.9, 0.1);
  RowVector both = rv({1.0, 1.0});
  RowVector p2 = rule_posterior(duo, both);
  CHECK(p2(0) == doctest::Approx(p2(1)).epsilon(1e-12));

  // hand-set 3-rule example against brute-force normalization
  RuleModelParams tri = init_rule_model({0, 1, 0}, 2, 0.65, 0.3);
  tri.hit_logits(2) = 2.0;
  tri.miss_logits(2) = -1.5;
  RowVector firing = rv({1.0, 0.0, 1.0});
  RowVector p3 = rule_posterior(tri, firing);
  double z = joint_oracle(tri, firing, 0) + joint_oracle(tri, firing, 1);
  for (int y = 0; y < 2; ++y)
    CHECK(p3(y) == doctest::Approx(joint_oracle(tri, firing, y) / z).epsilon(1e-12));
}

TEST_CASE("hypothesized_label: argmax, tie rule, posterior agreement") {
  RuleModelParams phi = init_rule_model({1}, 4, 0.6, 0.1);
  RowVector fired = rv({1.0});
  CHECK(hypothesized_label(phi, fired) == 1);

  // symmetric tie: lowest class index wins
  RuleModelParams flat = init_rule_model({2}, 3, 0.5, 0.5);
  CHECK(hypothesized_label(flat, fired) == 0);

  Rng rng = make_rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    RuleModelParams r = init_rule_model({0, 1, 2, 0}, 3, 0.7, 0.2);
    for (Index j = 0; j < 4; ++j) {
      r.hit_logits(j) = uniform_range(rng, -2.0, 2.0);
      r.miss_logits(j) = uniform_range(rng, -2.0, 2.0);
    }
    RowVector l(4);
    for (Index j = 0; j < 4; ++j) l(j) = uniform_index(rng, 2) ? 1.0 : 0.0;
    int g = hypothesized_label(r, l);
    RowVector post = rule_posterior(r, l);
    Index arg;
    post.maxCoeff(&arg);
    CHECK(g == static_cast<int>(arg));
  }
}

TEST_CASE("rule_denoise_loss: branch reductions and hand evaluation") {
  RuleModelParams phi = init_rule_model({0, 1}, 2, 0.8, 0.25);
  RowVector logits = rv({0.7, -0.4});
  RowVector l = rv({1.0, 0.0});

  // labeled, lambda = (1, 0): CE + supervised NLL only
  RuleLossEval e = rule_denoise_loss(phi, logits, l, 1, rv({1.0, 0.0}));
  double expect = ce_loss(logits, 1) - std::log(joint_oracle(phi, l, 1));
  CHECK(e.value == doctest::Approx(expect).epsilon(1e-12));

  // labeled, lambda = (1, 1): CE + KL + NLL, each term hand-assembled
  RuleLossEval full = rule_denoise_loss(phi, logits, l, 1, rv({1.0, 1.0}));
  RowVector p = softmax_t(logits, 1.0);
  double z = joint_oracle(phi, l, 0) + joint_oracle(phi, l, 1);
  double kl = 0.0;
  for (int y = 0; y < 2; ++y)
    kl += p(y) * (std::log(p(y)) - std::log(joint_oracle(phi, l, y) / z));
  double expect_full = ce_loss(logits, 1) + kl - std::log(joint_oracle(phi, l, 1));
  CHECK(full.value == doctest::Approx(expect_full).epsilon(1e-12));

  // unlabeled with no fired rule contributes nothing
  RuleLossEval skip = rule_denoise_loss(phi, logits, rv({0.0, 0.0}), std::nullopt,
                                        rv({1.0, 1.0}));
  CHECK(skip.value == 0.0);
  CHECK(skip.dlogits.cwiseAbs().maxCoeff() == 0.0);
  CHECK(skip.dphi.hit.cwiseAbs().maxCoeff() == 0.0);

  // unlabeled with a fired rule: CE against the hypothesized label
  RuleLossEval unlab = rule_denoise_loss(phi, logits, l, std::nullopt, rv({1.0, 0.0}));
  CHECK(unlab.value == doctest::Approx(ce_loss(logits, hypothesized_label(phi, l))));
}

TEST_CASE("rule_denoise_loss gradients match finite differences in theta and phi") {
  Rng rng = make_rng(88);
  const double eps = 1e-6;
  for (int trial = 0; trial < 12; ++trial) {
    RuleModelParams phi = init_rule_model({0, 1, 0}, 2, 0.7, 0.3);
    for (Index j = 0; j < 3; ++j) {
      phi.hit_logits(j) = uniform_range(rng, -1.5, 1.5);
      phi.miss_logits(j) = uniform_range(rng, -1.5, 1.5);
    }
    MlpParams theta = init_mlp({3, 4, 2}, Activation::tanh, 300 + trial);
    RowVector x(3);
    for (Index k = 0; k < 3; ++k) x(k) = normal(rng);
    RowVector l(3);
    double fired = 0.0;
    for (Index j = 0; j < 3; ++j) {
      l(j) = uniform_index(rng, 2) ? 1.0 : 0.0;
      fired += l(j);
    }
    std::optional<int> label;
    if (trial % 2 == 0) label = static_cast<int>(uniform_index(rng, 2));
    if (!label.has_value() && fired == 0.0) l(0) = 1.0;
    RowVector lam = rv({uniform_range(rng, 0.1, 1.0), uniform_range(rng, 0.1, 1.0)});

    RuleLossFullEval full = rule_denoise_loss_full(theta, phi, x, l, label, lam);

    // theta side
    Matrix xm(1, 3);
    xm << x(0), x(1), x(2);
    auto value_theta = [&]() {
      return rule_denoise_loss(phi, forward(theta, xm).row(0), l, label, lam).value;
    };
    for (std::size_t layer = 0; layer < theta.weights.size(); ++layer)
      for (int probe = 0; probe < 3; ++probe) {
        Index r = static_cast<Index>(
            uniform_index(rng, static_cast<std::uint64_t>(theta.weights[layer].rows())));
        Index c = static_cast<Index>(
            uniform_index(rng, static_cast<std::uint64_t>(theta.weights[layer].cols())));
        double fd = oracle::fd_param(theta, layer, r, c, false, eps, value_theta);
        CHECK(oracle::rel_err(full.dtheta.weights[layer](r, c), fd) <= 1e-5);
      }

    // phi side (hit and miss logits); the hypothesized label is a constant
    // target, so probe only where it is stable or the instance is labeled
    auto value_phi = [&]() {
      return rule_denoise_loss(phi, forward(theta, xm).row(0), l, label, lam).value;
    };
    // d/d(phi) holds where the hypothesized label does not flip under the
    // probe (the argmax target is a constant by design).
    auto fd_phi = [&](Vector& slot, Index j, double analytic) {
      double saved = slot(j);
      slot(j) = saved + eps;
      double hi = value_phi();
      int g_hi = hypothesized_label(phi, l);
      slot(j) = saved - eps;
      double lo = value_phi();
      int g_lo = hypothesized_label(phi, l);
      slot(j) = saved;
      if (label.has_value() || g_hi == g_lo)
        CHECK(oracle::rel_err(analytic, (hi - lo) / (2 * eps)) <= 1e-5);
    };
    for (Index j = 0; j < 3; ++j) {
      fd_phi(phi.hit_logits, j, full.dphi.hit(j));
      fd_phi(phi.miss_logits, j, full.dphi.miss(j));
    }
  }
}

namespace {

struct RulesDesk {
  LfDataset lf;
  Dataset test;
  RulesConfig cfg;
};

RulesDesk make_rules_desk(std::uint64_t seed, Index labeled = 60, Index unlabeled = 300,
                          Index test_n = 80) {
  Dataset all = gen_synthetic(seed, labeled + unlabeled + test_n, 6, 2, 1.4, 5);
  SplitResult parts = split(all, {labeled + unlabeled, 0, test_n}, mix_seed(seed, 1));
  Rng rng = make_rng(seed, 2);
  Dataset pool = subset(parts.train, shuffled_indices(parts.train.size(), rng), "pool");
  RulesDesk d;
  d.lf = gen_synthetic_lfs(pool, 6, 0.8, 0.7, labeled, mix_seed(seed, 3));
  d.test = parts.test;
  d.cfg.model_dims = {6, 8, 2};
  d.cfg.val_count = 20;
  d.cfg.milestones = {};
  d.cfg.schedule = {5, 32};
  return d;
}

}  // namespace

TEST_CASE("run_rules: amal with lr_lambda=0 and lambda=1 is bit-identical to spear_fixed") {
  RulesDesk d = make_rules_desk(40);
  MetaConfig meta;
  meta.period = 2;
  meta.lr_lambda = 0.0;
  meta.init_value = 1.0;
  RulesRunResult amal_run = run_rules(d.lf, d.test, RulesMode::amal, d.cfg, meta, 5);
  RulesRunResult spear = run_rules(d.lf, d.test, RulesMode::spear_fixed, d.cfg, meta, 5);
  CHECK(params_identical(amal_run.run.final_params, spear.run.final_params));
  for (std::size_t e = 0; e < spear.run.metrics.size(); ++e)
    CHECK(amal_run.run.metrics[e].train_loss == spear.run.metrics[e].train_loss);
  CHECK((amal_run.final_phi.hit_logits - spear.final_phi.hit_logits).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("run_rules: only_l ignores the labeling functions entirely") {
  RulesDesk d = make_rules_desk(41);
  MetaConfig meta;
  RulesRunResult a = run_rules(d.lf, d.test, RulesMode::only_l, d.cfg, meta, 6);
  // corrupting the firing matrix must not change the only_l trajectory
  RulesDesk d2 = make_rules_desk(41);
  d2.lf.fires.setZero();
  RulesRunResult b = run_rules(d2.lf, d2.test, RulesMode::only_l, d2.cfg, meta, 6);
  CHECK(params_identical(a.run.final_params, b.run.final_params));
  // and phi is untouched
  RuleModelParams init = init_rule_model(d.lf.rule_classes, 2, d.cfg.hit_init, d.cfg.miss_init);
  CHECK((a.final_phi.hit_logits - init.hit_logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("run_rules: lambda table covers labeled-train plus unlabeled instances") {
  RulesDesk d = make_rules_desk(42);
  MetaConfig meta;
  meta.period = 2;
  meta.lr_lambda = 5.0;
  RulesRunResult r = run_rules(d.lf, d.test, RulesMode::amal, d.cfg, meta, 7);
  CHECK(r.run.final_lambdas.rows() == (60 - 20) + 300);
  CHECK(r.run.final_lambdas.components() == 2);
  CHECK(r.run.metrics.size() == 5);

  RulesConfig bad = d.cfg;
  bad.val_count = 60;  // as large as the labeled pool
  CHECK_THROWS_AS(run_rules(d.lf, d.test, RulesMode::amal, bad, meta, 0), ConfigError);
}

TEST_CASE("run_rules: phi actually trains in spear mode") {
  RulesDesk d = make_rules_desk(43);
  MetaConfig meta;
  RulesRunResult r = run_rules(d.lf, d.test, RulesMode::spear_fixed, d.cfg, meta, 8);
  RuleModelParams init = init_rule_model(d.lf.rule_classes, 2, d.cfg.hit_init, d.cfg.miss_init);
  CHECK((r.final_phi.hit_logits - init.hit_logits).cwiseAbs().maxCoeff() > 0.0);
}

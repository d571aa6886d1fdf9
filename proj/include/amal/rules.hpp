#pragma once

#include <optional>
#include <vector>

#include "amal/data.hpp"
#include "amal/losses.hpp"
#include "amal/metaopt.hpp"

namespace amal {

// Naive-Bayes label model over rule firings. class_prior is held fixed; the
// trainable parameters are the per-rule firing logits, sigmoid-mapped to
// P(l_j = 1 | y = c_j) (hit) and P(l_j = 1 | y != c_j) (miss).
struct RuleModelParams {
  Vector class_prior;
  std::vector<int> rule_classes;
  Vector hit_logits;
  Vector miss_logits;

  Index rule_count() const { return hit_logits.size(); }
  int class_count() const { return static_cast<int>(class_prior.size()); }
  double hit_prob(Index j) const;
  double miss_prob(Index j) const;
  void validate() const;
};

RuleModelParams init_rule_model(const std::vector<int>& rule_classes, int class_count,
                                double hit_init = 0.7, double miss_init = 0.3);

struct RuleModelGrads {
  Vector hit;
  Vector miss;
  static RuleModelGrads zeros_like(const RuleModelParams& phi);
};

// P_phi(l, y) = prior[y] * prod_j P(l_j | y); strictly positive.
double rule_joint(const RuleModelParams& phi, const RowVector& l, int y);
Vector log_rule_joint(const RuleModelParams& phi, const RowVector& l);  // over all y
// Normalized posterior over classes.
RowVector rule_posterior(const RuleModelParams& phi, const RowVector& l);
// argmax_y P_phi(l, y); ties broken toward the lowest class index.
int hypothesized_label(const RuleModelParams& phi, const RowVector& l);

// One instance of the branch-wise denoising objective. label: the ground-truth
// class for labeled instances, empty for unlabeled ones.
struct RuleLossEval {
  double value = 0.0;       // lambda-weighted branch value (plus LL_s when labeled)
  RowVector dlogits;        // gradient w.r.t. the feature model's logits
  RuleModelGrads dphi;      // gradient w.r.t. the rule model's logits
};

RuleLossEval rule_denoise_loss(const RuleModelParams& phi, const RowVector& student_logits,
                               const RowVector& l, std::optional<int> label,
                               const RowVector& lambda_row);

// Variant taking the feature model itself; gradients w.r.t. theta are full
// MlpGrads computed through a one-row backward pass.
struct RuleLossFullEval {
  double value = 0.0;
  MlpGrads dtheta;
  RuleModelGrads dphi;
};
RuleLossFullEval rule_denoise_loss_full(const MlpParams& theta, const RuleModelParams& phi,
                                        const RowVector& features, const RowVector& l,
                                        std::optional<int> label, const RowVector& lambda_row);

enum class RulesMode { only_l, spear_fixed, amal };

struct RulesConfig {
  std::vector<Index> model_dims;  // feature model, full dims
  Activation activation = Activation::relu;
  Index val_count = 0;            // carved from the labeled part
  double hit_init = 0.7;
  double miss_init = 0.3;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones;
  double gamma = 0.1;
  bool reset_momentum_at_milestones = false;
  TrainSchedule schedule;
};

struct RulesRunResult {
  RunResult run;
  RuleModelParams final_phi;
};

RulesRunResult run_rules(const LfDataset& lf, const Dataset& test, RulesMode mode,
                         const RulesConfig& cfg, const MetaConfig& meta, std::uint64_t seed);

}  // namespace amal

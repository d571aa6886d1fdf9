#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amal/nncore.hpp"

namespace amal {

// Per-training-instance mixing weights; column 0 = lambda_p, 1..K = lambda_a_k.
struct MixingWeights {
  Matrix table;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  Index rows() const { return table.rows(); }
  Index components() const { return table.cols(); }

  static MixingWeights constant(Index n, const RowVector& row, double lo = 0.0, double hi = 1.0);
  void clamp_row(Index i);
  void validate() const;
};

struct MetaConfig {
  int period = 5;               // L: lambda-update period in epochs
  double lr_lambda = 0.0;       // eta_lambda
  double init_value = 0.5;      // default fill for every lambda column
  std::vector<double> init_row; // optional explicit (K+1) init, overrides init_value
  bool last_layer_only = false;
  Index val_batch = 64;
  double lambda_lo = 0.0;
  double lambda_hi = 1.0;

  void validate() const;
  RowVector initial_row(Index components) const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double val_grad_sq = 0.0;
  double seconds = 0.0;
};

struct RunResult {
  MlpParams final_params;
  MixingWeights final_lambdas;
  std::vector<EpochRecord> metrics;
  std::string config_json;
  std::uint64_t seed = 0;
};

// Per-instance loss decomposed into its K+1 components (component 0 = primary).
class ComponentLoss {
 public:
  virtual ~ComponentLoss() = default;
  virtual Index components() const = 0;
  virtual LossEval eval_component(Index component, Index pos, Index id,
                                  const RowVector& logits) const = 0;
};

// Lambda-weighted view of a ComponentLoss; components with a zero coefficient
// are skipped entirely. Holds its own copy of the batch's lambda rows.
class WeightedInstanceLoss final : public InstanceLoss {
 public:
  WeightedInstanceLoss(const ComponentLoss& loss, Matrix lambda_rows)
      : loss_(loss), lambda_rows_(std::move(lambda_rows)) {}
  LossEval eval(Index pos, Index id, const RowVector& logits) const override;

 private:
  const ComponentLoss& loss_;
  Matrix lambda_rows_;
};

// One plain-SGD look-ahead step with retained per-(instance, component)
// sensitivity; lambda_rows holds the batch's rows of the Lambda table.
struct LookaheadResult {
  MlpParams theta_hat;
  double eta = 0.0;
  Index batch_size = 0;
  bool last_layer_only = false;
  Index first_trainable_layer = 0;
  // [instance][component] gradients at theta; exactly one of the two is filled.
  std::vector<std::vector<MlpGrads>> full_grads;
  std::vector<std::vector<LayerGrads>> last_layer;
};

LookaheadResult lookahead_params(const MlpParams& theta, const Batch& train_batch,
                                 const Matrix& lambda_rows, double eta,
                                 const ComponentLoss& loss, bool last_layer_only = false,
                                 Index first_trainable_layer = 0);

// Per-instance, per-component d L_CE(theta_hat, val_batch) / d lambda.
// Optionally reports ||grad_theta_hat L_CE(theta_hat, val)||^2 over the scope.
Matrix meta_gradient(const LookaheadResult& lookahead, const Batch& val_batch,
                     double* val_grad_sq = nullptr);

// Lambda' = clamp(Lambda - eta_lambda * meta_grads) on the given rows.
void update_lambdas(MixingWeights& lambdas, const std::vector<Index>& rows,
                    const Matrix& meta_grads, double lr_lambda);

// Central difference of lambda[pos][component] -> lookahead -> val CE, always
// with full gradients.
double finite_diff_meta_gradient(const MlpParams& theta, const Batch& train_batch,
                                 const Matrix& lambda_rows, const Batch& val_batch,
                                 Index pos, Index component, double eps, double eta,
                                 const ComponentLoss& loss);

// Scenario hooks for side parameters trained jointly with theta (e.g. the rule
// model). Called with the pre-step logits of the minibatch.
class TrainHooks {
 public:
  virtual ~TrainHooks() = default;
  virtual void on_model_batch(const Batch& batch, const Matrix& logits,
                              const Matrix& lambda_rows, double lr) {}
  // Unweighted per-instance loss addition for reporting (e.g. LL_s).
  virtual double extra_loss(Index id, const RowVector& logits) const { return 0.0; }
};

struct TrainSchedule {
  int epochs = 60;
  Index batch_size = 128;
};

struct TrainTask {
  const Matrix* train_features = nullptr;
  const std::vector<int>* train_labels = nullptr;
  const Matrix* val_features = nullptr;
  const std::vector<int>* val_labels = nullptr;
  const Matrix* test_features = nullptr;   // optional
  const std::vector<int>* test_labels = nullptr;
  const ComponentLoss* loss = nullptr;
  TrainHooks* hooks = nullptr;
  MlpParams init;
  SgdState sgd;
  TrainSchedule schedule;
};

// Full AMAL training: model updates every epoch, a lambda-update sweep over the
// whole training set on every epoch divisible by meta.period.
RunResult train_amal(const TrainTask& task, const MetaConfig& meta, std::uint64_t seed);

// Fixed-lambda training (no sweeps); lambda_row is broadcast to every instance.
RunResult train_fixed(const TrainTask& task, const RowVector& lambda_row, std::uint64_t seed);

}  // namespace amal

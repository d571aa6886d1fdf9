#include "amal/metaopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "amal/losses.hpp"
#include "amal/rng.hpp"

namespace amal {

MixingWeights MixingWeights::constant(Index n, const RowVector& row, double lo, double hi) {
  MixingWeights w;
  w.clamp_lo = lo;
  w.clamp_hi = hi;
  w.table = row.replicate(n, 1);
  w.validate();
  return w;
}

void MixingWeights::clamp_row(Index i) {
  for (Index c = 0; c < table.cols(); ++c)
    table(i, c) = std::clamp(table(i, c), clamp_lo, clamp_hi);
}

void MixingWeights::validate() const {
  if (clamp_lo >= clamp_hi) throw ConfigError("MixingWeights: clamp_lo must be < clamp_hi");
  if ((table.array() < clamp_lo).any() || (table.array() > clamp_hi).any())
    throw ConfigError("MixingWeights: entries outside clamp bounds");
}

void MetaConfig::validate() const {
  if (period < 1) throw ConfigError("MetaConfig: period must be >= 1");
  if (lr_lambda < 0.0) throw ConfigError("MetaConfig: lr_lambda must be non-negative");
  if (val_batch < 1) throw ConfigError("MetaConfig: val_batch must be >= 1");
  if (lambda_lo >= lambda_hi) throw ConfigError("MetaConfig: lambda_lo must be < lambda_hi");
}

RowVector MetaConfig::initial_row(Index components) const {
  RowVector row(components);
  if (init_row.empty()) {
    row.setConstant(init_value);
  } else {
    if (static_cast<Index>(init_row.size()) != components)
      throw ConfigError("MetaConfig: init_row has " + std::to_string(init_row.size()) +
                        " entries, expected " + std::to_string(components));
    for (Index c = 0; c < components; ++c) row(c) = init_row[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < components; ++c)
    if (row(c) < lambda_lo || row(c) > lambda_hi)
      throw ConfigError("MetaConfig: initial lambda outside clamp bounds");
  return row;
}

LossEval WeightedInstanceLoss::eval(Index pos, Index id, const RowVector& logits) const {
  LossEval out;
  out.value = 0.0;
  out.dlogits = RowVector::Zero(logits.size());
  for (Index c = 0; c < loss_.components(); ++c) {
    double lam = lambda_rows_(pos, c);
    if (lam == 0.0) continue;
    LossEval e = loss_.eval_component(c, pos, id, logits);
    out.value += lam * e.value;
    out.dlogits += lam * e.dlogits;
  }
  return out;
}

LookaheadResult lookahead_params(const MlpParams& theta, const Batch& train_batch,
                                 const Matrix& lambda_rows, double eta, const ComponentLoss& loss,
                                 bool last_layer_only, Index first_trainable_layer) {
  const Index n = train_batch.size();
  const Index n_comp = loss.components();
  if (lambda_rows.rows() != n || lambda_rows.cols() != n_comp)
    throw ShapeError("lookahead_params: lambda rows do not match batch/components");
  if (eta < 0.0) throw ConfigError("lookahead_params: eta must be non-negative");

  ForwardTrace trace = forward_trace(theta, train_batch.features);
  const Matrix& last_in = trace.layer_inputs.back();

  LookaheadResult res;
  res.eta = eta;
  res.batch_size = n;
  res.last_layer_only = last_layer_only;
  res.first_trainable_layer = first_trainable_layer;

  // Component gradients at theta, retained as the lambda sensitivities of
  // theta_hat: d theta_hat / d lambda_{c,i} = -(eta/n) * grad L_{c,i}(theta).
  Matrix weighted_dlogits = Matrix::Zero(n, trace.logits.cols());
  if (last_layer_only) res.last_layer.resize(static_cast<std::size_t>(n));
  else res.full_grads.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index id = train_batch.indices[static_cast<std::size_t>(i)];
    for (Index c = 0; c < n_comp; ++c) {
      LossEval e = loss.eval_component(c, i, id, trace.logits.row(i));
      if (!std::isfinite(e.value) || !e.dlogits.allFinite())
        throw NumericError("lookahead component loss is non-finite", id);
      weighted_dlogits.row(i) += lambda_rows(i, c) * e.dlogits;
      if (last_layer_only) {
        LayerGrads g;
        g.weight = last_in.row(i).transpose() * e.dlogits;
        g.bias = e.dlogits.transpose();
        res.last_layer[static_cast<std::size_t>(i)].push_back(std::move(g));
      } else {
        res.full_grads[static_cast<std::size_t>(i)].push_back(
            backward_single(theta, trace, i, e.dlogits, first_trainable_layer));
      }
    }
  }

  // Plain SGD step (no momentum, no weight decay).
  res.theta_hat = theta;
  const double step = eta / static_cast<double>(n);
  if (last_layer_only) {
    const std::size_t last = theta.weights.size() - 1;
    Matrix gw = last_in.transpose() * weighted_dlogits;
    Vector gb = weighted_dlogits.colwise().sum().transpose();
    res.theta_hat.weights[last] -= step * gw;
    res.theta_hat.biases[last] -= step * gb;
  } else {
    MlpGrads grads = backward(theta, trace, weighted_dlogits, first_trainable_layer);
    for (std::size_t k = 0; k < grads.weights.size(); ++k) {
      res.theta_hat.weights[k] -= step * grads.weights[k];
      res.theta_hat.biases[k] -= step * grads.biases[k];
    }
  }
  return res;
}

namespace {

// Mean validation CE gradient w.r.t. logits.
Matrix val_ce_dlogits(const Matrix& logits, const std::vector<int>& labels) {
  Matrix d(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i)
    d.row(i) = ce_grad(logits.row(i), labels[static_cast<std::size_t>(i)]);
  return d / static_cast<double>(logits.rows());
}

}  // namespace

Matrix meta_gradient(const LookaheadResult& lookahead, const Batch& val_batch,
                     double* val_grad_sq) {
  if (val_batch.size() < 1) throw ConfigError("meta_gradient: empty validation batch");
  const bool ll = lookahead.last_layer_only;
  const Index n = lookahead.batch_size;
  const Index n_comp = ll ? static_cast<Index>(lookahead.last_layer.front().size())
                          : static_cast<Index>(lookahead.full_grads.front().size());
  if ((ll && static_cast<Index>(lookahead.last_layer.size()) != n) ||
      (!ll && static_cast<Index>(lookahead.full_grads.size()) != n))
    throw UsageError("meta_gradient: lookahead sensitivities do not match its batch");

  ForwardTrace vtrace = forward_trace(lookahead.theta_hat, val_batch.features);
  Matrix vdlogits = val_ce_dlogits(vtrace.logits, val_batch.labels);

  Matrix meta(n, n_comp);
  const double scale = -lookahead.eta / static_cast<double>(n);
  if (ll) {
    const Matrix& last_in = vtrace.layer_inputs.back();
    Matrix vw = last_in.transpose() * vdlogits;
    Vector vb = vdlogits.colwise().sum().transpose();
    if (val_grad_sq) *val_grad_sq = vw.squaredNorm() + vb.squaredNorm();
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < n_comp; ++c) {
        const LayerGrads& g =
            lookahead.last_layer[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        meta(i, c) =
            scale * ((vw.array() * g.weight.array()).sum() + vb.dot(g.bias));
      }
    }
  } else {
    MlpGrads vgrads = backward(lookahead.theta_hat, vtrace, vdlogits,
                               lookahead.first_trainable_layer);
    if (val_grad_sq) *val_grad_sq = vgrads.squared_norm();
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < n_comp; ++c)
        meta(i, c) = scale * vgrads.dot(
                                 lookahead.full_grads[static_cast<std::size_t>(i)]
                                                     [static_cast<std::size_t>(c)]);
  }
  return meta;
}

void update_lambdas(MixingWeights& lambdas, const std::vector<Index>& rows,
                    const Matrix& meta_grads, double lr_lambda) {
  if (static_cast<Index>(rows.size()) != meta_grads.rows() ||
      lambdas.table.cols() != meta_grads.cols())
    throw ShapeError("update_lambdas: meta gradient shape mismatch");
  if (!meta_grads.allFinite()) throw ConfigError("update_lambdas: non-finite meta gradients");
  for (Index i = 0; i < meta_grads.rows(); ++i) {
    Index r = rows[static_cast<std::size_t>(i)];
    lambdas.table.row(r) -= lr_lambda * meta_grads.row(i);
    lambdas.clamp_row(r);
  }
}

double finite_diff_meta_gradient(const MlpParams& theta, const Batch& train_batch,
                                 const Matrix& lambda_rows, const Batch& val_batch,
                                 Index pos, Index component, double eps, double eta,
                                 const ComponentLoss& loss) {
  if (eps <= 0.0) throw ConfigError("finite_diff_meta_gradient: eps must be positive");
  auto val_at = [&](double lam) {
    Matrix rows = lambda_rows;
    rows(pos, component) = lam;
    LookaheadResult la = lookahead_params(theta, train_batch, rows, eta, loss, false);
    return mean_ce(la.theta_hat, val_batch.features, val_batch.labels);
  };
  double base = lambda_rows(pos, component);
  return (val_at(base + eps) - val_at(base - eps)) / (2.0 * eps);
}

namespace {

Batch gather_batch(const Matrix& features, const std::vector<int>& labels,
                   const std::vector<Index>& order, std::size_t begin, std::size_t end) {
  Batch b;
  b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
  b.features.resize(static_cast<Index>(end - begin), features.cols());
  b.labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    b.features.row(static_cast<Index>(i - begin)) = features.row(order[i]);
    b.labels[i - begin] = labels[static_cast<std::size_t>(order[i])];
  }
  return b;
}

Matrix gather_lambda_rows(const MixingWeights& lambdas, const std::vector<Index>& ids) {
  Matrix rows(static_cast<Index>(ids.size()), lambdas.table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    rows.row(static_cast<Index>(i)) = lambdas.table.row(ids[i]);
  return rows;
}

RunResult run_training(const TrainTask& task, const MetaConfig& meta, bool meta_enabled,
                       const RowVector& init_row, std::uint64_t seed) {
  if (!task.train_features || !task.train_labels || !task.val_features || !task.val_labels ||
      !task.loss)
    throw ConfigError("train: missing task inputs");
  if (task.val_features->rows() == 0) throw ConfigError("train: empty validation set");
  if (task.schedule.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (task.schedule.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  meta.validate();

  const Index n_train = task.train_features->rows();
  const Index n_comp = task.loss->components();
  MixingWeights lambdas =
      MixingWeights::constant(n_train, init_row, meta.lambda_lo, meta.lambda_hi);

  MlpParams params = task.init;
  params.validate();
  SgdState sgd = task.sgd;

  // Separate streams: sweeps must not perturb the model-update path.
  Rng shuffle_rng = make_rng(seed, 1);
  Rng sweep_rng = make_rng(seed, 2);

  RunResult result;
  result.seed = seed;
  double last_val_grad_sq = 0.0;

  for (int epoch = 0; epoch < task.schedule.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    maybe_reset_velocity(sgd, epoch);

    if (meta_enabled && epoch % meta.period == 0) {
      // Lambda sweep at a frozen theta snapshot: every training instance's row
      // is updated exactly once, each sweep minibatch paired with a fresh
      // validation minibatch.
      const MlpParams snapshot = params;
      const double eta = lr_at_epoch(sgd, epoch);
      std::vector<Index> order = shuffled_indices(n_train, sweep_rng);
      double grad_sq_sum = 0.0;
      std::size_t n_pairs = 0;
      for (std::size_t begin = 0; begin < order.size();
           begin += static_cast<std::size_t>(task.schedule.batch_size)) {
        std::size_t end = std::min(order.size(),
                                   begin + static_cast<std::size_t>(task.schedule.batch_size));
        Batch batch = gather_batch(*task.train_features, *task.train_labels, order, begin, end);
        std::vector<Index> vidx = sample_without_replacement(
            task.val_features->rows(), std::min(meta.val_batch, task.val_features->rows()),
            sweep_rng);
        Batch vbatch = gather_batch(*task.val_features, *task.val_labels, vidx, 0, vidx.size());
        Matrix rows = gather_lambda_rows(lambdas, batch.indices);
        LookaheadResult la =
            lookahead_params(snapshot, batch, rows, eta, *task.loss, meta.last_layer_only);
        double grad_sq = 0.0;
        Matrix mg = meta_gradient(la, vbatch, &grad_sq);
        update_lambdas(lambdas, batch.indices, mg, meta.lr_lambda);
        grad_sq_sum += grad_sq;
        ++n_pairs;
      }
      last_val_grad_sq = grad_sq_sum / static_cast<double>(n_pairs);
    }

    // Model updates (full optimizer).
    double loss_sum = 0.0;
    std::vector<Index> order = shuffled_indices(n_train, shuffle_rng);
    const double lr = lr_at_epoch(sgd, epoch);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(task.schedule.batch_size)) {
      std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(task.schedule.batch_size));
      Batch batch = gather_batch(*task.train_features, *task.train_labels, order, begin, end);
      Matrix rows = gather_lambda_rows(lambdas, batch.indices);
      ForwardTrace trace = forward_trace(params, batch.features);
      WeightedInstanceLoss weighted(*task.loss, rows);
      Matrix dlogits(batch.size(), trace.logits.cols());
      for (Index i = 0; i < batch.size(); ++i) {
        const Index id = batch.indices[static_cast<std::size_t>(i)];
        LossEval e = weighted.eval(i, id, trace.logits.row(i));
        if (!std::isfinite(e.value) || !e.dlogits.allFinite())
          throw NumericError("training loss is non-finite", id);
        dlogits.row(i) = e.dlogits;
        loss_sum += e.value;
        if (task.hooks) loss_sum += task.hooks->extra_loss(id, trace.logits.row(i));
      }
      MlpGrads grads = backward(params, trace, dlogits);
      const double inv_n = 1.0 / static_cast<double>(batch.size());
      for (auto& w : grads.weights) w *= inv_n;
      for (auto& b : grads.biases) b *= inv_n;
      if (task.hooks) task.hooks->on_model_batch(batch, trace.logits, rows, lr);
      sgd_step(params, grads, sgd, epoch);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.val_loss = mean_ce(params, *task.val_features, *task.val_labels);
    rec.val_acc = accuracy(params, *task.val_features, *task.val_labels);
    rec.test_acc = (task.test_features && task.test_labels)
                       ? accuracy(params, *task.test_features, *task.test_labels)
                       : 0.0;
    rec.val_grad_sq = last_val_grad_sq;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(rec);
  }

  result.final_params = std::move(params);
  result.final_lambdas = std::move(lambdas);
  return result;
}

}  // namespace

RunResult train_amal(const TrainTask& task, const MetaConfig& meta, std::uint64_t seed) {
  RowVector init = meta.initial_row(task.loss->components());
  return run_training(task, meta, true, init, seed);
}

RunResult train_fixed(const TrainTask& task, const RowVector& lambda_row, std::uint64_t seed) {
  MetaConfig meta;  // clamp bounds must admit the fixed row
  double lo = std::min(0.0, lambda_row.minCoeff());
  double hi = std::max(1.0, lambda_row.maxCoeff());
  meta.lambda_lo = lo;
  meta.lambda_hi = hi;
  return run_training(task, meta, false, lambda_row, seed);
}

}  // namespace amal

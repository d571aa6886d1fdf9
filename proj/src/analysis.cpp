#include "amal/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amal/losses.hpp"
#include "amal/rng.hpp"

namespace amal {

namespace {

HistogramPair histogram_of(const Vector& stat, const std::vector<std::uint8_t>& noise_mask,
                           int bins) {
  if (bins < 1) throw ConfigError("histogram: bins must be positive");
  if (static_cast<Index>(noise_mask.size()) != stat.size())
    throw ConfigError("histogram: noise mask length mismatch");
  double lo = stat.minCoeff();
  double hi = stat.maxCoeff();
  if (hi <= lo) hi = lo + 1.0;  // degenerate range: everything lands in bin 0
  HistogramPair h;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges(b) = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  h.clean.assign(static_cast<std::size_t>(bins), 0);
  h.noisy.assign(static_cast<std::size_t>(bins), 0);
  for (Index i = 0; i < stat.size(); ++i) {
    int b = static_cast<int>(std::floor((stat(i) - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    if (noise_mask[static_cast<std::size_t>(i)])
      ++h.noisy[static_cast<std::size_t>(b)];
    else
      ++h.clean[static_cast<std::size_t>(b)];
  }
  return h;
}

void require_single_aux(const MixingWeights& lambdas) {
  if (lambdas.components() != 2)
    throw ConfigError("expected a single-auxiliary lambda table (K = 1)");
}

}  // namespace

HistogramPair lambda_diff_histogram(const MixingWeights& lambdas,
                                    const std::vector<std::uint8_t>& noise_mask, int bins) {
  require_single_aux(lambdas);
  Vector stat = lambdas.table.col(1) - lambdas.table.col(0);
  return histogram_of(stat, noise_mask, bins);
}

HistogramPair lambda_sum_histogram(const MixingWeights& lambdas,
                                   const std::vector<std::uint8_t>& noise_mask, int bins) {
  require_single_aux(lambdas);
  Vector stat = lambdas.table.col(1) + lambdas.table.col(0);
  return histogram_of(stat, noise_mask, bins);
}

BucketStats confidence_buckets(const MixingWeights& lambdas, const Vector& teacher_probs_at_truth,
                               const std::vector<std::uint8_t>& noise_mask, const Vector& edges) {
  require_single_aux(lambdas);
  if (teacher_probs_at_truth.size() != lambdas.rows() ||
      static_cast<Index>(noise_mask.size()) != lambdas.rows())
    throw ConfigError("confidence_buckets: input lengths disagree");
  if (edges.size() < 2) throw ConfigError("confidence_buckets: need at least two edges");
  for (Index b = 1; b < edges.size(); ++b)
    if (edges(b) <= edges(b - 1)) throw ConfigError("confidence_buckets: edges must be ascending");

  const Index nb = edges.size() - 1;
  std::vector<std::vector<double>> vals[2];
  vals[0].assign(static_cast<std::size_t>(nb), {});
  vals[1].assign(static_cast<std::size_t>(nb), {});
  for (Index i = 0; i < lambdas.rows(); ++i) {
    double p = teacher_probs_at_truth(i);
    if (p < edges(0) || p > edges(nb)) continue;
    Index b = nb - 1;
    for (Index k = 0; k < nb; ++k)
      if (p < edges(k + 1)) {
        b = k;
        break;
      }
    int g = noise_mask[static_cast<std::size_t>(i)] ? 1 : 0;
    vals[g][static_cast<std::size_t>(b)].push_back(lambdas.table(i, 1));
  }

  BucketStats out;
  out.edges = edges;
  for (int g = 0; g < 2; ++g) {
    BucketGroup& grp = (g == 0) ? out.clean : out.noisy;
    grp.count.assign(static_cast<std::size_t>(nb), 0);
    grp.mean = Vector::Constant(nb, std::numeric_limits<double>::quiet_NaN());
    grp.sem = Vector::Constant(nb, std::numeric_limits<double>::quiet_NaN());
    for (Index b = 0; b < nb; ++b) {
      const auto& v = vals[g][static_cast<std::size_t>(b)];
      grp.count[static_cast<std::size_t>(b)] = static_cast<Index>(v.size());
      if (v.empty()) continue;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      grp.mean(b) = mean;
      if (v.size() < 2) {
        grp.sem(b) = 0.0;
        continue;
      }
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      grp.sem(b) = std::sqrt(ss / static_cast<double>(v.size() - 1)) /
                   std::sqrt(static_cast<double>(v.size()));
    }
  }
  return out;
}

CoresetProbs coreset_probs(const MixingWeights& lambdas, CoresetStrategy strategy) {
  require_single_aux(lambdas);
  const Index n = lambdas.rows();
  Vector score(n);
  for (Index i = 0; i < n; ++i) {
    double lp = lambdas.table(i, 0);
    double la = lambdas.table(i, 1);
    switch (strategy) {
      case CoresetStrategy::sq_norm: score(i) = lp * lp + la * la; break;
      case CoresetStrategy::abs_diff: score(i) = std::abs(lp - la); break;
      case CoresetStrategy::ratio: score(i) = la / (lp + 1e-8); break;
    }
  }
  CoresetProbs out;
  double total = score.sum();
  if (total <= 0.0) {
    out.uniform_fallback = true;
    out.probs = Vector::Constant(n, 1.0 / static_cast<double>(n));
  } else {
    out.probs = score / total;
  }
  return out;
}

std::vector<Index> sample_coreset(const Vector& probs, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("sample_coreset: fraction must be in (0, 1]");
  const Index n = probs.size();
  const Index k = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  Rng rng = make_rng(seed);
  std::vector<double> weight(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (probs(i) < 0.0) throw ConfigError("sample_coreset: negative probability");
    weight[static_cast<std::size_t>(i)] = probs(i);
    total += probs(i);
  }
  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(k));
  for (Index draw = 0; draw < k; ++draw) {
    if (total <= 0.0) {
      // Exhausted positive mass: fill with the remaining smallest indices.
      for (Index i = 0; i < n && static_cast<Index>(chosen.size()) < k; ++i)
        if (weight[static_cast<std::size_t>(i)] >= 0.0 &&
            std::find(chosen.begin(), chosen.end(), i) == chosen.end())
          chosen.push_back(i);
      break;
    }
    double target = uniform_double(rng) * total;
    double acc = 0.0;
    Index pick = -1;
    for (Index i = 0; i < n; ++i) {
      double w = weight[static_cast<std::size_t>(i)];
      if (w <= 0.0) continue;
      acc += w;
      if (target < acc) {
        pick = i;
        break;
      }
    }
    if (pick < 0) {  // numeric tail; take the last positive-weight index
      for (Index i = n - 1; i >= 0; --i)
        if (weight[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
    }
    if (pick < 0) break;  // positive mass fully drained by rounding
    chosen.push_back(pick);
    total -= weight[static_cast<std::size_t>(pick)];
    weight[static_cast<std::size_t>(pick)] = 0.0;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

class CeLoss final : public ComponentLoss {
 public:
  explicit CeLoss(const std::vector<int>& labels) : labels_(labels) {}
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

RunResult retrain_on_coreset(const std::vector<Index>& indices, const Dataset& train,
                             const Dataset& val, const Dataset& test,
                             const std::vector<Index>& model_dims, Activation activation,
                             const SgdState& sgd, const TrainSchedule& schedule,
                             std::uint64_t seed) {
  if (indices.empty()) throw ConfigError("retrain_on_coreset: empty index set");
  Matrix features(static_cast<Index>(indices.size()), train.features.cols());
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= train.size())
      throw ConfigError("retrain_on_coreset: index out of range");
    features.row(static_cast<Index>(i)) = train.features.row(indices[i]);
    labels[i] = train.labels[static_cast<std::size_t>(indices[i])];
  }
  CeLoss loss(labels);
  TrainTask task;
  task.train_features = &features;
  task.train_labels = &labels;
  task.val_features = &val.features;
  task.val_labels = &val.labels;
  task.test_features = &test.features;
  task.test_labels = &test.labels;
  task.loss = &loss;
  task.init = init_mlp(model_dims, activation, mix_seed(seed, 0));
  task.sgd = SgdState::for_params(task.init, sgd.lr0, sgd.momentum, sgd.weight_decay,
                                  sgd.milestones, sgd.gamma);
  task.schedule = schedule;
  RowVector row(1);
  row << 1.0;
  return train_fixed(task, row, seed);
}

}  // namespace amal

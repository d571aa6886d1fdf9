#pragma once

#include <cstdint>
#include <vector>

#include "amal/data.hpp"
#include "amal/metaopt.hpp"

namespace amal {

// Clean/noisy histogram pair over a per-instance statistic.
struct HistogramPair {
  Vector edges;  // bins + 1, ascending; last bin closed
  std::vector<Index> clean;
  std::vector<Index> noisy;
};

// Statistic lambda_a - lambda_p; requires a single-auxiliary table.
HistogramPair lambda_diff_histogram(const MixingWeights& lambdas,
                                    const std::vector<std::uint8_t>& noise_mask, int bins);
// Statistic lambda_a + lambda_p.
HistogramPair lambda_sum_histogram(const MixingWeights& lambdas,
                                   const std::vector<std::uint8_t>& noise_mask, int bins);

struct BucketGroup {
  std::vector<Index> count;
  Vector mean;  // NaN for empty buckets
  Vector sem;
};

struct BucketStats {
  Vector edges;
  BucketGroup clean;
  BucketGroup noisy;
};

// Mean lambda_a (with SEM) per teacher-confidence bucket, split clean/noisy.
BucketStats confidence_buckets(const MixingWeights& lambdas, const Vector& teacher_probs_at_truth,
                               const std::vector<std::uint8_t>& noise_mask, const Vector& edges);

enum class CoresetStrategy { sq_norm, abs_diff, ratio };

struct CoresetProbs {
  Vector probs;
  bool uniform_fallback = false;
};

// Selection probabilities proportional to the strategy score; the ratio
// strategy regularizes the denominator with 1e-8.
CoresetProbs coreset_probs(const MixingWeights& lambdas, CoresetStrategy strategy);

// Weighted sampling without replacement, exactly round(fraction * N) indices,
// returned ascending.
std::vector<Index> sample_coreset(const Vector& probs, double fraction, std::uint64_t seed);

// Plain CE training restricted to the index set; test accuracy on the full split.
RunResult retrain_on_coreset(const std::vector<Index>& indices, const Dataset& train,
                             const Dataset& val, const Dataset& test,
                             const std::vector<Index>& model_dims, Activation activation,
                             const SgdState& sgd, const TrainSchedule& schedule,
                             std::uint64_t seed);

}  // namespace amal

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amal/types.hpp"

namespace amal {

struct Dataset {
  Matrix features;                      // N x d
  std::vector<int> labels;              // length N, in [0, class_count)
  std::vector<std::uint8_t> noise_mask; // 1 = label was flipped
  int class_count = 0;
  std::string split_tag = "all";

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  void validate() const;
};

// Labeling-function dataset: rows [0, labeled_count) are the labeled part D',
// the rest the unlabeled part U'. fires is 0/1, one column per rule.
struct LfDataset {
  Dataset base;
  Matrix fires;                 // N x m, entries 0 or 1
  std::vector<int> rule_classes;  // target class c_j per rule
  Index labeled_count = 0;

  Index rule_count() const { return fires.cols(); }
  void validate() const;
};

// Gaussian class-cluster generator: per class a centroid scaled by class_sep
// in the informative subspace, points = centroid + unit noise, remaining
// features pure noise. Classes balanced within one instance.
Dataset gen_synthetic(std::uint64_t seed, Index n_total, Index d, int class_count,
                      double class_sep, Index informative_count);

// Flips exactly round(fraction*N) distinct labels, each to a different class.
Dataset inject_label_noise(const Dataset& ds, double fraction, std::uint64_t seed);

struct SplitSizes {
  Index train = 0;
  Index val = 0;
  Index test = 0;
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
  bool stratified = true;
};

SplitResult split(const Dataset& ds, const SplitSizes& sizes, std::uint64_t seed);

// Synthetic labeling functions: rule j targets class j % C and fires so that
// measured precision/coverage land near the targets.
LfDataset gen_synthetic_lfs(const Dataset& ds, Index m, double target_precision,
                            double target_coverage, Index labeled_count, std::uint64_t seed);

// Measured micro precision (pooled over rules) and coverage of an LfDataset.
double lf_micro_precision(const LfDataset& lf);
double lf_coverage(const LfDataset& lf);

// Row subset in the given order.
Dataset subset(const Dataset& ds, const std::vector<Index>& rows, const std::string& tag);

// CSV header f0,...,f{d-1},label,noisy; features at 17 significant digits.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, int class_count = 0);

// LF CSV: first row rule_class:<c_0>,...; then 0/1 firing rows.
void save_lfs(const LfDataset& lf, const std::string& path);
// Returns fires + rule classes; caller supplies base and labeled_count.
void load_lfs(const std::string& path, Matrix& fires, std::vector<int>& rule_classes);

}  // namespace amal

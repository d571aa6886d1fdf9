#include "amal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "amal/rng.hpp"

namespace amal {

void Dataset::validate() const {
  const Index n = features.rows();
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(noise_mask.size()) != n)
    throw ShapeError("Dataset: labels/noise_mask length must equal row count");
  if (class_count < 1) throw ShapeError("Dataset: class_count must be positive");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw ShapeError("Dataset: label out of range");
  if (!features.allFinite()) throw ShapeError("Dataset: non-finite features");
}

void LfDataset::validate() const {
  base.validate();
  if (fires.rows() != base.size()) throw ShapeError("LfDataset: firing rows must match dataset");
  if (static_cast<Index>(rule_classes.size()) != fires.cols())
    throw ShapeError("LfDataset: rule class count must match rule columns");
  if (labeled_count < 0 || labeled_count > base.size())
    throw ShapeError("LfDataset: labeled_count out of range");
  for (int c : rule_classes)
    if (c < 0 || c >= base.class_count) throw ShapeError("LfDataset: rule class out of range");
  for (Index i = 0; i < fires.rows(); ++i)
    for (Index j = 0; j < fires.cols(); ++j)
      if (fires(i, j) != 0.0 && fires(i, j) != 1.0)
        throw ShapeError("LfDataset: firing entries must be 0 or 1");
}

Dataset gen_synthetic(std::uint64_t seed, Index n_total, Index d, int class_count,
                      double class_sep, Index informative_count) {
  if (class_count < 2) throw ConfigError("gen_synthetic: need at least two classes");
  if (informative_count < 1 || informative_count > d)
    throw ConfigError("gen_synthetic: informative_count must be in [1, d]");
  if (n_total < class_count) throw ConfigError("gen_synthetic: n_total below class count");

  Rng rng = make_rng(seed);
  Matrix centroids(class_count, informative_count);
  for (Index c = 0; c < class_count; ++c)
    for (Index k = 0; k < informative_count; ++k) centroids(c, k) = class_sep * normal(rng);

  // Balanced labels (counts differ by at most one), shuffled.
  std::vector<int> labels(static_cast<std::size_t>(n_total));
  for (Index i = 0; i < n_total; ++i)
    labels[static_cast<std::size_t>(i)] = static_cast<int>(i % class_count);
  shuffle(labels, rng);

  Dataset ds;
  ds.class_count = class_count;
  ds.labels = std::move(labels);
  ds.noise_mask.assign(static_cast<std::size_t>(n_total), 0);
  ds.features.resize(n_total, d);
  for (Index i = 0; i < n_total; ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    for (Index k = 0; k < informative_count; ++k)
      ds.features(i, k) = centroids(y, k) + normal(rng);
    for (Index k = informative_count; k < d; ++k) ds.features(i, k) = normal(rng);
  }
  return ds;
}

Dataset inject_label_noise(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ConfigError("inject_label_noise: fraction must be in [0, 1]");
  ds.validate();
  Dataset out = ds;
  const Index n_flip = static_cast<Index>(std::llround(fraction * static_cast<double>(ds.size())));
  Rng rng = make_rng(seed);
  std::vector<Index> chosen = sample_without_replacement(ds.size(), n_flip, rng);
  for (Index i : chosen) {
    int old = out.labels[static_cast<std::size_t>(i)];
    int next = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(ds.class_count - 1)));
    if (next >= old) ++next;
    out.labels[static_cast<std::size_t>(i)] = next;
    out.noise_mask[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<Index>& rows, const std::string& tag) {
  Dataset out;
  out.class_count = ds.class_count;
  out.split_tag = tag;
  out.features.resize(static_cast<Index>(rows.size()), ds.features.cols());
  out.labels.resize(rows.size());
  out.noise_mask.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = ds.features.row(rows[i]);
    out.labels[i] = ds.labels[static_cast<std::size_t>(rows[i])];
    out.noise_mask[i] = ds.noise_mask[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

}  // namespace

Dataset subset(const Dataset& ds, const std::vector<Index>& rows, const std::string& tag) {
  for (Index r : rows)
    if (r < 0 || r >= ds.size()) throw ConfigError("subset: row index out of range");
  return take_rows(ds, rows, tag);
}

SplitResult split(const Dataset& ds, const SplitSizes& sizes, std::uint64_t seed) {
  ds.validate();
  const Index want = sizes.train + sizes.val + sizes.test;
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0 || want > ds.size())
    throw ConfigError("split: requested sizes exceed dataset");

  Rng rng = make_rng(seed);
  std::vector<std::vector<Index>> pools(static_cast<std::size_t>(ds.class_count));
  for (Index i = 0; i < ds.size(); ++i)
    pools[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  for (auto& p : pools) shuffle(p, rng);

  int nonzero_splits = (sizes.train > 0) + (sizes.val > 0) + (sizes.test > 0);
  bool stratified = true;
  for (const auto& p : pools)
    if (static_cast<int>(p.size()) < nonzero_splits) stratified = false;

  std::vector<std::vector<Index>> parts(3);
  if (!stratified) {
    std::vector<Index> order = shuffled_indices(ds.size(), rng);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s) {
      Index sz = (s == 0) ? sizes.train : (s == 1 ? sizes.val : sizes.test);
      parts[static_cast<std::size_t>(s)].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                                                order.begin() +
                                                    static_cast<std::ptrdiff_t>(at + sz));
      at += static_cast<std::size_t>(sz);
    }
  } else {
    // Largest-remainder quota per class, applied split by split on the shrinking pools.
    std::vector<std::size_t> cursor(pools.size(), 0);
    Index remaining = ds.size();
    for (int s = 0; s < 3; ++s) {
      Index sz = (s == 0) ? sizes.train : (s == 1 ? sizes.val : sizes.test);
      if (sz == 0) continue;
      std::vector<Index> quota(pools.size(), 0);
      std::vector<std::pair<double, std::size_t>> frac;
      Index assigned = 0;
      for (std::size_t c = 0; c < pools.size(); ++c) {
        double exact = static_cast<double>(pools[c].size() - cursor[c]) *
                       static_cast<double>(sz) / static_cast<double>(remaining);
        quota[c] = static_cast<Index>(std::floor(exact));
        assigned += quota[c];
        frac.emplace_back(exact - std::floor(exact), c);
      }
      std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t r = 0; assigned < sz; ++r) {
        std::size_t c = frac[r % frac.size()].second;
        if (cursor[c] + static_cast<std::size_t>(quota[c]) < pools[c].size()) {
          ++quota[c];
          ++assigned;
        }
      }
      for (std::size_t c = 0; c < pools.size(); ++c) {
        for (Index k = 0; k < quota[c]; ++k)
          parts[static_cast<std::size_t>(s)].push_back(pools[c][cursor[c]++]);
      }
      remaining -= sz;
    }
  }

  SplitResult res;
  res.stratified = stratified;
  res.train = take_rows(ds, parts[0], "train");
  res.val = take_rows(ds, parts[1], "val");
  res.test = take_rows(ds, parts[2], "test");
  return res;
}

namespace {

// Coverage implied by per-class firing rates, computed from class counts.
double analytic_coverage(const std::vector<Index>& class_counts, const std::vector<int>& rule_classes,
                         double p_hit, const std::vector<double>& p_miss, Index n_total) {
  double uncovered = 0.0;
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    double keep = 1.0;
    for (std::size_t j = 0; j < rule_classes.size(); ++j) {
      double rate = (rule_classes[j] == static_cast<int>(c)) ? p_hit : p_miss[j];
      keep *= 1.0 - rate;
    }
    uncovered += static_cast<double>(class_counts[c]) * keep;
  }
  return 1.0 - uncovered / static_cast<double>(n_total);
}

}  // namespace

LfDataset gen_synthetic_lfs(const Dataset& ds, Index m, double target_precision,
                            double target_coverage, Index labeled_count, std::uint64_t seed) {
  ds.validate();
  if (m < 1) throw ConfigError("gen_synthetic_lfs: need at least one rule");
  if (target_precision <= 0.0 || target_precision > 1.0 || target_coverage <= 0.0 ||
      target_coverage > 1.0)
    throw ConfigError("gen_synthetic_lfs: precision and coverage must be in (0, 1]");
  if (labeled_count < 0 || labeled_count > ds.size())
    throw ConfigError("gen_synthetic_lfs: labeled_count out of range");

  std::vector<int> rule_classes(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j)
    rule_classes[static_cast<std::size_t>(j)] = static_cast<int>(j % ds.class_count);

  std::vector<Index> class_counts(static_cast<std::size_t>(ds.class_count), 0);
  for (int y : ds.labels) ++class_counts[static_cast<std::size_t>(y)];

  // p_miss is pinned to p_hit by the precision target; solve p_hit for coverage.
  auto miss_rates = [&](double p_hit) {
    std::vector<double> pm(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
      double n_c = static_cast<double>(class_counts[static_cast<std::size_t>(
          rule_classes[static_cast<std::size_t>(j)])]);
      double n_other = static_cast<double>(ds.size()) - n_c;
      pm[static_cast<std::size_t>(j)] =
          (n_other == 0.0) ? 0.0
                           : p_hit * n_c * (1.0 - target_precision) /
                                 (target_precision * n_other);
    }
    return pm;
  };
  auto coverage_at = [&](double p_hit) {
    return analytic_coverage(class_counts, rule_classes, p_hit, miss_rates(p_hit), ds.size());
  };

  double hi = 1.0;
  {
    std::vector<double> pm = miss_rates(1.0);
    for (double v : pm)
      if (v > 1.0) hi = std::min(hi, target_precision /
                                         (1.0 - target_precision) *
                                         (static_cast<double>(ds.size()) /
                                              static_cast<double>(
                                                  *std::max_element(class_counts.begin(),
                                                                    class_counts.end())) -
                                          1.0));
  }
  if (coverage_at(hi) < target_coverage - 1e-9)
    throw ConfigError("gen_synthetic_lfs: precision/coverage targets are infeasible");
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (coverage_at(mid) < target_coverage) lo = mid;
    else hi = mid;
  }
  const double p_hit = hi;
  const std::vector<double> p_miss = miss_rates(p_hit);

  Rng rng = make_rng(seed);
  LfDataset lf;
  lf.base = ds;
  lf.rule_classes = rule_classes;
  lf.labeled_count = labeled_count;
  lf.fires = Matrix::Zero(ds.size(), m);
  for (Index i = 0; i < ds.size(); ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m; ++j) {
      double rate = (rule_classes[static_cast<std::size_t>(j)] == y)
                        ? p_hit
                        : p_miss[static_cast<std::size_t>(j)];
      if (uniform_double(rng) < rate) lf.fires(i, j) = 1.0;
    }
  }
  return lf;
}

double lf_micro_precision(const LfDataset& lf) {
  double fired = 0.0, correct = 0.0;
  for (Index i = 0; i < lf.fires.rows(); ++i)
    for (Index j = 0; j < lf.fires.cols(); ++j)
      if (lf.fires(i, j) != 0.0) {
        fired += 1.0;
        if (lf.base.labels[static_cast<std::size_t>(i)] ==
            lf.rule_classes[static_cast<std::size_t>(j)])
          correct += 1.0;
      }
  return fired == 0.0 ? 0.0 : correct / fired;
}

double lf_coverage(const LfDataset& lf) {
  Index covered = 0;
  for (Index i = 0; i < lf.fires.rows(); ++i)
    if (lf.fires.row(i).sum() > 0.0) ++covered;
  return static_cast<double>(covered) / static_cast<double>(lf.fires.rows());
}

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  if (ds.size() == 0) throw ConfigError("save_dataset: refusing to save an empty dataset");
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (Index k = 0; k < ds.dim(); ++k) os << 'f' << k << ',';
  os << "label,noisy\n";
  char buf[40];
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index k = 0; k < ds.dim(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, k));
      os << buf << ',';
    }
    os << ds.labels[static_cast<std::size_t>(i)] << ','
       << static_cast<int>(ds.noise_mask[static_cast<std::size_t>(i)]) << '\n';
  }
  if (!os) throw IoError("failed writing dataset: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line_no, const std::string& path) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": not a number: '" + s + "'");
  }
}

int parse_int(const std::string& s, std::size_t line_no, const std::string& path) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": not an integer: '" + s + "'");
  }
}

}  // namespace

Dataset load_dataset(const std::string& path, int class_count) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ":1: missing header");
  std::vector<std::string> head = split_csv_line(line);
  if (head.size() < 3 || head[head.size() - 2] != "label" || head.back() != "noisy")
    throw ParseError(path + ":1: expected header f0,...,label,noisy");
  const std::size_t d = head.size() - 2;

  std::vector<double> flat;
  std::vector<int> labels;
  std::vector<std::uint8_t> noisy;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != d + 2)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(d + 2) + " fields, got " + std::to_string(f.size()));
    for (std::size_t k = 0; k < d; ++k) flat.push_back(parse_double(f[k], line_no, path));
    labels.push_back(parse_int(f[d], line_no, path));
    int nz = parse_int(f[d + 1], line_no, path);
    if (nz != 0 && nz != 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": noisy must be 0 or 1");
    noisy.push_back(static_cast<std::uint8_t>(nz));
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");

  Dataset ds;
  ds.features.resize(static_cast<Index>(labels.size()), static_cast<Index>(d));
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t k = 0; k < d; ++k)
      ds.features(static_cast<Index>(i), static_cast<Index>(k)) = flat[i * d + k];
  ds.labels = std::move(labels);
  ds.noise_mask = std::move(noisy);
  ds.class_count =
      class_count > 0 ? class_count : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

void save_lfs(const LfDataset& lf, const std::string& path) {
  lf.validate();
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (Index j = 0; j < lf.rule_count(); ++j) {
    os << "rule_class:" << lf.rule_classes[static_cast<std::size_t>(j)];
    os << (j + 1 == lf.rule_count() ? '\n' : ',');
  }
  for (Index i = 0; i < lf.fires.rows(); ++i) {
    for (Index j = 0; j < lf.fires.cols(); ++j) {
      os << (lf.fires(i, j) != 0.0 ? '1' : '0');
      os << (j + 1 == lf.fires.cols() ? '\n' : ',');
    }
  }
  if (!os) throw IoError("failed writing labeling functions: " + path);
}

void load_lfs(const std::string& path, Matrix& fires, std::vector<int>& rule_classes) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ":1: missing rule header");
  rule_classes.clear();
  for (const std::string& cell : split_csv_line(line)) {
    if (cell.rfind("rule_class:", 0) != 0)
      throw ParseError(path + ":1: expected rule_class:<c> cells");
    rule_classes.push_back(parse_int(cell.substr(11), 1, path));
  }
  const std::size_t m = rule_classes.size();
  std::vector<std::uint8_t> flat;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != m)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(m) +
                       " fields");
    for (const std::string& cell : f) {
      int v = parse_int(cell, line_no, path);
      if (v != 0 && v != 1)
        throw ParseError(path + ":" + std::to_string(line_no) + ": firing must be 0 or 1");
      flat.push_back(static_cast<std::uint8_t>(v));
    }
  }
  const std::size_t n = flat.size() / m;
  fires.resize(static_cast<Index>(n), static_cast<Index>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      fires(static_cast<Index>(i), static_cast<Index>(j)) = flat[i * m + j];
}

}  // namespace amal

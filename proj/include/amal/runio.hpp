#pragma once

#include <string>
#include <vector>

#include "amal/metaopt.hpp"

namespace amal {

// Lambda table CSV: header instance_id,lambda_p,lambda_a_1,...,lambda_a_K.
void save_lambdas(const MixingWeights& lambdas, const std::string& path);
MixingWeights load_lambdas(const std::string& path);

// Metrics JSON-lines, one record per epoch with fixed keys.
void save_metrics(const std::vector<EpochRecord>& metrics, const std::string& path);
std::vector<EpochRecord> load_metrics(const std::string& path);

// A run directory holds config.json, metrics.jsonl, lambdas.csv, final.ckpt.
void write_run_dir(const std::string& dir, const RunResult& result);
RunResult read_run_dir(const std::string& dir);

// Minimal standalone SVG charts on a fixed 800x500 canvas.
struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

void svg_line_chart(const std::vector<SvgSeries>& series, const std::string& x_label,
                    const std::string& y_label, const std::string& path);

struct SvgBarGroup {
  std::string name;
  std::vector<double> heights;  // one bar per bin
};

void svg_histogram(const Vector& edges, const std::vector<SvgBarGroup>& groups,
                   const std::string& x_label, const std::string& path);

}  // namespace amal

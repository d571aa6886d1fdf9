#pragma once

#include <string>
#include <vector>

#include "amal/types.hpp"

namespace amal::driver {

// Batch entry points behind the CLI. All throw amal::Error subclasses; the
// CLI maps those to a machine-readable error JSON and a non-zero exit code.

void gen_data(const std::string& config_path, const std::string& out_dir);

void train_teacher_cmd(const std::string& config_path, const std::string& data_dir,
                       const std::string& out_dir);

void distill_cmd(const std::string& config_path, const std::string& data_dir,
                 const std::string& teachers_dir, const std::string& mode, int seeds,
                 const std::string& out_dir);

void rules_cmd(const std::string& config_path, const std::string& data_dir,
               const std::string& mode, int seeds, const std::string& out_dir);

void coreset_cmd(const std::string& lambdas_path, const std::string& strategy, double fraction,
                 const std::string& data_dir, std::uint64_t seed, const std::string& out_dir);

void analyze_cmd(const std::string& run_dir, const std::string& what, const std::string& out_dir);

void report_cmd(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// AMAL_OUT_DIR overrides out_dir when set; AMAL_THREADS caps the seed fan-out.
std::string resolve_out_dir(const std::string& requested);
int thread_cap();

}  // namespace amal::driver

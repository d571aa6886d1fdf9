#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amal/driver.hpp"
#include "amal/types.hpp"

int main(int argc, char** argv) {
  CLI::App app{"AMAL training toolkit"};
  app.require_subcommand(1);

  std::string config, data, teachers, mode, out, lambdas, run_dir, what, strategy;
  std::vector<std::string> run_dirs;
  int seeds = 1;
  std::uint64_t seed = 0;
  double fraction = 0.2;

  auto* gen = app.add_subcommand("gen-data", "materialize dataset CSVs from a generation config");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();

  auto* teach = app.add_subcommand("train-teacher", "train a teacher and cache its logits");
  teach->add_option("--config", config)->required();
  teach->add_option("--data", data)->required();
  teach->add_option("--out", out)->required();

  auto* distill = app.add_subcommand("distill", "run a knowledge-distillation scenario");
  distill->add_option("--config", config)->required();
  distill->add_option("--data", data)->required();
  distill->add_option("--teachers", teachers);
  distill->add_option("--mode", mode)->required()->check(CLI::IsMember({"none", "fixed", "amal"}));
  distill->add_option("--seeds", seeds)->default_val(1);
  distill->add_option("--out", out)->required();

  auto* rules = app.add_subcommand("rules", "run a rule-denoising scenario");
  rules->add_option("--config", config)->required();
  rules->add_option("--data", data)->required();
  rules->add_option("--mode", mode)->required()->check(CLI::IsMember({"only_l", "spear", "amal"}));
  rules->add_option("--seeds", seeds)->default_val(1);
  rules->add_option("--out", out)->required();

  auto* coreset = app.add_subcommand("coreset", "build a coreset from lambdas and retrain");
  coreset->add_option("--lambdas", lambdas)->required();
  coreset->add_option("--strategy", strategy)
      ->required()
      ->check(CLI::IsMember({"sq", "diff", "ratio", "random"}));
  coreset->add_option("--fraction", fraction)->default_val(0.2);
  coreset->add_option("--data", data)->required();
  coreset->add_option("--seed", seed)->default_val(0);
  coreset->add_option("--out", out)->required();

  auto* analyze = app.add_subcommand("analyze", "lambda analytics from a run directory");
  analyze->add_option("--run-dir", run_dir)->required();
  analyze->add_option("--what", what)->required()->check(CLI::IsMember({"hist", "sumhist", "buckets"}));
  analyze->add_option("--out", out)->required();

  auto* report = app.add_subcommand("report", "aggregate seed runs into tables and curves");
  report->add_option("--run-dirs", run_dirs)->required()->expected(-1);
  report->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) amal::driver::gen_data(config, out);
    else if (teach->parsed()) amal::driver::train_teacher_cmd(config, data, out);
    else if (distill->parsed()) amal::driver::distill_cmd(config, data, teachers, mode, seeds, out);
    else if (rules->parsed()) amal::driver::rules_cmd(config, data, mode, seeds, out);
    else if (coreset->parsed())
      amal::driver::coreset_cmd(lambdas, strategy, fraction, data, seed, out);
    else if (analyze->parsed()) amal::driver::analyze_cmd(run_dir, what, out);
    else if (report->parsed()) amal::driver::report_cmd(run_dirs, out);
  } catch (const amal::Error& e) {
    nlohmann::json err = {{"error", {{"kind", e.kind()}, {"message", e.what()}}}};
    std::cout << err.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", {{"kind", "internal"}, {"message", e.what()}}}};
    std::cout << err.dump() << std::endl;
    return 2;
  }
  return 0;
}

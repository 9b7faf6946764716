#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdmsr/dataset.hpp"
#include "gdmsr/denoiser.hpp"
#include "gdmsr/recommender.hpp"

namespace gdmsr::app {

struct DatasetPaths {
  std::string interactions;
  std::string social;
};

struct EvalConfig {
  int negatives = 100;
};

struct ExperimentSpec {
  std::string kind = "pipeline";
  std::vector<uint64_t> seeds;  // empty: use the CLI seed
  std::vector<double> alphas = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.6};
  std::vector<std::string> scorers = {"transformer-history", "user-layer-0", "user-layer-1",
                                      "item-mean-pool"};
  std::vector<std::string> variants = {"gdmsr", "wo-ad", "wo-ad-sc"};
  double target_overall_ratio = 0.0;  // 0: keep the configured base_ratio
  double rule_ratio = -1.0;           // <0: match the achieved overall ratio
  int64_t bench_records = 500000;
  int bench_repetitions = 5;
  int64_t bench_users = 0;  // >0: benchmark a synthetic graph of this size
  double bench_avg_degree = 8.0;
};

struct AppConfig {
  DatasetPaths dataset;
  data::FilterConfig filter;
  data::SplitConfig split;
  denoise::DenoiseConfig denoiser;
  rec::RecConfig recommender;
  EvalConfig eval;
  ExperimentSpec experiment;
};

// Strict parsing: unknown keys anywhere are rejected.
AppConfig parse_config(const nlohmann::json& j);
AppConfig load_config(const std::filesystem::path& path);

// Effective configuration echoed into every metrics artifact.
nlohmann::json config_echo(const AppConfig& cfg);

extern const char* kBuildId;

}  // namespace gdmsr::app

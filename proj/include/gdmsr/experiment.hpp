#pragma once

#include <filesystem>

#include "gdmsr/bench.hpp"
#include "gdmsr/config.hpp"
#include "gdmsr/ranking.hpp"
#include "gdmsr/recommender.hpp"

namespace gdmsr::xp {

// Trains the downstream recommender on g and evaluates the test split.
// The evaluation seed is independent of the training seed so that arms of an
// experiment rank against identical candidate sets.
eval::RankingReport train_and_eval(const data::Dataset& d, const data::SocialGraph& g,
                                   rec::RecConfig rcfg, int n_negatives, uint64_t eval_seed,
                                   std::ostream* log = nullptr);

nlohmann::json report_to_json(const eval::RankingReport& r);

// Uniformly random symmetric graph for benchmarking.
data::SocialGraph random_social_graph(int64_t n_users, double avg_degree, uint64_t seed);

// Dispatches on config.experiment.kind; artifacts land in out_dir.
// Valid kinds: pipeline, alpha_sweep, scorer_ablation, ratio_sweep,
// synthetic_noise, zero_shot, bench.
void run_experiment(const app::AppConfig& cfg, uint64_t seed,
                    const std::filesystem::path& out_dir, std::ostream* log = nullptr);

}  // namespace gdmsr::xp

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace gdmsr::testing {

// Clustered implicit-feedback corpus with a mixed-quality social graph.
// Users and items belong to preference groups; most interactions stay within
// the user's group. Social edges are "informative" (same group) or "noisy"
// (random cross-group): low-degree users get mostly informative edges, while
// high-degree users pick up a large noisy share. This mirrors the regime the
// denoiser targets, and gives the adaptive per-degree removal rule room to
// work with.
struct SynthSpec {
  int64_t n_users = 600;
  int64_t n_items = 1500;
  int n_groups = 12;
  int min_interactions = 15;
  int max_interactions = 35;
  double in_group_prob = 0.85;
  double popularity_skew = 2.0;  // >1 biases draws toward each group's head items
  double low_rating_frac = 0.10; // extra rows rated 1..3, dropped by ingestion

  double casual_frac = 0.35;
  int casual_min_deg = 3;
  int casual_max_deg = 7;
  int hub_min_deg = 12;
  int hub_max_deg = 60;
  double casual_informative = 0.85;
  double hub_informative = 0.45;

  uint64_t seed = 1;

  int group_of_user(int64_t u) const { return static_cast<int>(u * n_groups / n_users); }
  int group_of_item(int64_t i) const { return static_cast<int>(i * n_groups / n_items); }
};

struct SynthFiles {
  std::filesystem::path interactions;
  std::filesystem::path social;
};

// Writes interactions.tsv ("u<id>\ti<id>\trating") and social.tsv into dir.
SynthFiles generate_synthetic(const std::filesystem::path& dir, const SynthSpec& spec);

}  // namespace gdmsr::testing

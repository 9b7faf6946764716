#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gdmsr/csr.hpp"

namespace gdmsr::data {

struct RawInteraction {
  std::string user;
  std::string item;
  std::optional<double> rating;
};

struct FilterConfig {
  int min_user_interactions = 5;
  int min_item_interactions = 5;
  int min_friends = 2;
  double positive_threshold = 4.0;  // applied only when a rating column exists
};

struct SplitConfig {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Interaction {
  int32_t user;
  int32_t item;
  bool operator==(const Interaction&) const = default;
};

struct Dataset {
  int64_t n_users = 0;
  int64_t n_items = 0;
  std::vector<Interaction> train, valid, test;
  Csr user_to_items;  // train interactions only
  Csr item_to_users;
  std::vector<int64_t> popularity;       // per-item train count
  std::vector<std::string> user_ids;     // dense index -> external id
  std::vector<std::string> item_ids;

  bool user_has_train_item(int32_t u, int32_t i) const { return user_to_items.contains(u, i); }
  void rebuild_adjacency();  // recomputes CSRs and popularity from train
  void validate() const;     // asserts the structural invariants
};

struct SocialGraph {
  static constexpr uint8_t kObserved = 0;
  static constexpr uint8_t kFake = 1;

  Csr adj;                          // every original directed edge, rows sorted
  std::vector<uint8_t> active;      // per edge, aligned with adj.indices
  std::vector<uint8_t> provenance;  // per edge

  int64_t n_users() const { return adj.n_rows; }
  int64_t n_edges() const { return adj.n_edges(); }
  int64_t n_active() const;
  std::optional<int64_t> edge_id(int32_t u, int32_t v) const;
  bool has_edge(int32_t u, int32_t v) const { return adj.contains(u, v); }
  Csr active_csr() const;
  int64_t active_out_degree(int32_t u) const;
  void set_all_active();

  static SocialGraph from_directed_pairs(int64_t n_users,
                                         std::vector<std::pair<int32_t, int32_t>> edges,
                                         std::vector<uint8_t> provenance_per_edge = {});
  // Convenience for tests/fixtures: stores both directions of each pair.
  static SocialGraph from_undirected_pairs(int64_t n_users,
                                           const std::vector<std::pair<int32_t, int32_t>>& pairs);
};

// Raw file ingestion (TSV, '#' comments), activity filtering to fixpoint,
// dense remapping, and a seeded per-user split.
std::pair<Dataset, SocialGraph> load_dataset(const std::filesystem::path& interactions_path,
                                             const std::filesystem::path& social_path,
                                             const FilterConfig& filter, const SplitConfig& split,
                                             uint64_t seed);

// Same pipeline on pre-parsed rows (used by loaders and tests).
std::pair<Dataset, SocialGraph> build_dataset(std::vector<RawInteraction> interactions,
                                              std::vector<std::pair<std::string, std::string>> social,
                                              const FilterConfig& filter, const SplitConfig& split,
                                              uint64_t seed);

// Adds uniformly sampled non-edges (both directions, provenance = fake),
// one fake undirected pair per observed undirected pair.
SocialGraph inject_fake_relations(const SocialGraph& g, uint64_t seed);

// For each user with at least one active friend: fraction of friends sharing
// at least one train item.
std::vector<std::pair<int32_t, double>> co_interaction_stats(const Dataset& d,
                                                             const SocialGraph& g);
void write_co_interaction_stats(const std::filesystem::path& csv,
                                const std::vector<std::pair<int32_t, double>>& stats);

// Keeps a seeded per-user fraction of train interactions (at least one each)
// and rebuilds the adjacency; valid/test are copied unchanged.
Dataset subsample_train(const Dataset& d, double fraction, uint64_t seed);

}  // namespace gdmsr::data

#include "gdmsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "gdmsr/common.hpp"
#include "gdmsr/rng.hpp"

namespace gdmsr::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

bool skippable(const std::string& line) {
  return line.empty() || line[0] == '#' || line == "\r";
}

std::vector<RawInteraction> parse_interactions(const fs::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open interactions file ", path.string());
  std::vector<RawInteraction> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skippable(line)) continue;
    auto fields = split_tabs(line);
    check(fields.size() == 2 || fields.size() == 3, path.string(), ":", lineno,
          ": expected 'user<TAB>item[<TAB>rating]', got ", fields.size(), " fields");
    RawInteraction r;
    r.user = fields[0];
    r.item = fields[1];
    check(!r.user.empty() && !r.item.empty(), path.string(), ":", lineno, ": empty id");
    if (fields.size() == 3) {
      size_t used = 0;
      double rating = 0.0;
      try {
        rating = std::stod(fields[2], &used);
      } catch (const std::exception&) {
        fail(path.string(), ":", lineno, ": unparseable rating '", fields[2], "'");
      }
      check(used == fields[2].size(), path.string(), ":", lineno, ": unparseable rating '",
            fields[2], "'");
      r.rating = rating;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<std::pair<std::string, std::string>> parse_social(const fs::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open social file ", path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skippable(line)) continue;
    auto fields = split_tabs(line);
    check(fields.size() == 2, path.string(), ":", lineno,
          ": expected 'user<TAB>user', got ", fields.size(), " fields");
    check(!fields[0].empty() && !fields[1].empty(), path.string(), ":", lineno, ": empty id");
    rows.emplace_back(fields[0], fields[1]);
  }
  return rows;
}

}  // namespace

// ---- Dataset ---------------------------------------------------------------

void Dataset::rebuild_adjacency() {
  std::vector<std::pair<int32_t, int32_t>> ui, iu;
  ui.reserve(train.size());
  iu.reserve(train.size());
  for (const auto& p : train) {
    ui.emplace_back(p.user, p.item);
    iu.emplace_back(p.item, p.user);
  }
  user_to_items = Csr::from_pairs(n_users, n_items, ui);
  item_to_users = Csr::from_pairs(n_items, n_users, iu);
  popularity.assign(static_cast<size_t>(n_items), 0);
  for (int64_t i = 0; i < n_items; ++i) popularity[static_cast<size_t>(i)] = item_to_users.degree(i);
}

void Dataset::validate() const {
  check(n_users > 0 && n_items > 0, "Dataset: empty user or item universe");
  std::set<std::pair<int32_t, int32_t>> seen;
  auto check_split = [&](const std::vector<Interaction>& s, const char* name) {
    for (const auto& p : s) {
      check(p.user >= 0 && p.user < n_users, "Dataset: ", name, " user ", p.user, " out of range");
      check(p.item >= 0 && p.item < n_items, "Dataset: ", name, " item ", p.item, " out of range");
      check(seen.insert({p.user, p.item}).second, "Dataset: pair (", p.user, ",", p.item,
            ") appears in more than one split");
    }
  };
  check_split(train, "train");
  check_split(valid, "valid");
  check_split(test, "test");
  for (int32_t u = 0; u < n_users; ++u)
    check(user_to_items.degree(u) >= 1, "Dataset: user ", u, " has no train interaction");
  int64_t pop_sum = 0;
  for (int64_t c : popularity) pop_sum += c;
  check(pop_sum == static_cast<int64_t>(train.size()), "Dataset: popularity sum ", pop_sum,
        " != train size ", train.size());
}

// ---- SocialGraph -----------------------------------------------------------

int64_t SocialGraph::n_active() const {
  int64_t n = 0;
  for (uint8_t a : active) n += a;
  return n;
}

std::optional<int64_t> SocialGraph::edge_id(int32_t u, int32_t v) const {
  const auto row = adj.row(u);
  const auto it = std::lower_bound(row.begin(), row.end(), v);
  if (it == row.end() || *it != v) return std::nullopt;
  return adj.offsets[u] + (it - row.begin());
}

Csr SocialGraph::active_csr() const {
  Csr out(adj.n_rows, adj.n_cols);
  out.indices.reserve(static_cast<size_t>(n_active()));
  for (int64_t u = 0; u < adj.n_rows; ++u) {
    for (int64_t e = adj.offsets[u]; e < adj.offsets[u + 1]; ++e)
      if (active[static_cast<size_t>(e)]) out.indices.push_back(adj.indices[static_cast<size_t>(e)]);
    out.offsets[u + 1] = static_cast<int64_t>(out.indices.size());
  }
  return out;
}

int64_t SocialGraph::active_out_degree(int32_t u) const {
  int64_t n = 0;
  for (int64_t e = adj.offsets[u]; e < adj.offsets[u + 1]; ++e) n += active[static_cast<size_t>(e)];
  return n;
}

void SocialGraph::set_all_active() { std::fill(active.begin(), active.end(), 1); }

SocialGraph SocialGraph::from_directed_pairs(int64_t n_users,
                                             std::vector<std::pair<int32_t, int32_t>> edges,
                                             std::vector<uint8_t> provenance_per_edge) {
  check(provenance_per_edge.empty() || provenance_per_edge.size() == edges.size(),
        "SocialGraph: provenance size mismatch");
  std::vector<std::pair<std::pair<int32_t, int32_t>, uint8_t>> tagged(edges.size());
  for (size_t i = 0; i < edges.size(); ++i) {
    check(edges[i].first != edges[i].second, "SocialGraph: self-loop (", edges[i].first, ")");
    tagged[i] = {edges[i], provenance_per_edge.empty() ? kObserved : provenance_per_edge[i]};
  }
  std::sort(tagged.begin(), tagged.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 1; i < tagged.size(); ++i)
    check(tagged[i].first != tagged[i - 1].first, "SocialGraph: duplicate edge (",
          tagged[i].first.first, ",", tagged[i].first.second, ")");
  SocialGraph g;
  g.adj = Csr(n_users, n_users);
  g.adj.indices.reserve(tagged.size());
  g.provenance.reserve(tagged.size());
  size_t pos = 0;
  for (int64_t u = 0; u < n_users; ++u) {
    while (pos < tagged.size() && tagged[pos].first.first == u) {
      g.adj.indices.push_back(tagged[pos].first.second);
      g.provenance.push_back(tagged[pos].second);
      ++pos;
    }
    g.adj.offsets[u + 1] = static_cast<int64_t>(g.adj.indices.size());
  }
  g.active.assign(g.adj.indices.size(), 1);
  return g;
}

SocialGraph SocialGraph::from_undirected_pairs(
    int64_t n_users, const std::vector<std::pair<int32_t, int32_t>>& pairs) {
  std::set<std::pair<int32_t, int32_t>> directed;
  for (auto [a, b] : pairs) {
    if (a == b) continue;
    directed.insert({a, b});
    directed.insert({b, a});
  }
  return from_directed_pairs(n_users, {directed.begin(), directed.end()});
}

// ---- ingestion ---------------------------------------------------------------

std::pair<Dataset, SocialGraph> build_dataset(
    std::vector<RawInteraction> interactions,
    std::vector<std::pair<std::string, std::string>> social, const FilterConfig& filter,
    const SplitConfig& split, uint64_t seed) {
  check(split.train > 0.0 && split.valid >= 0.0 && split.test >= 0.0 &&
            std::fabs(split.train + split.valid + split.test - 1.0) < 1e-9,
        "split fractions must be non-negative and sum to 1");

  // Positives only; datasets without a rating column keep every row.
  std::vector<std::pair<std::string, std::string>> pos;
  pos.reserve(interactions.size());
  for (auto& r : interactions)
    if (!r.rating.has_value() || *r.rating >= filter.positive_threshold)
      pos.emplace_back(std::move(r.user), std::move(r.item));
  std::sort(pos.begin(), pos.end());
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  check(!pos.empty(), "no positive interactions after rating filter");

  // Dense temp ids over users/items that interact; social-only users are dropped.
  std::vector<std::string> users, items;
  users.reserve(pos.size());
  items.reserve(pos.size());
  for (const auto& [u, i] : pos) {
    users.push_back(u);
    items.push_back(i);
  }
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  auto uid_of = [&](const std::string& s) -> int64_t {
    auto it = std::lower_bound(users.begin(), users.end(), s);
    return (it != users.end() && *it == s) ? it - users.begin() : -1;
  };
  auto iid_of = [&](const std::string& s) {
    return std::lower_bound(items.begin(), items.end(), s) - items.begin();
  };

  std::vector<std::pair<int32_t, int32_t>> pairs;
  pairs.reserve(pos.size());
  for (const auto& [u, i] : pos)
    pairs.emplace_back(static_cast<int32_t>(uid_of(u)), static_cast<int32_t>(iid_of(i)));

  // Undirected social pairs between interacting users.
  std::vector<std::pair<int32_t, int32_t>> fr;
  for (const auto& [a, b] : social) {
    const int64_t ua = uid_of(a), ub = uid_of(b);
    if (ua < 0 || ub < 0 || ua == ub) continue;
    fr.emplace_back(static_cast<int32_t>(std::min(ua, ub)), static_cast<int32_t>(std::max(ua, ub)));
  }
  std::sort(fr.begin(), fr.end());
  fr.erase(std::unique(fr.begin(), fr.end()), fr.end());

  // Activity filter, iterated to fixpoint.
  std::vector<uint8_t> u_alive(users.size(), 1), i_alive(items.size(), 1);
  while (true) {
    std::vector<int64_t> u_cnt(users.size(), 0), i_cnt(items.size(), 0), f_cnt(users.size(), 0);
    for (const auto& [u, i] : pairs)
      if (u_alive[u] && i_alive[i]) {
        u_cnt[u]++;
        i_cnt[i]++;
      }
    for (const auto& [a, b] : fr)
      if (u_alive[a] && u_alive[b]) {
        f_cnt[a]++;
        f_cnt[b]++;
      }
    bool changed = false;
    for (size_t u = 0; u < users.size(); ++u)
      if (u_alive[u] &&
          (u_cnt[u] < filter.min_user_interactions || f_cnt[u] < filter.min_friends)) {
        u_alive[u] = 0;
        changed = true;
      }
    for (size_t i = 0; i < items.size(); ++i)
      if (i_alive[i] && i_cnt[i] < filter.min_item_interactions) {
        i_alive[i] = 0;
        changed = true;
      }
    if (!changed) break;
  }

  // Compact remap; survivors keep their sorted-external-id order.
  std::vector<int32_t> u_map(users.size(), -1), i_map(items.size(), -1);
  Dataset d;
  for (size_t u = 0; u < users.size(); ++u)
    if (u_alive[u]) {
      u_map[u] = static_cast<int32_t>(d.n_users++);
      d.user_ids.push_back(users[u]);
    }
  for (size_t i = 0; i < items.size(); ++i)
    if (i_alive[i]) {
      i_map[i] = static_cast<int32_t>(d.n_items++);
      d.item_ids.push_back(items[i]);
    }
  check(d.n_users > 0 && d.n_items > 0, "dataset is empty after activity filtering");

  std::vector<std::vector<int32_t>> items_of(static_cast<size_t>(d.n_users));
  for (const auto& [u, i] : pairs)
    if (u_alive[u] && i_alive[i]) items_of[static_cast<size_t>(u_map[u])].push_back(i_map[i]);

  // Seeded per-user split. Floors keep at least one train interaction.
  Rng rng(derive_seed(seed, 0x51));
  for (int32_t u = 0; u < d.n_users; ++u) {
    auto& its = items_of[static_cast<size_t>(u)];
    std::sort(its.begin(), its.end());
    rng.shuffle(its);
    const int64_t n = static_cast<int64_t>(its.size());
    int64_t n_test = static_cast<int64_t>(std::floor(static_cast<double>(n) * split.test));
    int64_t n_valid = static_cast<int64_t>(std::floor(static_cast<double>(n) * split.valid));
    int64_t n_train = n - n_test - n_valid;
    if (n_train == 0) {  // give the user a preference history
      if (n_test > 0)
        --n_test;
      else
        --n_valid;
      ++n_train;
    }
    for (int64_t k = 0; k < n; ++k) {
      const Interaction p{u, its[static_cast<size_t>(k)]};
      if (k < n_train)
        d.train.push_back(p);
      else if (k < n_train + n_valid)
        d.valid.push_back(p);
      else
        d.test.push_back(p);
    }
  }
  d.rebuild_adjacency();
  d.validate();

  std::vector<std::pair<int32_t, int32_t>> directed;
  for (const auto& [a, b] : fr)
    if (u_alive[a] && u_alive[b]) {
      directed.emplace_back(u_map[a], u_map[b]);
      directed.emplace_back(u_map[b], u_map[a]);
    }
  SocialGraph g = SocialGraph::from_directed_pairs(d.n_users, std::move(directed));
  return {std::move(d), std::move(g)};
}

std::pair<Dataset, SocialGraph> load_dataset(const fs::path& interactions_path,
                                             const fs::path& social_path,
                                             const FilterConfig& filter, const SplitConfig& split,
                                             uint64_t seed) {
  return build_dataset(parse_interactions(interactions_path), parse_social(social_path), filter,
                       split, seed);
}

// ---- fake relations ----------------------------------------------------------

SocialGraph inject_fake_relations(const SocialGraph& g, uint64_t seed) {
  for (uint8_t p : g.provenance)
    check(p == SocialGraph::kObserved, "inject_fake_relations: graph already contains fakes");
  const int64_t n = g.n_users();
  const int64_t observed = g.n_edges() / 2;  // undirected count; graph is symmetric
  if (observed == 0) return g;
  const int64_t universe = n * (n - 1) / 2;
  check(universe - observed >= observed, "inject_fake_relations: graph too dense, only ",
        universe - observed, " non-edges for ", observed, " fakes");

  Rng rng(derive_seed(seed, 0xFA));
  std::set<std::pair<int32_t, int32_t>> fakes;
  const int64_t cap = 200 * observed + 10000;
  int64_t attempts = 0;
  while (static_cast<int64_t>(fakes.size()) < observed && attempts < cap) {
    ++attempts;
    int32_t a = static_cast<int32_t>(rng.index(n));
    int32_t b = static_cast<int32_t>(rng.index(n));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (g.has_edge(a, b)) continue;
    fakes.insert({a, b});
  }
  if (static_cast<int64_t>(fakes.size()) < observed) {
    // Dense graph: enumerate the remaining non-edges and sample directly.
    std::vector<std::pair<int32_t, int32_t>> pool;
    for (int32_t a = 0; a < n; ++a)
      for (int32_t b = a + 1; b < n; ++b)
        if (!g.has_edge(a, b) && !fakes.count({a, b})) pool.emplace_back(a, b);
    rng.shuffle(pool);
    for (const auto& e : pool) {
      if (static_cast<int64_t>(fakes.size()) >= observed) break;
      fakes.insert(e);
    }
  }
  check(static_cast<int64_t>(fakes.size()) == observed,
        "inject_fake_relations: could not find enough non-edges");

  std::vector<std::pair<int32_t, int32_t>> edges = g.adj.to_pairs();
  std::vector<uint8_t> prov = g.provenance;
  for (const auto& [a, b] : fakes) {
    edges.emplace_back(a, b);
    edges.emplace_back(b, a);
    prov.push_back(SocialGraph::kFake);
    prov.push_back(SocialGraph::kFake);
  }
  return SocialGraph::from_directed_pairs(n, std::move(edges), std::move(prov));
}

// ---- statistics ----------------------------------------------------------------

namespace {
bool share_any(std::span<const int32_t> a, std::span<const int32_t> b) {
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j])
      ++i;
    else
      ++j;
  }
  return false;
}
}  // namespace

std::vector<std::pair<int32_t, double>> co_interaction_stats(const Dataset& d,
                                                             const SocialGraph& g) {
  check(g.n_users() == d.n_users, "co_interaction_stats: user count mismatch");
  std::vector<std::pair<int32_t, double>> out;
  for (int32_t u = 0; u < d.n_users; ++u) {
    int64_t friends = 0, sharing = 0;
    for (int64_t e = g.adj.offsets[u]; e < g.adj.offsets[u + 1]; ++e) {
      if (!g.active[static_cast<size_t>(e)]) continue;
      ++friends;
      const int32_t v = g.adj.indices[static_cast<size_t>(e)];
      if (share_any(d.user_to_items.row(u), d.user_to_items.row(v))) ++sharing;
    }
    if (friends > 0)
      out.emplace_back(u, static_cast<double>(sharing) / static_cast<double>(friends));
  }
  return out;
}

void write_co_interaction_stats(const fs::path& csv,
                                const std::vector<std::pair<int32_t, double>>& stats) {
  std::ofstream out(csv);
  check(out.good(), "cannot open ", csv.string());
  out << "user_index,ratio\n";
  char buf[64];
  for (const auto& [u, r] : stats) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f\n", u, r);
    out << buf;
  }
}

// ---- training-view subsample -----------------------------------------------------

Dataset subsample_train(const Dataset& d, double fraction, uint64_t seed) {
  check(fraction > 0.0 && fraction <= 1.0, "subsample_train: fraction ", fraction,
        " outside (0,1]");
  if (fraction == 1.0) return d;
  Dataset out;
  out.n_users = d.n_users;
  out.n_items = d.n_items;
  out.user_ids = d.user_ids;
  out.item_ids = d.item_ids;
  out.valid = d.valid;
  out.test = d.test;
  Rng rng(derive_seed(seed, 0x5b));
  for (int32_t u = 0; u < d.n_users; ++u) {
    const auto row = d.user_to_items.row(u);
    std::vector<int32_t> items(row.begin(), row.end());
    rng.shuffle(items);
    const int64_t keep = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(fraction * static_cast<double>(items.size()))));
    items.resize(static_cast<size_t>(std::min<int64_t>(keep, static_cast<int64_t>(items.size()))));
    std::sort(items.begin(), items.end());
    for (int32_t i : items) out.train.push_back({u, i});
  }
  out.rebuild_adjacency();
  return out;
}

}  // namespace gdmsr::data

#include "gdmsr/prepared_io.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace gdmsr::io {

namespace fs = std::filesystem;
using data::Dataset;
using data::SocialGraph;

namespace {

void write_pairs(const fs::path& p, const std::vector<data::Interaction>& rows) {
  std::ofstream out(p);
  check(out.good(), "cannot open ", p.string());
  for (const auto& r : rows) out << r.user << '\t' << r.item << '\n';
}

std::vector<data::Interaction> read_pairs(const fs::path& p) {
  std::ifstream in(p);
  check(in.good(), "cannot open ", p.string());
  std::vector<data::Interaction> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    int32_t u, i;
    check(std::sscanf(line.c_str(), "%d\t%d", &u, &i) == 2, p.string(), ":", lineno,
          ": expected 'user<TAB>item'");
    rows.push_back({u, i});
  }
  return rows;
}

void write_ids(const fs::path& p, const std::vector<std::string>& ids) {
  std::ofstream out(p);
  check(out.good(), "cannot open ", p.string());
  for (size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids[i] << '\n';
}

std::vector<std::string> read_ids(const fs::path& p) {
  std::ifstream in(p);
  check(in.good(), "cannot open ", p.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    check(tab != std::string::npos, p.string(), ": malformed id map line");
    ids.push_back(line.substr(tab + 1));
  }
  return ids;
}

}  // namespace

void save_prepared(const fs::path& dir, const Dataset& d, const SocialGraph& g) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["n_users"] = d.n_users;
  meta["n_items"] = d.n_items;
  meta["n_train"] = d.train.size();
  meta["n_valid"] = d.valid.size();
  meta["n_test"] = d.test.size();
  meta["n_social_edges"] = g.n_edges();
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  write_ids(dir / "user_map.tsv", d.user_ids);
  write_ids(dir / "item_map.tsv", d.item_ids);
  write_pairs(dir / "train.tsv", d.train);
  write_pairs(dir / "valid.tsv", d.valid);
  write_pairs(dir / "test.tsv", d.test);

  std::ofstream soc(dir / "social.tsv");
  check(soc.good(), "cannot open ", (dir / "social.tsv").string());
  for (int64_t u = 0; u < g.n_users(); ++u)
    for (int64_t e = g.adj.offsets[u]; e < g.adj.offsets[u + 1]; ++e)
      soc << u << '\t' << g.adj.indices[static_cast<size_t>(e)] << '\t'
          << static_cast<int>(g.provenance[static_cast<size_t>(e)]) << '\n';
}

std::pair<Dataset, SocialGraph> load_prepared(const fs::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  check(meta_in.good(), "cannot open ", (dir / "meta.json").string(), "; run 'prepare' first");
  nlohmann::json meta = nlohmann::json::parse(meta_in);

  Dataset d;
  d.n_users = meta.at("n_users").get<int64_t>();
  d.n_items = meta.at("n_items").get<int64_t>();
  d.user_ids = read_ids(dir / "user_map.tsv");
  d.item_ids = read_ids(dir / "item_map.tsv");
  d.train = read_pairs(dir / "train.tsv");
  d.valid = read_pairs(dir / "valid.tsv");
  d.test = read_pairs(dir / "test.tsv");
  d.rebuild_adjacency();
  d.validate();

  std::ifstream soc(dir / "social.tsv");
  check(soc.good(), "cannot open ", (dir / "social.tsv").string());
  std::vector<std::pair<int32_t, int32_t>> edges;
  std::vector<uint8_t> prov;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(soc, line)) {
    ++lineno;
    if (line.empty()) continue;
    int32_t u, v, p;
    check(std::sscanf(line.c_str(), "%d\t%d\t%d", &u, &v, &p) == 3,
          (dir / "social.tsv").string(), ":", lineno, ": expected 'u<TAB>v<TAB>provenance'");
    edges.emplace_back(u, v);
    prov.push_back(static_cast<uint8_t>(p));
  }
  SocialGraph g = SocialGraph::from_directed_pairs(d.n_users, std::move(edges), std::move(prov));
  return {std::move(d), std::move(g)};
}

void save_store(const fs::path& path, const SocialGraph& g,
                const denoise::ConfidenceStore& store) {
  check(static_cast<int64_t>(store.smoothed.size()) == g.n_edges(),
        "save_store: store does not cover the graph");
  std::ofstream out(path);
  check(out.good(), "cannot open ", path.string());
  char buf[96];
  for (int64_t u = 0; u < g.n_users(); ++u)
    for (int64_t e = g.adj.offsets[u]; e < g.adj.offsets[u + 1]; ++e) {
      std::snprintf(buf, sizeof(buf), "%lld\t%d\t%.17g\t%d\n", static_cast<long long>(u),
                    g.adj.indices[static_cast<size_t>(e)], store.smoothed[static_cast<size_t>(e)],
                    store.period[static_cast<size_t>(e)]);
      out << buf;
    }
}

denoise::ConfidenceStore load_store(const fs::path& path, const SocialGraph& g) {
  std::ifstream in(path);
  check(in.good(), "cannot open store ", path.string());
  denoise::ConfidenceStore store;
  store.smoothed.assign(static_cast<size_t>(g.n_edges()), 0.0);
  store.period.assign(static_cast<size_t>(g.n_edges()), 0);
  std::string line;
  int64_t lineno = 0, seen = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    int32_t u, v, p;
    double s;
    check(std::sscanf(line.c_str(), "%d\t%d\t%lf\t%d", &u, &v, &s, &p) == 4, path.string(), ":",
          lineno, ": expected 'u<TAB>v<TAB>score<TAB>period'");
    const auto e = g.edge_id(u, v);
    check(e.has_value(), path.string(), ":", lineno, ": edge (", u, ",", v, ") not in graph");
    store.smoothed[static_cast<size_t>(*e)] = s;
    store.period[static_cast<size_t>(*e)] = p;
    ++seen;
  }
  check(seen == g.n_edges(), path.string(), ": covers ", seen, " of ", g.n_edges(), " edges");
  return store;
}

}  // namespace gdmsr::io

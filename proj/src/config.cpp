#include "gdmsr/config.hpp"

#include <fstream>
#include <set>

namespace gdmsr::app {

#ifdef GDMSR_BUILD_ID
const char* kBuildId = GDMSR_BUILD_ID;
#else
const char* kBuildId = "unknown";
#endif

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::set<std::string>& allowed, const char* context) {
  check(j.is_object(), "config: section '", context, "' must be an object");
  for (const auto& [key, _] : j.items())
    check(allowed.count(key) > 0, "config: unknown key '", key, "' in section '", context, "'");
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void parse_dataset(const json& j, DatasetPaths& p) {
  require_keys(j, {"interactions", "social"}, "dataset");
  get_to(j, "interactions", p.interactions);
  get_to(j, "social", p.social);
}

void parse_filter(const json& j, data::FilterConfig& f) {
  require_keys(j,
               {"min_user_interactions", "min_item_interactions", "min_friends",
                "positive_threshold"},
               "filter");
  get_to(j, "min_user_interactions", f.min_user_interactions);
  get_to(j, "min_item_interactions", f.min_item_interactions);
  get_to(j, "min_friends", f.min_friends);
  get_to(j, "positive_threshold", f.positive_threshold);
}

void parse_split(const json& j, data::SplitConfig& s) {
  require_keys(j, {"train", "valid", "test"}, "split");
  get_to(j, "train", s.train);
  get_to(j, "valid", s.valid);
  get_to(j, "test", s.test);
}

void parse_denoiser(const json& j, denoise::DenoiseConfig& d) {
  require_keys(j, {"alpha",  "beta",     "curriculum_period", "epsilon",
                   "gamma",  "R",        "L",                 "K",
                   "lr",     "dropout",  "epochs",            "batch",
                   "dim",    "scorer",   "interaction_fraction", "adaptive",
                   "uniform_ratio", "self_correcting", "heads", "ff_dim",
                   "mlp_hidden"},
               "denoiser");
  get_to(j, "alpha", d.alpha);
  get_to(j, "beta", d.beta);
  get_to(j, "curriculum_period", d.curriculum_period);
  get_to(j, "epsilon", d.epsilon);
  get_to(j, "gamma", d.gamma);
  get_to(j, "R", d.base_ratio);
  get_to(j, "L", d.history_len);
  get_to(j, "K", d.hops);
  get_to(j, "lr", d.lr);
  get_to(j, "dropout", d.dropout);
  get_to(j, "epochs", d.epochs);
  get_to(j, "batch", d.batch_size);
  get_to(j, "dim", d.dim);
  if (j.contains("scorer")) d.scorer = denoise::scorer_from_name(j.at("scorer").get<std::string>());
  get_to(j, "interaction_fraction", d.interaction_fraction);
  get_to(j, "adaptive", d.adaptive);
  get_to(j, "uniform_ratio", d.uniform_ratio);
  get_to(j, "self_correcting", d.self_correcting);
  get_to(j, "heads", d.heads);
  get_to(j, "ff_dim", d.ff_dim);
  get_to(j, "mlp_hidden", d.mlp_hidden);
}

void parse_recommender(const json& j, rec::RecConfig& r) {
  require_keys(j,
               {"dim", "K", "epochs", "batch", "lr", "init_std", "eval_every", "patience",
                "eval_negatives"},
               "recommender");
  get_to(j, "dim", r.dim);
  get_to(j, "K", r.hops);
  get_to(j, "epochs", r.epochs);
  get_to(j, "batch", r.batch_size);
  get_to(j, "lr", r.lr);
  get_to(j, "init_std", r.init_std);
  get_to(j, "eval_every", r.eval_every);
  get_to(j, "patience", r.patience);
  get_to(j, "eval_negatives", r.eval_negatives);
}

void parse_eval(const json& j, EvalConfig& e) {
  require_keys(j, {"negatives"}, "eval");
  get_to(j, "negatives", e.negatives);
}

void parse_experiment(const json& j, ExperimentSpec& x) {
  require_keys(j,
               {"kind", "seeds", "alphas", "ratios", "scorers", "variants",
                "target_overall_ratio", "rule_ratio", "bench_records", "bench_repetitions",
                "bench_users", "bench_avg_degree"},
               "experiment");
  get_to(j, "kind", x.kind);
  get_to(j, "seeds", x.seeds);
  get_to(j, "alphas", x.alphas);
  get_to(j, "ratios", x.ratios);
  get_to(j, "scorers", x.scorers);
  get_to(j, "variants", x.variants);
  get_to(j, "target_overall_ratio", x.target_overall_ratio);
  get_to(j, "rule_ratio", x.rule_ratio);
  get_to(j, "bench_records", x.bench_records);
  get_to(j, "bench_repetitions", x.bench_repetitions);
  get_to(j, "bench_users", x.bench_users);
  get_to(j, "bench_avg_degree", x.bench_avg_degree);
}

}  // namespace

AppConfig parse_config(const json& j) {
  require_keys(j, {"dataset", "filter", "split", "denoiser", "recommender", "eval", "experiment"},
               "<top level>");
  AppConfig cfg;
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("filter")) parse_filter(j.at("filter"), cfg.filter);
  if (j.contains("split")) parse_split(j.at("split"), cfg.split);
  if (j.contains("denoiser")) parse_denoiser(j.at("denoiser"), cfg.denoiser);
  if (j.contains("recommender")) parse_recommender(j.at("recommender"), cfg.recommender);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
  if (j.contains("experiment")) parse_experiment(j.at("experiment"), cfg.experiment);
  cfg.denoiser.validate();
  cfg.recommender.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config ", path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    fail("config ", path.string(), ": ", e.what());
  }
  return parse_config(j);
}

nlohmann::json config_echo(const AppConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = {{"interactions", cfg.dataset.interactions}, {"social", cfg.dataset.social}};
  j["filter"] = {{"min_user_interactions", cfg.filter.min_user_interactions},
                 {"min_item_interactions", cfg.filter.min_item_interactions},
                 {"min_friends", cfg.filter.min_friends},
                 {"positive_threshold", cfg.filter.positive_threshold}};
  j["split"] = {{"train", cfg.split.train}, {"valid", cfg.split.valid}, {"test", cfg.split.test}};
  const auto& d = cfg.denoiser;
  j["denoiser"] = {{"alpha", d.alpha},
                   {"beta", d.beta},
                   {"curriculum_period", d.curriculum_period},
                   {"epsilon", d.epsilon},
                   {"gamma", d.gamma},
                   {"R", d.base_ratio},
                   {"L", d.history_len},
                   {"K", d.hops},
                   {"lr", d.lr},
                   {"dropout", d.dropout},
                   {"epochs", d.epochs},
                   {"batch", d.batch_size},
                   {"dim", d.dim},
                   {"scorer", denoise::scorer_name(d.scorer)},
                   {"interaction_fraction", d.interaction_fraction},
                   {"adaptive", d.adaptive},
                   {"uniform_ratio", d.uniform_ratio},
                   {"self_correcting", d.self_correcting},
                   {"heads", d.heads},
                   {"ff_dim", d.ff_dim},
                   {"mlp_hidden", d.mlp_hidden}};
  const auto& r = cfg.recommender;
  j["recommender"] = {{"dim", r.dim},         {"K", r.hops},
                      {"epochs", r.epochs},   {"batch", r.batch_size},
                      {"lr", r.lr},           {"init_std", r.init_std},
                      {"eval_every", r.eval_every}, {"patience", r.patience},
                      {"eval_negatives", r.eval_negatives}};
  j["eval"] = {{"negatives", cfg.eval.negatives}};
  const auto& x = cfg.experiment;
  j["experiment"] = {{"kind", x.kind},
                     {"seeds", x.seeds},
                     {"alphas", x.alphas},
                     {"ratios", x.ratios},
                     {"scorers", x.scorers},
                     {"variants", x.variants},
                     {"target_overall_ratio", x.target_overall_ratio},
                     {"rule_ratio", x.rule_ratio},
                     {"bench_records", x.bench_records},
                     {"bench_repetitions", x.bench_repetitions},
                     {"bench_users", x.bench_users},
                     {"bench_avg_degree", x.bench_avg_degree}};
  return j;
}

}  // namespace gdmsr::app

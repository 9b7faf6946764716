#include "gdmsr/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "gdmsr/prepared_io.hpp"
#include "gdmsr/rng.hpp"

namespace gdmsr::xp {

namespace fs = std::filesystem;
using data::Dataset;
using data::SocialGraph;
using nlohmann::json;

eval::RankingReport train_and_eval(const Dataset& d, const SocialGraph& g, rec::RecConfig rcfg,
                                   int n_negatives, uint64_t eval_seed, std::ostream* log) {
  const auto model = rec::train_recommender(d, g, rcfg, log);
  return eval::evaluate_ranking(model.stack, d, eval::SplitSel::kTest, n_negatives, eval_seed);
}

json report_to_json(const eval::RankingReport& r) {
  return json{{"recall@1", r.recall1},
              {"recall@3", r.recall3},
              {"ndcg@3", r.ndcg3},
              {"n_users", r.n_users},
              {"negatives", r.n_negatives}};
}

SocialGraph random_social_graph(int64_t n_users, double avg_degree, uint64_t seed) {
  check(n_users >= 2 && avg_degree > 0.0, "random_social_graph: bad arguments");
  const int64_t target = static_cast<int64_t>(avg_degree * static_cast<double>(n_users) / 2.0);
  Rng rng(derive_seed(seed, 0xc9));
  std::set<std::pair<int32_t, int32_t>> pairs;
  while (static_cast<int64_t>(pairs.size()) < target) {
    int32_t a = static_cast<int32_t>(rng.index(n_users));
    int32_t b = static_cast<int32_t>(rng.index(n_users));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    pairs.insert({a, b});
  }
  return SocialGraph::from_undirected_pairs(n_users, {pairs.begin(), pairs.end()});
}

namespace {

struct Ctx {
  const app::AppConfig& cfg;
  uint64_t seed;
  fs::path out;
  std::ostream* log;

  std::vector<uint64_t> seeds() const {
    return cfg.experiment.seeds.empty() ? std::vector<uint64_t>{seed} : cfg.experiment.seeds;
  }
  void note(const std::string& s) const {
    if (log) *log << s << "\n";
  }
};

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  check(out.good(), "cannot open ", p.string());
  out << j.dump(2) << '\n';
}

void write_metrics(const Ctx& ctx, const json& results) {
  json j;
  j["kind"] = ctx.cfg.experiment.kind;
  j["seed"] = ctx.seed;
  j["seeds"] = ctx.seeds();
  j["config"] = app::config_echo(ctx.cfg);
  j["build"] = app::kBuildId;
  j["metrics"] = results;
  write_json(ctx.out / "metrics.json", j);
}

std::pair<Dataset, SocialGraph> load_data(const Ctx& ctx, uint64_t seed) {
  check(!ctx.cfg.dataset.interactions.empty() && !ctx.cfg.dataset.social.empty(),
        "experiment '", ctx.cfg.experiment.kind, "' needs dataset.interactions and dataset.social");
  return data::load_dataset(ctx.cfg.dataset.interactions, ctx.cfg.dataset.social, ctx.cfg.filter,
                            ctx.cfg.split, seed);
}

// Denoiser training plus the final smoothed scores for the full data.
std::pair<denoise::TrainResult, denoise::ConfidenceStore> denoise_stage(const Ctx& ctx,
                                                                        const Dataset& d,
                                                                        const SocialGraph& g,
                                                                        denoise::DenoiseConfig dcfg) {
  auto tr = denoise::train_denoiser(d, g, dcfg, ctx.log);
  auto store = denoise::rescore_store(tr.model, d, g, std::move(tr.store));
  return {std::move(tr), std::move(store)};
}

denoise::DenoiseConfig final_removal_cfg(const Ctx& ctx, const SocialGraph& g,
                                         denoise::DenoiseConfig dcfg) {
  if (ctx.cfg.experiment.target_overall_ratio > 0.0 && dcfg.adaptive)
    dcfg.base_ratio =
        denoise::calibrate_base_ratio(g, dcfg, ctx.cfg.experiment.target_overall_ratio);
  return dcfg;
}

struct CsvWriter {
  std::ofstream out;
  explicit CsvWriter(const fs::path& p, const std::string& header) : out(p) {
    check(out.good(), "cannot open ", p.string());
    out << header << '\n';
  }
  void row(const std::string& s) { out << s << '\n'; }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---- kinds --------------------------------------------------------------

void run_pipeline(const Ctx& ctx) {
  json rows = json::array();
  double mean_ctrl = 0.0, mean_gd = 0.0, mean_rule = 0.0;
  for (const uint64_t s : ctx.seeds()) {
    ctx.note(strcat("pipeline seed ", s));
    auto [d, g] = load_data(ctx, s);
    const uint64_t eval_seed = derive_seed(s, 0xE0);
    rec::RecConfig rcfg = ctx.cfg.recommender;
    rcfg.seed = s;

    auto control = train_and_eval(d, g, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);

    denoise::DenoiseConfig dcfg = ctx.cfg.denoiser;
    dcfg.seed = s;
    auto [tr, store] = denoise_stage(ctx, d, g, dcfg);
    const auto fcfg = final_removal_cfg(ctx, g, dcfg);
    denoise::DenoiseSummary summary;
    SocialGraph denoised = denoise::denoise_graph(g, store, fcfg, &summary);

    const fs::path seed_dir = ctx.out / ("seed_" + std::to_string(s));
    fs::create_directories(seed_dir);
    denoise::export_denoised_tsv(seed_dir / "denoised.tsv", denoised, store);
    write_json(seed_dir / "denoise_summary.json",
               json{{"overall_removal_ratio", summary.overall_removal_ratio},
                    {"edges_total", summary.edges_total},
                    {"edges_retained", summary.edges_retained},
                    {"per_provenance_retention",
                     json{{"observed", summary.observed_retention},
                          {"fake", summary.fake_retention}}},
                    {"config", app::config_echo(ctx.cfg)},
                    {"seed", s}});

    auto gd = train_and_eval(d, denoised, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);

    const double rr = ctx.cfg.experiment.rule_ratio >= 0.0 ? ctx.cfg.experiment.rule_ratio
                                                           : summary.overall_removal_ratio;
    SocialGraph rule_g = denoise::rule_based_denoise(d, g, rr);
    auto rb = train_and_eval(d, rule_g, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);

    rows.push_back(json{{"seed", s},
                        {"control", report_to_json(control)},
                        {"gdmsr", report_to_json(gd)},
                        {"rule_based", report_to_json(rb)},
                        {"overall_removal_ratio", summary.overall_removal_ratio},
                        {"rule_ratio", rr}});
    mean_ctrl += control.recall1;
    mean_gd += gd.recall1;
    mean_rule += rb.recall1;
  }
  const double n = static_cast<double>(ctx.seeds().size());
  write_metrics(ctx, json{{"per_seed", rows},
                          {"mean_recall1",
                           json{{"control", mean_ctrl / n},
                                {"gdmsr", mean_gd / n},
                                {"rule_based", mean_rule / n}}}});
}

void run_grid(const Ctx& ctx, bool over_scorers) {
  const uint64_t s = ctx.seeds().front();
  auto [d, g] = load_data(ctx, s);
  const uint64_t eval_seed = derive_seed(s, 0xE0);
  rec::RecConfig rcfg = ctx.cfg.recommender;
  rcfg.seed = s;

  CsvWriter csv(ctx.out / (over_scorers ? "scorer_ablation.csv" : "alpha_sweep.csv"),
                over_scorers ? "scorer,overall_removal,recall1,recall3,ndcg3"
                             : "alpha,overall_removal,recall1,recall3,ndcg3");
  json rows = json::array();
  const size_t n_points =
      over_scorers ? ctx.cfg.experiment.scorers.size() : ctx.cfg.experiment.alphas.size();
  for (size_t i = 0; i < n_points; ++i) {
    denoise::DenoiseConfig dcfg = ctx.cfg.denoiser;
    dcfg.seed = s;
    std::string label;
    if (over_scorers) {
      label = ctx.cfg.experiment.scorers[i];
      dcfg.scorer = denoise::scorer_from_name(label);
    } else {
      dcfg.alpha = ctx.cfg.experiment.alphas[i];
      label = fmt(dcfg.alpha);
    }
    ctx.note(strcat("grid point ", label));
    auto [tr, store] = denoise_stage(ctx, d, g, dcfg);
    denoise::DenoiseSummary summary;
    SocialGraph denoised =
        denoise::denoise_graph(g, store, final_removal_cfg(ctx, g, dcfg), &summary);
    auto rep = train_and_eval(d, denoised, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);
    csv.row(strcat(label, ",", fmt(summary.overall_removal_ratio), ",", fmt(rep.recall1), ",",
                   fmt(rep.recall3), ",", fmt(rep.ndcg3)));
    rows.push_back(json{{over_scorers ? "scorer" : "alpha", label},
                        {"overall_removal_ratio", summary.overall_removal_ratio},
                        {"report", report_to_json(rep)}});
  }
  write_metrics(ctx, json{{"points", rows}});
}

void run_ratio_sweep(const Ctx& ctx) {
  CsvWriter csv(ctx.out / "ratio_sweep.csv",
                "seed,ratio,arm,overall_removal,recall1,recall3,ndcg3");
  json rows = json::array();
  for (const uint64_t s : ctx.seeds()) {
    ctx.note(strcat("ratio sweep seed ", s));
    auto [d, g] = load_data(ctx, s);
    const uint64_t eval_seed = derive_seed(s, 0xE0);
    rec::RecConfig rcfg = ctx.cfg.recommender;
    rcfg.seed = s;
    denoise::DenoiseConfig dcfg = ctx.cfg.denoiser;
    dcfg.seed = s;
    auto [tr, store] = denoise_stage(ctx, d, g, dcfg);

    auto emit = [&](double ratio, const std::string& arm, double removal,
                    const eval::RankingReport& rep) {
      csv.row(strcat(s, ",", fmt(ratio), ",", arm, ",", fmt(removal), ",", fmt(rep.recall1), ",",
                     fmt(rep.recall3), ",", fmt(rep.ndcg3)));
      rows.push_back(json{{"seed", s},
                          {"ratio", ratio},
                          {"arm", arm},
                          {"overall_removal_ratio", removal},
                          {"report", report_to_json(rep)}});
    };

    for (const double ratio : ctx.cfg.experiment.ratios) {
      if (ratio == 0.0) {
        auto control = train_and_eval(d, g, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);
        emit(0.0, "adaptive", 0.0, control);
        emit(0.0, "uniform", 0.0, control);
        continue;
      }
      denoise::DenoiseConfig acfg = dcfg;
      acfg.adaptive = true;
      acfg.base_ratio = denoise::calibrate_base_ratio(g, acfg, ratio);
      denoise::DenoiseSummary asum;
      SocialGraph a_graph = denoise::denoise_graph(g, store, acfg, &asum);
      emit(ratio, "adaptive", asum.overall_removal_ratio,
           train_and_eval(d, a_graph, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log));

      denoise::DenoiseConfig ucfg = dcfg;
      ucfg.adaptive = false;
      ucfg.uniform_ratio = ratio;
      denoise::DenoiseSummary usum;
      SocialGraph u_graph = denoise::denoise_graph(g, store, ucfg, &usum);
      emit(ratio, "uniform", usum.overall_removal_ratio,
           train_and_eval(d, u_graph, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log));
    }
  }
  write_metrics(ctx, json{{"points", rows}});
}

denoise::DenoiseConfig variant_config(const std::string& name, denoise::DenoiseConfig base,
                                      double uniform_ratio) {
  if (name == "gdmsr") {
    base.adaptive = true;
    base.self_correcting = true;
  } else if (name == "wo-ad") {
    base.adaptive = false;
    base.self_correcting = true;
    base.uniform_ratio = uniform_ratio;
  } else if (name == "wo-ad-sc") {
    base.adaptive = false;
    base.self_correcting = false;
    base.uniform_ratio = uniform_ratio;
  } else {
    fail("unknown variant '", name, "'; expected gdmsr, wo-ad or wo-ad-sc");
  }
  return base;
}

void run_synthetic_noise(const Ctx& ctx) {
  const uint64_t s = ctx.seeds().front();
  auto [d, g_clean] = load_data(ctx, s);
  SocialGraph g = data::inject_fake_relations(g_clean, s);
  ctx.note(strcat("injected fakes: graph now has ", g.n_edges(), " directed edges"));

  denoise::DenoiseConfig base = ctx.cfg.denoiser;
  base.seed = s;
  // Uniform arms remove the same overall share the adaptive formula yields.
  denoise::DenoiseConfig probe = base;
  probe.adaptive = true;
  const double uniform_ratio = denoise::overall_removal_at(g, probe);

  CsvWriter csv(ctx.out / "retention_curve.csv",
                "variant,period,epoch,observed_retention,fake_retention,overall_removal");
  json results = json::object();
  for (const std::string& name : ctx.cfg.experiment.variants) {
    ctx.note(strcat("variant ", name));
    denoise::DenoiseConfig vcfg = variant_config(name, base, uniform_ratio);
    auto [tr, store] = denoise_stage(ctx, d, g, vcfg);
    denoise::DenoiseSummary summary;
    SocialGraph denoised = denoise::denoise_graph(g, store, vcfg, &summary);

    csv.row(strcat(name, ",0,0,", fmt(1.0), ",", fmt(1.0), ",", fmt(0.0)));
    for (const auto& st : tr.curriculum_log)
      csv.row(strcat(name, ",", st.period, ",", st.epoch, ",", fmt(st.observed_retention), ",",
                     fmt(st.fake_retention), ",", fmt(st.overall_removal)));
    csv.row(strcat(name, ",final,", base.epochs, ",", fmt(summary.observed_retention), ",",
                   fmt(summary.fake_retention), ",", fmt(summary.overall_removal_ratio)));

    const double fake_removal = 1.0 - summary.fake_retention;
    const double observed_removal = 1.0 - summary.observed_retention;
    results[name] = json{{"fake_removal", fake_removal},
                         {"observed_removal", observed_removal},
                         {"removal_gap",
                          observed_removal > 0.0 ? fake_removal / observed_removal : 0.0},
                         {"overall_removal_ratio", summary.overall_removal_ratio}};
  }
  write_metrics(ctx, results);
}

void run_zero_shot(const Ctx& ctx) {
  json rows = json::array();
  for (const uint64_t s : ctx.seeds()) {
    ctx.note(strcat("zero-shot seed ", s));
    auto [d, g] = load_data(ctx, s);
    const uint64_t eval_seed = derive_seed(s, 0xE0);
    rec::RecConfig rcfg = ctx.cfg.recommender;
    rcfg.seed = s;
    auto control = train_and_eval(d, g, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);

    denoise::DenoiseConfig dcfg = ctx.cfg.denoiser;
    dcfg.seed = s;
    if (dcfg.interaction_fraction >= 1.0) dcfg.interaction_fraction = 0.3;
    auto [tr, store] = denoise_stage(ctx, d, g, dcfg);  // rescores with the full data
    denoise::DenoiseSummary summary;
    SocialGraph denoised = denoise::denoise_graph(g, store, final_removal_cfg(ctx, g, dcfg), &summary);
    auto zs = train_and_eval(d, denoised, rcfg, ctx.cfg.eval.negatives, eval_seed, ctx.log);

    rows.push_back(json{{"seed", s},
                        {"control", report_to_json(control)},
                        {"zero_shot", report_to_json(zs)},
                        {"interaction_fraction", dcfg.interaction_fraction},
                        {"overall_removal_ratio", summary.overall_removal_ratio}});
  }
  write_metrics(ctx, json{{"per_seed", rows}});
}

void run_bench(const Ctx& ctx) {
  const auto& x = ctx.cfg.experiment;
  SocialGraph g;
  if (x.bench_users > 0) {
    g = random_social_graph(x.bench_users, x.bench_avg_degree, ctx.seed);
  } else {
    auto [d, loaded] = load_data(ctx, ctx.seed);
    g = std::move(loaded);
  }
  const int hops = std::max(1, ctx.cfg.denoiser.hops);
  auto reports = bench::bench_inference(g, ctx.cfg.denoiser.dim, hops, x.bench_records, x.ratios,
                                        x.bench_repetitions, ctx.seed);
  CsvWriter csv(ctx.out / "bench.csv", "ratio,active_edges,median_s");
  json rows = json::array();
  for (const auto& r : reports) {
    csv.row(strcat(fmt(r.ratio), ",", r.active_edges, ",", fmt(r.median_s)));
    rows.push_back(json{{"ratio", r.ratio},
                        {"active_edges", r.active_edges},
                        {"median_s", r.median_s},
                        {"times_s", r.times_s}});
  }
  write_metrics(ctx, json{{"bench", rows}});
}

}  // namespace

void run_experiment(const app::AppConfig& cfg, uint64_t seed, const fs::path& out_dir,
                    std::ostream* log) {
  fs::create_directories(out_dir);
  Ctx ctx{cfg, seed, out_dir, log};
  const std::string& kind = cfg.experiment.kind;
  if (kind == "pipeline")
    run_pipeline(ctx);
  else if (kind == "alpha_sweep")
    run_grid(ctx, false);
  else if (kind == "scorer_ablation")
    run_grid(ctx, true);
  else if (kind == "ratio_sweep")
    run_ratio_sweep(ctx);
  else if (kind == "synthetic_noise")
    run_synthetic_noise(ctx);
  else if (kind == "zero_shot")
    run_zero_shot(ctx);
  else if (kind == "bench")
    run_bench(ctx);
  else
    fail("unknown experiment kind '", kind,
         "'; valid kinds: pipeline, alpha_sweep, scorer_ablation, ratio_sweep, synthetic_noise, "
         "zero_shot, bench");
}

}  // namespace gdmsr::xp

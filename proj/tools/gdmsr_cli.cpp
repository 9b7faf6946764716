#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gdmsr/bench.hpp"
#include "gdmsr/checkpoint.hpp"
#include "gdmsr/config.hpp"
#include "gdmsr/dataset.hpp"
#include "gdmsr/denoiser.hpp"
#include "gdmsr/experiment.hpp"
#include "gdmsr/prepared_io.hpp"
#include "gdmsr/ranking.hpp"
#include "gdmsr/recommender.hpp"

namespace fs = std::filesystem;
using namespace gdmsr;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  uint64_t seed = 42;
  std::string out = "out";
  bool quiet = false;

  void attach(CLI::App* cmd, bool config_required = true) {
    auto* opt = cmd->add_option("--config", config_path, "JSON configuration file");
    if (config_required) opt->required();
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--out", out, "output directory");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  }
  app::AppConfig load() const {
    return config_path.empty() ? app::AppConfig{} : app::load_config(config_path);
  }
  std::ostream* log() const { return quiet ? nullptr : &std::cerr; }
};

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p);
  check(out.good(), "cannot open ", p.string());
  out << j.dump(2) << '\n';
}

void write_metrics_file(const fs::path& p, const app::AppConfig& cfg, uint64_t seed,
                        const json& metrics) {
  write_json_file(p, json{{"metrics", metrics},
                          {"config", app::config_echo(cfg)},
                          {"seed", seed},
                          {"build", app::kBuildId}});
}

data::SocialGraph graph_for(const app::AppConfig&, const data::Dataset& d,
                            const data::SocialGraph& g, const std::string& graph_path) {
  if (graph_path.empty()) return g;
  return denoise::load_denoised_tsv(graph_path, d.n_users);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-guided social graph denoising for recommendation"};
  app.require_subcommand(1);

  Common prep, inject, traind, denoisec, trainr, evalc, benchc, expc;
  std::string interactions_override, social_override;
  std::string prepared_dir, store_path, checkpoint_path, graph_path;
  bool rescore = false;

  auto* c_prepare = app.add_subcommand("prepare", "ingest raw TSVs into a prepared directory");
  prep.attach(c_prepare);
  c_prepare->add_option("--interactions", interactions_override, "override dataset.interactions");
  c_prepare->add_option("--social", social_override, "override dataset.social");

  auto* c_inject = app.add_subcommand("inject-noise", "add fake relations to a prepared graph");
  inject.attach(c_inject, /*config_required=*/false);
  c_inject->add_option("--prepared", prepared_dir, "prepared dataset directory")->required();

  auto* c_traind = app.add_subcommand("train-denoiser", "train the relation-confidence model");
  traind.attach(c_traind);
  c_traind->add_option("--prepared", prepared_dir, "prepared dataset directory")->required();

  auto* c_denoise = app.add_subcommand("denoise", "apply final removal from a confidence store");
  denoisec.attach(c_denoise);
  c_denoise->add_option("--prepared", prepared_dir, "prepared dataset directory")->required();
  c_denoise->add_option("--store", store_path, "confidence store (store.tsv)")->required();
  c_denoise->add_option("--checkpoint", checkpoint_path, "denoiser checkpoint (for --rescore)");
  c_denoise->add_flag("--rescore", rescore, "rescore all edges with current data before removal");

  auto* c_trainr = app.add_subcommand("train-rec", "train the downstream recommender");
  trainr.attach(c_trainr);
  c_trainr->add_option("--prepared", prepared_dir, "prepared dataset directory")->required();
  c_trainr->add_option("--graph", graph_path, "denoised graph TSV (default: original graph)");

  auto* c_eval = app.add_subcommand("evaluate", "rank the test split and report metrics");
  evalc.attach(c_eval);
  c_eval->add_option("--prepared", prepared_dir, "prepared dataset directory")->required();
  c_eval->add_option("--checkpoint", checkpoint_path, "recommender checkpoint")->required();
  c_eval->add_option("--graph", graph_path, "denoised graph TSV (default: original graph)");

  auto* c_bench = app.add_subcommand("bench", "time social-side propagation at removal ratios");
  benchc.attach(c_bench);

  auto* c_exp = app.add_subcommand("experiment", "run a configured experiment end to end");
  expc.attach(c_exp);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_prepare) {
      app::AppConfig cfg = prep.load();
      if (!interactions_override.empty()) cfg.dataset.interactions = interactions_override;
      if (!social_override.empty()) cfg.dataset.social = social_override;
      check(!cfg.dataset.interactions.empty() && !cfg.dataset.social.empty(),
            "prepare: need dataset.interactions and dataset.social (config or flags)");
      auto [d, g] = data::load_dataset(cfg.dataset.interactions, cfg.dataset.social, cfg.filter,
                                       cfg.split, prep.seed);
      fs::create_directories(prep.out);
      io::save_prepared(prep.out, d, g);
      data::write_co_interaction_stats(fs::path(prep.out) / "stats.csv",
                                       data::co_interaction_stats(d, g));
      if (!prep.quiet)
        std::cerr << "prepared " << d.n_users << " users, " << d.n_items << " items, "
                  << d.train.size() << "/" << d.valid.size() << "/" << d.test.size()
                  << " train/valid/test, " << g.n_edges() << " directed social edges\n";
    } else if (*c_inject) {
      auto [d, g] = io::load_prepared(prepared_dir);
      data::SocialGraph noisy = data::inject_fake_relations(g, inject.seed);
      fs::create_directories(inject.out);
      io::save_prepared(inject.out, d, noisy);
      if (!inject.quiet)
        std::cerr << "injected " << (noisy.n_edges() - g.n_edges()) / 2
                  << " fake undirected relations\n";
    } else if (*c_traind) {
      app::AppConfig cfg = traind.load();
      auto [d, g] = io::load_prepared(prepared_dir);
      denoise::DenoiseConfig dcfg = cfg.denoiser;
      dcfg.seed = traind.seed;
      auto tr = denoise::train_denoiser(d, g, dcfg, traind.log());
      auto store = denoise::rescore_store(tr.model, d, g, std::move(tr.store));
      fs::create_directories(traind.out);
      io::save_checkpoint(fs::path(traind.out) / "denoiser.ckpt", tr.model.params);
      io::save_store(fs::path(traind.out) / "store.tsv", g, store);
      {
        std::ofstream curve(fs::path(traind.out) / "curriculum_log.csv");
        curve << "period,epoch,observed_retention,fake_retention,overall_removal\n";
        for (const auto& st : tr.curriculum_log)
          curve << st.period << ',' << st.epoch << ',' << st.observed_retention << ','
                << st.fake_retention << ',' << st.overall_removal << '\n';
        std::ofstream loss(fs::path(traind.out) / "loss.csv");
        loss << "epoch,loss\n";
        for (size_t e = 0; e < tr.epoch_loss.size(); ++e)
          loss << e + 1 << ',' << tr.epoch_loss[e] << '\n';
      }
      write_metrics_file(fs::path(traind.out) / "train_denoiser.json", cfg, traind.seed,
                         json{{"epochs", dcfg.epochs},
                              {"final_loss",
                               tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back()}});
    } else if (*c_denoise) {
      app::AppConfig cfg = denoisec.load();
      auto [d, g] = io::load_prepared(prepared_dir);
      denoise::DenoiseConfig dcfg = cfg.denoiser;
      dcfg.seed = denoisec.seed;
      auto store = io::load_store(store_path, g);
      if (rescore) {
        check(!checkpoint_path.empty(), "denoise --rescore needs --checkpoint");
        denoise::DenoiserModel model{io::load_checkpoint(checkpoint_path), dcfg};
        const auto raw = denoise::score_all_edges(model, d, g);
        denoise::smooth_scores(store, raw, dcfg.beta, store.last_period() + 1);
      }
      if (cfg.experiment.target_overall_ratio > 0.0 && dcfg.adaptive)
        dcfg.base_ratio =
            denoise::calibrate_base_ratio(g, dcfg, cfg.experiment.target_overall_ratio);
      denoise::DenoiseSummary summary;
      data::SocialGraph denoised = denoise::denoise_graph(g, store, dcfg, &summary);
      fs::create_directories(denoisec.out);
      denoise::export_denoised_tsv(fs::path(denoisec.out) / "denoised.tsv", denoised, store);
      write_json_file(fs::path(denoisec.out) / "denoise_summary.json",
                      json{{"overall_removal_ratio", summary.overall_removal_ratio},
                           {"edges_total", summary.edges_total},
                           {"edges_retained", summary.edges_retained},
                           {"per_provenance_retention",
                            json{{"observed", summary.observed_retention},
                                 {"fake", summary.fake_retention}}},
                           {"config", app::config_echo(cfg)},
                           {"seed", denoisec.seed}});
      if (!denoisec.quiet)
        std::cerr << "removed " << summary.edges_total - summary.edges_retained << " of "
                  << summary.edges_total << " directed edges ("
                  << summary.overall_removal_ratio * 100.0 << "%)\n";
    } else if (*c_trainr) {
      app::AppConfig cfg = trainr.load();
      auto [d, g] = io::load_prepared(prepared_dir);
      data::SocialGraph train_graph = graph_for(cfg, d, g, graph_path);
      rec::RecConfig rcfg = cfg.recommender;
      rcfg.seed = trainr.seed;
      auto model = rec::train_recommender(d, train_graph, rcfg, trainr.log());
      fs::create_directories(trainr.out);
      io::save_checkpoint(fs::path(trainr.out) / "recommender.ckpt", model.params);
      write_metrics_file(fs::path(trainr.out) / "train_rec.json", cfg, trainr.seed,
                         json{{"best_valid_recall1", model.best_valid_recall1},
                              {"stopped_after_epoch", model.stopped_after_epoch}});
    } else if (*c_eval) {
      app::AppConfig cfg = evalc.load();
      auto [d, g] = io::load_prepared(prepared_dir);
      data::SocialGraph eval_graph = graph_for(cfg, d, g, graph_path);
      num::ParamSet params = io::load_checkpoint(checkpoint_path);
      const auto& e1 = params.at("user_emb");
      const auto& e2 = params.at("item_emb");
      gcn::DenseStack stack = gcn::gcn_forward_dense(
          {e1.shape[0], e1.shape[1], e1.value}, {e2.shape[0], e2.shape[1], e2.value},
          eval_graph.active_csr(), d.user_to_items, d.item_to_users, cfg.recommender.hops);
      auto rep = eval::evaluate_ranking(stack, d, eval::SplitSel::kTest, cfg.eval.negatives,
                                        derive_seed(evalc.seed, 0xE0));
      fs::create_directories(evalc.out);
      write_metrics_file(fs::path(evalc.out) / "metrics.json", cfg, evalc.seed,
                         xp::report_to_json(rep));
      std::cout << "recall@1 " << rep.recall1 << " recall@3 " << rep.recall3 << " ndcg@3 "
                << rep.ndcg3 << " over " << rep.n_users << " users\n";
    } else if (*c_bench) {
      app::AppConfig cfg = benchc.load();
      cfg.experiment.kind = "bench";
      fs::create_directories(benchc.out);
      xp::run_experiment(cfg, benchc.seed, benchc.out, benchc.log());
    } else if (*c_exp) {
      app::AppConfig cfg = expc.load();
      fs::create_directories(expc.out);
      xp::run_experiment(cfg, expc.seed, expc.out, expc.log());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// Command-line front end over the pipeline stages. Every stage reads its
// inputs from the run directory, so stages can be re-run individually.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pter/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::string city;
  std::string provider;
  std::string k_list;
  std::uint64_t seed = 0;
  std::size_t top_n = 0;
  bool has_seed = false;
  bool has_top_n = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "configuration file (key=value lines)");
  cmd->add_option("--out", flags.out, "run directory");
  cmd->add_option("--city", flags.city, "city to select from a multi-city file");
  cmd->add_option("--provider", flags.provider, "embedding provider: surrogate or precomputed");
  cmd->add_option("--k", flags.k_list, "comma-separated centroid counts");
  cmd->add_option("--seed", flags.seed, "run seed")->each([&](const std::string&) {
    flags.has_seed = true;
  });
  cmd->add_option("--top-n", flags.top_n, "predicted context size")->each([&](const std::string&) {
    flags.has_top_n = true;
  });
}

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* what) {
  std::vector<std::size_t> values;
  std::stringstream ss(csv);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    if (piece.empty()) continue;
    try {
      values.push_back(std::stoul(piece));
    } catch (const std::exception&) {
      throw pter::ConfigError(std::string(what) + " has a bad value '" + piece + "'");
    }
  }
  if (values.empty()) throw pter::ConfigError(std::string("empty list for ") + what);
  return values;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    if (piece.empty()) continue;
    try {
      values.push_back(std::stod(piece));
    } catch (const std::exception&) {
      throw pter::ConfigError(std::string(what) + " has a bad value '" + piece + "'");
    }
  }
  if (values.empty()) throw pter::ConfigError(std::string("empty list for ") + what);
  return values;
}

pter::PipelineConfig make_config(const CommonFlags& flags) {
  pter::PipelineConfig cfg;
  if (!flags.config.empty()) cfg = pter::PipelineConfig::from_file(flags.config);
  if (!flags.out.empty()) cfg.out = flags.out;
  if (!flags.city.empty()) cfg.city = flags.city;
  if (!flags.provider.empty()) cfg.provider = flags.provider;
  if (flags.has_seed) cfg.seed = flags.seed;
  if (flags.has_top_n) cfg.top_n = flags.top_n;
  if (!flags.k_list.empty()) cfg.k_list = parse_size_list(flags.k_list, "--k");
  return cfg;
}

pter::RunPaths run_paths(const pter::PipelineConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  return pter::RunPaths{cfg.out};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pter: rank and select review texts that explain (user, item) links"};
  app.require_subcommand(1);

  CommonFlags flags;
  int rc = 0;

  auto guarded = [&](auto&& body) {
    return [&, body]() {
      try {
        body();
      } catch (const pter::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        rc = 2;
      } catch (const pter::StageError& e) {
        std::cerr << e.what() << '\n';
        rc = 3;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        rc = 3;
      }
    };
  };

  auto* ingest = app.add_subcommand("ingest", "load a dataset file and write stats");
  add_common(ingest, flags);
  ingest->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    pter::stage_ingest(cfg, run_paths(cfg));
  }));

  auto* label = app.add_subcommand("label", "build targets, partitions and oversampling");
  add_common(label, flags);
  label->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    auto r = pter::stage_label(cfg, run_paths(cfg));
    std::cout << "rows=" << r.rows << " discarded=" << r.discarded
              << (r.oversample_skipped ? " oversample=skipped" : "") << '\n';
  }));

  auto* train_cmd = app.add_subcommand("train", "train the ranking head");
  add_common(train_cmd, flags);
  train_cmd->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    auto hist = pter::stage_train(cfg, run_paths(cfg));
    std::cout << "epochs=" << hist.stopped_epoch << " best=" << hist.best_epoch
              << (hist.diverged ? " diverged" : "") << '\n';
  }));

  auto* rank = app.add_subcommand("rank", "rank validation reviews per (user, item) pair");
  add_common(rank, flags);
  rank->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    pter::stage_rank(cfg, run_paths(cfg));
  }));

  auto* explain = app.add_subcommand("explain", "select explanation reviews from the rankings");
  add_common(explain, flags);
  explain->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    pter::stage_explain(cfg, run_paths(cfg));
  }));

  auto* eval = app.add_subcommand("eval", "classification metrics on the test partition");
  add_common(eval, flags);
  bool at10 = false;
  std::size_t runs = 5;
  eval->add_flag("--at10", at10, "also run the global-level explanation ranking task");
  eval->add_option("--runs", runs, "retraining runs for --at10");
  eval->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    auto paths = run_paths(cfg);
    auto report = pter::stage_eval(cfg, paths);
    if (report.auc_roc) std::cout << "auc_roc=" << *report.auc_roc << '\n';
    if (at10) {
      auto r = pter::global_ranking_eval(cfg, paths, runs);
      std::cout << "ndcg@10=" << r.model.ndcg.mean << " random=" << r.random_baseline.ndcg.mean
                << '\n';
    }
  }));

  auto* ccr = app.add_subcommand("ccr", "clustering evaluation against the random adversary");
  add_common(ccr, flags);
  ccr->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    for (const auto& r : pter::stage_ccr(cfg, run_paths(cfg))) {
      std::cout << "k=" << r.k;
      if (r.empty)
        std::cout << " empty\n";
      else
        std::cout << " ccr_ap=" << r.ccr_ap << " ccr_ar=" << r.ccr_ar << " delta=" << r.delta
                  << '\n';
    }
  }));

  auto* report_cmd = app.add_subcommand("report", "write the run manifest");
  add_common(report_cmd, flags);
  report_cmd->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    pter::stage_report(cfg, run_paths(cfg));
  }));

  auto* run = app.add_subcommand("run", "full pipeline: ingest through report");
  add_common(run, flags);
  run->callback(guarded([&] {
    auto cfg = make_config(flags);
    auto result = pter::run_pipeline(cfg);
    std::cout << "run directory: " << result.paths.dir << '\n';
    if (result.metrics.auc_roc) std::cout << "auc_roc=" << *result.metrics.auc_roc << '\n';
  }));

  auto* sweep = app.add_subcommand("sweep-users", "pipeline sweep over the active-user counts");
  add_common(sweep, flags);
  std::string sweep_values = "25,50,100,200";
  std::size_t sweep_jobs = 0;
  sweep->add_option("--values", sweep_values, "comma-separated active-user counts");
  sweep->add_option("--jobs", sweep_jobs, "parallel pipeline workers");
  sweep->callback(guarded([&] {
    auto cfg = make_config(flags);
    if (sweep_jobs > 0) cfg.jobs = sweep_jobs;
    cfg.validate();
    auto rows = pter::sweep_active_users(cfg, parse_size_list(sweep_values, "--values"));
    for (const auto& row : rows)
      std::cout << "active_users=" << row.active_users
                << (row.failed ? " error: " + row.error : " ok") << '\n';
  }));

  auto* density = app.add_subcommand("density", "review/user density vs performance");
  add_common(density, flags);
  std::string ratio_values = "1.6,2.1";
  std::size_t d_users = 100, d_items = 40, d_groups = 4, d_vocab = 40;
  density->add_option("--ratios", ratio_values, "comma-separated review/user ratios");
  density->add_option("--users", d_users, "users per synthetic dataset");
  density->add_option("--items", d_items, "items per synthetic dataset");
  density->add_option("--groups", d_groups, "taste groups");
  density->add_option("--vocab", d_vocab, "vocabulary size per group");
  density->callback(guarded([&] {
    auto cfg = make_config(flags);
    cfg.validate();
    std::vector<pter::SynthSpec> specs;
    for (double ratio : parse_double_list(ratio_values, "--ratios")) {
      pter::SynthSpec spec;
      spec.n_users = d_users;
      spec.n_items = d_items;
      spec.n_groups = d_groups;
      spec.group_vocab = d_vocab;
      spec.target_ratio = ratio;
      spec.seed = cfg.seed;
      specs.push_back(spec);
    }
    for (const auto& row : pter::density_experiment(cfg, specs))
      std::cout << "ratio=" << row.target_ratio
                << (row.failed ? " error: " + row.error
                               : " f_measure=" + std::to_string(row.f_measure))
                << '\n';
  }));

  auto* synth = app.add_subcommand("synth", "generate a planted-preference dataset");
  add_common(synth, flags);
  pter::SynthSpec spec;
  synth->add_option("--users", spec.n_users, "number of users");
  synth->add_option("--items", spec.n_items, "number of items");
  synth->add_option("--groups", spec.n_groups, "taste groups");
  synth->add_option("--vocab", spec.group_vocab, "vocabulary size per group");
  synth->add_option("--ratio", spec.target_ratio, "target review/user ratio");
  synth->callback(guarded([&] {
    auto cfg = make_config(flags);
    spec.seed = cfg.seed;
    std::filesystem::create_directories(cfg.out);
    auto data = pter::generate_synthetic(spec);
    pter::write_tripadvisor_tsv(data, cfg.out + "/synthetic.tsv");
    auto res = pter::write_synth_resources(spec, cfg.out);
    std::ofstream config_out(cfg.out + "/synthetic.conf", std::ios::binary);
    config_out << "dataset=" << cfg.out << "/synthetic.tsv\n"
               << "format=tripadvisor-tsv\n"
               << "stopwords=" << res.stopwords_path << '\n'
               << "lexicon=" << res.lexicon_path << '\n'
               << "lemmas=" << res.lemmas_path << '\n'
               << "seed=" << cfg.seed << '\n'
               << "out=" << cfg.out << "/run\n";
    std::cout << "wrote " << cfg.out << "/synthetic.tsv (" << data.size() << " reviews)\n";
  }));

  CLI11_PARSE(app, argc, argv);
  return rc;
}

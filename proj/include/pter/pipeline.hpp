#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pter/dyadic.hpp"
#include "pter/embed.hpp"
#include "pter/errors.hpp"
#include "pter/eval.hpp"
#include "pter/explain.hpp"
#include "pter/head.hpp"
#include "pter/labeling.hpp"
#include "pter/report.hpp"
#include "pter/rng.hpp"
#include "pter/synth.hpp"

namespace pter {

// Flat key=value configuration; the defaults reproduce the reference
// hyper-parameter table (batch 16, lr 3e-5, keep-head 512, 100 active users,
// ML-ROS 20%, positive weight 2, dropout 0.1, L2 0.001, delta 0.01,
// patience 3).
struct PipelineConfig {
  std::string dataset;
  std::string format = "tripadvisor-tsv";
  std::string city;
  std::size_t active_users = 100;
  double mlros_pct = 20.0;
  double mlros_trigger = 1.5;
  PreprocessConfig pre;  // max_tokens = 512, keep-head
  HeadConfig head;
  std::size_t top_n = 50;
  std::size_t keyword_k = 3;
  std::size_t ban_top = 20;
  std::vector<std::size_t> k_list = {3, 5, 7, 9};
  std::uint64_t seed = 0;
  std::string provider = "surrogate";
  int embed_width = 16;  // surrogate layer width
  std::string provider_path;
  std::string stopwords, lexicon, lemmas;
  std::string out = "run";
  bool include_title = true;
  double split_train = 0.70, split_val = 0.15, split_test = 0.15;
  std::size_t jobs = 1;

  void validate() const {
    if (provider != "surrogate" && provider != "precomputed")
      throw ConfigError("provider must be 'surrogate' or 'precomputed', got '" + provider + "'");
    if (provider == "precomputed" && provider_path.empty())
      throw ConfigError("provider 'precomputed' requires provider_path");
    if (provider == "surrogate" && embed_width < 1)
      throw ConfigError("embed_width must be >= 1");
    if (active_users < 1) throw ConfigError("active_users must be >= 1");
    if (mlros_pct < 0.0) throw ConfigError("mlros_pct must be >= 0");
    if (top_n < 1 || keyword_k < 1) throw ConfigError("top_n and keyword_k must be >= 1");
    if (k_list.empty()) throw ConfigError("k_list must not be empty");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    parse_format(format);
    pre.validate();
    head.validate();
  }

  static PipelineConfig from_file(const std::string& path);
  std::map<std::string, std::string> to_key_values() const;
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
inline T parse_number(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  T out{};
  ss >> out;
  if (ss.fail() || !ss.eof()) throw ConfigError("key '" + key + "' has a bad value '" + v + "'");
  return out;
}

}  // namespace detail

inline PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + path);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  PipelineConfig cfg;
  auto preset = kv.find("preset");
  if (preset != kv.end()) {
    if (preset->second == "extra")
      cfg.head = HeadConfig::extra_preset();
    else if (preset->second != "default")
      throw ConfigError("unknown preset '" + preset->second + "'");
    kv.erase(preset);
  }
  for (const auto& [key, value] : kv) {
    if (key == "dataset") cfg.dataset = value;
    else if (key == "format") cfg.format = value;
    else if (key == "city") cfg.city = value;
    else if (key == "active_users") cfg.active_users = detail::parse_number<std::size_t>(value, key);
    else if (key == "mlros_pct") cfg.mlros_pct = detail::parse_number<double>(value, key);
    else if (key == "mlros_trigger") cfg.mlros_trigger = detail::parse_number<double>(value, key);
    else if (key == "input_length") cfg.pre.max_tokens = detail::parse_number<std::size_t>(value, key);
    else if (key == "batch_size") cfg.head.batch_size = detail::parse_number<int>(value, key);
    else if (key == "learning_rate") cfg.head.learning_rate = detail::parse_number<double>(value, key);
    else if (key == "positive_weight") cfg.head.positive_weight = detail::parse_number<double>(value, key);
    else if (key == "dropout_rate") cfg.head.dropout_rate = detail::parse_number<double>(value, key);
    else if (key == "l2_weight") cfg.head.l2_weight = detail::parse_number<double>(value, key);
    else if (key == "val_delta") cfg.head.early_stop_delta = detail::parse_number<double>(value, key);
    else if (key == "patience") cfg.head.patience = detail::parse_number<int>(value, key);
    else if (key == "threshold") cfg.head.threshold = detail::parse_number<double>(value, key);
    else if (key == "hidden_size") cfg.head.hidden_size = detail::parse_number<int>(value, key);
    else if (key == "dense_size") cfg.head.dense_size = detail::parse_number<int>(value, key);
    else if (key == "max_epochs") cfg.head.max_epochs = detail::parse_number<int>(value, key);
    else if (key == "early_stopping") cfg.head.early_stopping = detail::parse_bool(value, key);
    else if (key == "top_n") cfg.top_n = detail::parse_number<std::size_t>(value, key);
    else if (key == "keyword_k") cfg.keyword_k = detail::parse_number<std::size_t>(value, key);
    else if (key == "ban_top") cfg.ban_top = detail::parse_number<std::size_t>(value, key);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(value, key);
    else if (key == "provider") cfg.provider = value;
    else if (key == "embed_width") cfg.embed_width = detail::parse_number<int>(value, key);
    else if (key == "provider_path") cfg.provider_path = value;
    else if (key == "stopwords") cfg.stopwords = value;
    else if (key == "lexicon") cfg.lexicon = value;
    else if (key == "lemmas") cfg.lemmas = value;
    else if (key == "out") cfg.out = value;
    else if (key == "include_title") cfg.include_title = detail::parse_bool(value, key);
    else if (key == "split_train") cfg.split_train = detail::parse_number<double>(value, key);
    else if (key == "split_val") cfg.split_val = detail::parse_number<double>(value, key);
    else if (key == "split_test") cfg.split_test = detail::parse_number<double>(value, key);
    else if (key == "jobs") cfg.jobs = detail::parse_number<std::size_t>(value, key);
    else if (key == "k_list") {
      cfg.k_list.clear();
      std::stringstream ss(value);
      std::string piece;
      while (std::getline(ss, piece, ','))
        if (!piece.empty()) cfg.k_list.push_back(detail::parse_number<std::size_t>(piece, key));
    } else {
      throw ConfigError("unknown config key '" + key + "' in " + path);
    }
  }
  return cfg;
}

inline std::map<std::string, std::string> PipelineConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  auto num = [](auto v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  };
  kv["dataset"] = dataset;
  kv["format"] = format;
  kv["city"] = city;
  kv["active_users"] = num(active_users);
  kv["mlros_pct"] = num(mlros_pct);
  kv["mlros_trigger"] = num(mlros_trigger);
  kv["input_length"] = num(pre.max_tokens);
  kv["batch_size"] = num(head.batch_size);
  kv["learning_rate"] = num(head.learning_rate);
  kv["positive_weight"] = num(head.positive_weight);
  kv["dropout_rate"] = num(head.dropout_rate);
  kv["l2_weight"] = num(head.l2_weight);
  kv["val_delta"] = num(head.early_stop_delta);
  kv["patience"] = num(head.patience);
  kv["threshold"] = num(head.threshold);
  kv["hidden_size"] = num(head.hidden_size);
  kv["dense_size"] = num(head.dense_size);
  kv["max_epochs"] = num(head.max_epochs);
  kv["early_stopping"] = head.early_stopping ? "true" : "false";
  kv["top_n"] = num(top_n);
  kv["keyword_k"] = num(keyword_k);
  kv["ban_top"] = num(ban_top);
  kv["seed"] = num(seed);
  kv["provider"] = provider;
  kv["embed_width"] = num(embed_width);
  kv["provider_path"] = provider_path;
  kv["stopwords"] = stopwords;
  kv["lexicon"] = lexicon;
  kv["lemmas"] = lemmas;
  kv["out"] = out;
  kv["include_title"] = include_title ? "true" : "false";
  kv["split_train"] = num(split_train);
  kv["split_val"] = num(split_val);
  kv["split_test"] = num(split_test);
  kv["jobs"] = num(jobs);
  std::string ks;
  for (std::size_t i = 0; i < k_list.size(); ++i) {
    if (i) ks += ',';
    ks += num(k_list[i]);
  }
  kv["k_list"] = ks;
  return kv;
}

class StageError : public std::runtime_error {
public:
  StageError(const std::string& stage, const std::string& msg)
      : std::runtime_error("stage '" + stage + "' failed: " + msg), stage_(stage) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

struct RunPaths {
  std::string dir;

  std::string dataset_tsv() const { return dir + "/dataset.tsv"; }
  std::string stats_csv() const { return dir + "/stats.csv"; }
  std::string active_users_txt() const { return dir + "/active_users.txt"; }
  std::string targets_txt() const { return dir + "/targets.txt"; }
  std::string split_file(const char* name) const { return dir + "/split_" + name + ".txt"; }
  std::string train_rows_txt() const { return dir + "/train_rows.txt"; }
  std::string head_params_bin() const { return dir + "/head_params.bin"; }
  std::string history_csv() const { return dir + "/history.csv"; }
  std::string rankings_tsv() const { return dir + "/rankings.tsv"; }
  std::string explanations_tsv() const { return dir + "/explanations.tsv"; }
  std::string metrics_csv() const { return dir + "/metrics.csv"; }
  std::string ccr_csv() const { return dir + "/ccr.csv"; }
  std::string clusters_svg(std::size_t k) const {
    return dir + "/clusters_k" + std::to_string(k) + ".svg";
  }
  std::string rank_metrics_csv() const { return dir + "/rank_metrics.csv"; }
  std::string manifest_json() const { return dir + "/manifest.json"; }
};

namespace detail {

inline std::unique_ptr<EmbeddingProvider> make_provider(const PipelineConfig& cfg) {
  if (cfg.provider == "precomputed") return load_precomputed_provider(cfg.provider_path);
  return hashed_surrogate_provider(fnv1a64_mix(0x454D4245ULL, cfg.seed), cfg.embed_width);
}

inline DyadicDataset load_run_dataset(const RunPaths& paths) {
  return ingest_reviews(paths.dataset_tsv(), DatasetFormat::tripadvisor_tsv);
}

inline std::vector<ReviewId> read_id_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::vector<ReviewId> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (!in) break;
  }
  return h;
}

// Probability vectors for a set of reviews, each predicted once and shared
// across all user columns.
inline std::map<ReviewId, Eigen::VectorXd> predict_reviews(
    const HeadParams& params, const EmbeddingProvider& provider, const PreprocessConfig& pre,
    const DyadicDataset& data, const std::vector<ReviewId>& ids, bool include_title) {
  std::map<ReviewId, Eigen::VectorXd> probs;
  for (const ReviewId& id : ids) {
    const Interaction& x = data.review(id);
    probs.emplace(id, predict(params, provider, pre, id, model_input_text(x, include_title)));
  }
  return probs;
}

// Reviews of the slice grouped by item, deterministically ordered.
inline std::map<ItemId, std::vector<ReviewId>> slice_by_item(const DyadicDataset& data,
                                                             const std::vector<ReviewId>& ids) {
  std::map<ItemId, std::vector<ReviewId>> by_item;
  for (const ReviewId& id : ids) by_item[data.review(id).item].push_back(id);
  for (auto& [item, list] : by_item) std::sort(list.begin(), list.end());
  return by_item;
}

// (user, item) pairs where an active user authored >= 1 slice review,
// mapped to those authored review ids.
inline std::map<std::pair<UserId, ItemId>, std::vector<ReviewId>> authored_pairs(
    const DyadicDataset& data, const ActiveUserSet& users, const std::vector<ReviewId>& ids) {
  std::map<std::pair<UserId, ItemId>, std::vector<ReviewId>> pairs;
  for (const ReviewId& id : ids) {
    const Interaction& x = data.review(id);
    if (users.contains(x.user)) pairs[{x.user, x.item}].push_back(id);
  }
  for (auto& [key, list] : pairs) std::sort(list.begin(), list.end());
  return pairs;
}

inline Ranking rank_slice_for_user(const UserId& user, std::size_t column, const ItemId& item,
                                   const std::vector<ReviewId>& candidates,
                                   const std::map<ReviewId, Eigen::VectorXd>& probs) {
  std::vector<RankEntry> entries;
  entries.reserve(candidates.size());
  for (const ReviewId& id : candidates)
    entries.push_back({id, probs.at(id)(static_cast<Eigen::Index>(column))});
  return make_ranking(user, item, std::move(entries));
}

}  // namespace detail

// --- stages -------------------------------------------------------------------

// Reads the raw file, normalises it into the run directory and writes the
// descriptive statistics.
inline DyadicDataset stage_ingest(const PipelineConfig& cfg, const RunPaths& paths) {
  DyadicDataset data = ingest_reviews(cfg.dataset, parse_format(cfg.format), cfg.city);
  write_tripadvisor_tsv(data, paths.dataset_tsv());
  StatsReport stats = dataset_stats(data);
  std::ofstream out(paths.stats_csv(), std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + paths.stats_csv());
  out << "key,value\n";
  out << "total_reviews," << stats.total_reviews << '\n';
  out << "positive_reviews," << stats.positive_reviews << '\n';
  out << "negative_reviews," << stats.negative_reviews << '\n';
  out << "distinct_positive_users," << stats.distinct_positive_users << '\n';
  out << "distinct_items," << stats.distinct_items << '\n';
  out << "discarded_rows," << data.discarded_rows() << '\n';
  out << "review_user_ratio,"
      << (stats.ratio_defined ? detail::fmt_double(stats.review_user_ratio) : "undefined") << '\n';
  for (const auto& [liked, count] : stats.items_liked_histogram)
    out << "users_liking_" << liked << "_items," << count << '\n';
  return data;
}

struct LabelStageResult {
  std::size_t rows = 0;
  std::size_t discarded = 0;
  bool oversample_skipped = false;
  std::size_t clones = 0;
};

// Active users -> targets -> split -> oversampling, all persisted.
inline LabelStageResult stage_label(const PipelineConfig& cfg, const RunPaths& paths) {
  DyadicDataset data = detail::load_run_dataset(paths);
  const bool extra_mode = parse_format(cfg.format) == DatasetFormat::extra_triplets;
  DyadicDataset labelled = extra_mode ? std::move(data) : filter_positive(data);

  ActiveUserSet users = select_active_users(labelled, cfg.active_users);
  TargetMatrix targets = build_targets(labelled, users, cfg.include_title, extra_mode);
  write_target_matrix(targets, paths.targets_txt(), paths.active_users_txt());

  Partitions parts = split(targets, cfg.split_train, cfg.split_val, cfg.split_test, cfg.seed);
  write_review_ids(parts.train, paths.split_file("train"));
  write_review_ids(parts.validation, paths.split_file("val"));
  write_review_ids(parts.test, paths.split_file("test"));

  MlrosResult over = mlros_oversample(parts.train, cfg.mlros_pct,
                                      fnv1a64_mix(0x4D4C524FULL, cfg.seed), cfg.mlros_trigger);
  write_review_ids(over.samples, paths.train_rows_txt());

  LabelStageResult r;
  r.rows = targets.rows.size();
  r.discarded = targets.discarded;
  r.oversample_skipped = over.skipped;
  r.clones = over.clones;
  return r;
}

namespace detail {

struct LoadedLabels {
  DyadicDataset data;       // normalised run dataset
  DyadicDataset labelled;   // positive-filtered unless EXTRA mode
  TargetMatrix targets;
  Partitions parts;         // train holds the oversampled rows
};

inline LoadedLabels load_labels(const PipelineConfig& cfg, const RunPaths& paths) {
  LoadedLabels l{load_run_dataset(paths), DyadicDataset{}, {}, {}};
  const bool extra_mode = parse_format(cfg.format) == DatasetFormat::extra_triplets;
  l.labelled = extra_mode ? l.data : filter_positive(l.data);
  l.targets = read_target_matrix(paths.targets_txt(), paths.active_users_txt(), l.labelled,
                                 cfg.include_title);
  l.parts.seed = cfg.seed;
  l.parts.train = read_samples_by_id(paths.train_rows_txt(), l.targets);
  l.parts.validation = read_samples_by_id(paths.split_file("val"), l.targets);
  l.parts.test = read_samples_by_id(paths.split_file("test"), l.targets);
  return l;
}

}  // namespace detail

inline TrainHistory stage_train(const PipelineConfig& cfg, const RunPaths& paths) {
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  std::unique_ptr<EmbeddingProvider> provider = detail::make_provider(cfg);
  HeadConfig head = cfg.head;
  head.output_size = static_cast<int>(l.targets.users.size());
  head.seed = cfg.seed;
  TrainResult result = train(l.parts, *provider, cfg.pre, head);
  save_head_params(result.params, paths.head_params_bin());

  std::ofstream out(paths.history_csv(), std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + paths.history_csv());
  out << "epoch,train_loss,val_loss,best\n";
  for (std::size_t e = 0; e < result.history.train_loss.size(); ++e)
    out << e + 1 << ',' << detail::fmt_double(result.history.train_loss[e]) << ','
        << detail::fmt_double(result.history.val_loss[e]) << ','
        << (static_cast<int>(e + 1) == result.history.best_epoch ? 1 : 0) << '\n';
  if (result.history.diverged) out << "# training diverged\n";
  return result.history;
}

// Rankings over the validation slice for every (active user, item) pair the
// user actually reviewed there.
inline void stage_rank(const PipelineConfig& cfg, const RunPaths& paths) {
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  std::unique_ptr<EmbeddingProvider> provider = detail::make_provider(cfg);
  HeadParams params = load_head_params(paths.head_params_bin());

  std::vector<ReviewId> val_ids = detail::read_id_file(paths.split_file("val"));
  auto probs = detail::predict_reviews(params, *provider, cfg.pre, l.labelled, val_ids,
                                       cfg.include_title);
  auto by_item = detail::slice_by_item(l.labelled, val_ids);
  auto pairs = detail::authored_pairs(l.labelled, l.targets.users, val_ids);

  std::ofstream out(paths.rankings_tsv(), std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + paths.rankings_tsv());
  out << "user_id\titem_id\treview_id\tprobability\trank\n";
  char buf[64];
  for (const auto& [key, authored] : pairs) {
    const auto& [user, item] = key;
    Ranking r = detail::rank_slice_for_user(user, l.targets.users.column.at(user), item,
                                            by_item.at(item), probs);
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9f", r.entries[i].probability);
      out << sanitize_tsv_field(user) << '\t' << sanitize_tsv_field(item) << '\t'
          << sanitize_tsv_field(r.entries[i].review) << '\t' << buf << '\t' << i + 1 << '\n';
    }
  }
}

namespace detail {

inline std::map<std::pair<UserId, ItemId>, Ranking> read_rankings(const RunPaths& paths) {
  TsvReader reader(paths.rankings_tsv());
  const std::size_t c_user = reader.column("user_id");
  const std::size_t c_item = reader.column("item_id");
  const std::size_t c_review = reader.column("review_id");
  const std::size_t c_prob = reader.column("probability");
  std::map<std::pair<UserId, ItemId>, Ranking> rankings;
  std::vector<std::string> f;
  while (reader.next(f)) {
    Ranking& r = rankings[{f[c_user], f[c_item]}];
    r.user = f[c_user];
    r.item = f[c_item];
    r.entries.push_back({f[c_review], parse_number<double>(f[c_prob], "probability")});
  }
  return rankings;
}

// TF-IDF model over the whole labelled corpus plus the per-review filtered
// token cache.
struct TfIdfBundle {
  TfIdfModel model;
  std::unordered_map<ReviewId, std::vector<std::string>> filtered;
};

inline TfIdfBundle fit_city_tfidf(const PipelineConfig& cfg, const DyadicDataset& labelled) {
  EvalResources res = EvalResources::load(cfg.stopwords, cfg.lexicon, cfg.lemmas);
  TfIdfBundle bundle;
  std::vector<std::vector<std::string>> docs;
  docs.reserve(labelled.size());
  for (const Interaction& x : labelled.interactions()) {
    std::vector<std::string> tokens = eval_filter(x.text, res);
    bundle.filtered.emplace(x.review_id, tokens);
    docs.push_back(std::move(tokens));
  }
  if (docs.empty()) throw DataError("no reviews available to fit the TF-IDF model");
  bundle.model = TfIdfModel::fit(docs, cfg.ban_top);
  return bundle;
}

}  // namespace detail

// Keyword extraction and heuristic review selection over the persisted
// rankings.
inline void stage_explain(const PipelineConfig& cfg, const RunPaths& paths) {
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  detail::TfIdfBundle tfidf = detail::fit_city_tfidf(cfg, l.labelled);
  auto rankings = detail::read_rankings(paths);

  std::vector<std::pair<PredictedContext, Explanation>> rows;
  for (const auto& [key, ranking] : rankings) {
    PredictedContext pc = predicted_context(ranking, cfg.top_n);
    rows.emplace_back(pc, select_explanation(pc, tfidf.model, tfidf.filtered, cfg.keyword_k));
  }
  write_explanations_tsv(rows, paths.explanations_tsv());
}

// Classification metrics over the test partition.
inline ClassMetricsReport stage_eval(const PipelineConfig& cfg, const RunPaths& paths) {
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  std::unique_ptr<EmbeddingProvider> provider = detail::make_provider(cfg);
  HeadParams params = load_head_params(paths.head_params_bin());

  std::vector<Eigen::VectorXd> probs;
  std::vector<std::vector<std::uint8_t>> targets;
  for (const LabeledSample& s : l.parts.test) {
    probs.push_back(predict(params, *provider, cfg.pre, s.review_id, s.input_text));
    targets.push_back(s.target);
  }
  if (probs.empty()) throw DataError("test partition is empty");
  ClassMetricsReport report = classification_metrics(probs, targets, cfg.head.threshold);
  write_metrics_csv({report}, paths.metrics_csv());
  return report;
}

namespace detail {

struct CcrStageData {
  std::vector<Eigen::VectorXd> fit_points;  // test-partition context vectors
  std::vector<CcrComparison> comparisons;   // validation-partition points
};

inline CcrStageData build_ccr_data(const PipelineConfig& cfg, const RunPaths& paths,
                                   const LoadedLabels& l, const TfIdfBundle& tfidf,
                                   const HeadParams& params, const EmbeddingProvider& provider) {
  CcrStageData data;

  // Clusters are fitted on the test partition's predicted-context vectors.
  std::vector<ReviewId> test_ids = read_id_file(paths.split_file("test"));
  auto test_probs = predict_reviews(params, provider, cfg.pre, l.labelled, test_ids,
                                    cfg.include_title);
  auto test_by_item = slice_by_item(l.labelled, test_ids);
  for (const auto& [key, authored] : authored_pairs(l.labelled, l.targets.users, test_ids)) {
    const auto& [user, item] = key;
    Ranking r = rank_slice_for_user(user, l.targets.users.column.at(user), item,
                                    test_by_item.at(item), test_probs);
    data.fit_points.push_back(
        cumulative_vector(tfidf.model, predicted_context(r, cfg.top_n), tfidf.filtered));
  }

  // Points to classify come from the validation partition.
  std::vector<ReviewId> val_ids = read_id_file(paths.split_file("val"));
  auto val_probs = predict_reviews(params, provider, cfg.pre, l.labelled, val_ids,
                                   cfg.include_title);
  auto val_by_item = slice_by_item(l.labelled, val_ids);
  SplitMix64 adversary_seeds(fnv1a64_mix(0x43435252ULL, cfg.seed));
  for (const auto& [key, authored] : authored_pairs(l.labelled, l.targets.users, val_ids)) {
    const auto& [user, item] = key;
    const std::vector<ReviewId>& pool = val_by_item.at(item);
    Ranking r = rank_slice_for_user(user, l.targets.users.column.at(user), item, pool, val_probs);
    PredictedContext pc = predicted_context(r, cfg.top_n);
    Explanation chosen = select_explanation(pc, tfidf.model, tfidf.filtered, cfg.keyword_k);
    CcrComparison cmp;
    cmp.personalised_point = tfidf.model.transform(tfidf.filtered.at(chosen.review));
    cmp.random_point =
        tfidf.model.transform(tfidf.filtered.at(random_adversary(pool, adversary_seeds.next())));
    for (const ReviewId& a : authored)
      cmp.authorship_points.push_back(tfidf.model.transform(tfidf.filtered.at(a)));
    data.comparisons.push_back(std::move(cmp));
  }
  return data;
}

}  // namespace detail

// Clustering evaluation against the random adversary for every configured k.
inline std::vector<CcrReport> stage_ccr(const PipelineConfig& cfg, const RunPaths& paths) {
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  detail::TfIdfBundle tfidf = detail::fit_city_tfidf(cfg, l.labelled);
  std::unique_ptr<EmbeddingProvider> provider = detail::make_provider(cfg);
  HeadParams params = load_head_params(paths.head_params_bin());

  detail::CcrStageData data = detail::build_ccr_data(cfg, paths, l, tfidf, params, *provider);

  std::vector<CcrReport> reports;
  for (std::size_t k : cfg.k_list) {
    CcrReport report;
    report.k = k;
    if (data.fit_points.size() < k || data.comparisons.empty()) {
      report.empty = true;  // not enough contexts to fit clusters at this k
      reports.push_back(report);
      continue;
    }
    ClusterModel clusters =
        kmeanspp_fit(data.fit_points, k, fnv1a64_mix(0x4B4D4541ULL + k, cfg.seed));
    report = ccr_from_comparisons(data.comparisons, clusters);
    reports.push_back(report);

    if (data.fit_points.size() >= 2) {
      Eigen::MatrixXd coords = pca_2d(data.fit_points);
      std::vector<std::size_t> assign(data.fit_points.size());
      for (std::size_t i = 0; i < data.fit_points.size(); ++i)
        assign[i] = assign_centroid(clusters, data.fit_points[i]);
      auto tags = centroid_tags(clusters, tfidf.model.terms(), 3);
      std::vector<std::pair<Eigen::Vector2d, std::string>> labels;
      for (std::size_t c = 0; c < k; ++c) {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        std::size_t count = 0;
        for (std::size_t i = 0; i < assign.size(); ++i)
          if (assign[i] == c) {
            mean += coords.row(static_cast<Eigen::Index>(i)).transpose();
            ++count;
          }
        if (count == 0) continue;
        mean /= static_cast<double>(count);
        labels.emplace_back(mean, join(tags[c], ","));
      }
      write_svg_scatter(coords, assign, labels, "predicted contexts, k=" + std::to_string(k),
                        paths.clusters_svg(k));
    }
  }
  write_ccr_csv({{l.data.city().empty() ? std::string("dataset") : l.data.city(), reports}},
                paths.ccr_csv());
  return reports;
}

// Manifest of every artifact in the run directory with a content hash.
inline void stage_report(const PipelineConfig& cfg, const RunPaths& paths) {
  nlohmann::json manifest;
  manifest["version"] = "0.1.0";
  manifest["seed"] = cfg.seed;
  manifest["config"] = cfg.to_key_values();
  nlohmann::json artifacts = nlohmann::json::object();
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(paths.dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  char buf[32];
  for (const std::string& name : names) {
    std::snprintf(buf, sizeof(buf), "fnv64:%016llx",
                  static_cast<unsigned long long>(detail::file_hash(paths.dir + "/" + name)));
    artifacts[name] = buf;
  }
  manifest["artifacts"] = artifacts;
  std::ofstream out(paths.manifest_json(), std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + paths.manifest_json());
  out << manifest.dump(2) << '\n';
}

// --- orchestration ---------------------------------------------------------------

struct PipelineResult {
  RunPaths paths;
  StatsReport stats;
  LabelStageResult labels;
  TrainHistory history;
  ClassMetricsReport metrics;
  std::vector<CcrReport> ccr;
};

namespace detail {

template <typename F>
auto guard_stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;  // configuration problems keep their own exit semantics
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

// ingest -> label -> train -> rank -> explain -> eval -> ccr -> report, every
// intermediate persisted in the run directory.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineResult result;
  result.paths.dir = cfg.out;
  std::filesystem::create_directories(cfg.out);
  const RunPaths& paths = result.paths;

  result.stats = dataset_stats(detail::guard_stage("ingest", [&] { return stage_ingest(cfg, paths); }));
  result.labels = detail::guard_stage("label", [&] { return stage_label(cfg, paths); });
  result.history = detail::guard_stage("train", [&] { return stage_train(cfg, paths); });
  detail::guard_stage("rank", [&] { stage_rank(cfg, paths); return 0; });
  detail::guard_stage("explain", [&] { stage_explain(cfg, paths); return 0; });
  result.metrics = detail::guard_stage("eval", [&] { return stage_eval(cfg, paths); });
  result.ccr = detail::guard_stage("ccr", [&] { return stage_ccr(cfg, paths); });
  detail::guard_stage("report", [&] { stage_report(cfg, paths); return 0; });
  return result;
}

// --- experiments -----------------------------------------------------------------

struct SweepRow {
  std::size_t active_users = 0;
  bool failed = false;
  std::string error;
  ClassMetricsReport metrics;
};

// Full pipeline per value; emits the metric curves as CSV and SVG.
// Per-value failures are recorded and the sweep continues.
inline std::vector<SweepRow> sweep_active_users(const PipelineConfig& base,
                                                const std::vector<std::size_t>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::filesystem::create_directories(base.out);

  auto run_one = [&](std::size_t value) {
    SweepRow row;
    row.active_users = value;
    PipelineConfig cfg = base;
    cfg.active_users = value;
    cfg.out = base.out + "/sweep_u" + std::to_string(value);
    try {
      row.metrics = run_pipeline(cfg).metrics;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    return row;
  };

  std::vector<SweepRow> rows(values.size());
  if (base.jobs <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) rows[i] = run_one(values[i]);
  } else {
    for (std::size_t wave = 0; wave < values.size(); wave += base.jobs) {
      std::vector<std::future<SweepRow>> futures;
      const std::size_t end = std::min(values.size(), wave + base.jobs);
      for (std::size_t i = wave; i < end; ++i)
        futures.push_back(std::async(std::launch::async, run_one, values[i]));
      for (std::size_t i = wave; i < end; ++i) rows[i] = futures[i - wave].get();
    }
  }

  std::ofstream out(base.out + "/active_users_sweep.csv", std::ios::binary);
  if (!out) throw ConfigError("cannot write sweep CSV");
  out << "active_users,status,auc_pr,auc_roc,recall,precision\n";
  std::vector<double> xs;
  std::map<std::string, std::vector<double>> series;
  for (const SweepRow& row : rows) {
    if (row.failed) {
      out << row.active_users << ",error,,,,\n";
      continue;
    }
    out << row.active_users << ",ok," << detail::fmt_metric(row.metrics.auc_pr) << ','
        << detail::fmt_metric(row.metrics.auc_roc) << ',' << detail::fmt_metric(row.metrics.recall)
        << ',' << detail::fmt_double(row.metrics.precision) << '\n';
    xs.push_back(static_cast<double>(row.active_users));
    series["auc_pr"].push_back(row.metrics.auc_pr.value_or(0.0));
    series["auc_roc"].push_back(row.metrics.auc_roc.value_or(0.0));
    series["recall"].push_back(row.metrics.recall.value_or(0.0));
    series["precision"].push_back(row.metrics.precision);
  }
  write_svg_curves(xs, series, "active users", "metrics vs active users",
                   base.out + "/active_users_sweep.svg");
  return rows;
}

struct DensityRow {
  double target_ratio = 0.0;
  double achieved_ratio = 0.0;
  bool failed = false;
  std::string error;
  double f_measure = 0.0;
  double auc_pr = 0.0;
  double delta_median = 0.0;  // median CCR delta over the configured k values
};

// Generates one synthetic dataset per spec, runs the full pipeline and
// tabulates ratio against the performance metrics, densest dataset first.
inline std::vector<DensityRow> density_experiment(const PipelineConfig& base,
                                                  const std::vector<SynthSpec>& specs) {
  if (specs.size() < 2) throw ConfigError("density experiment needs at least two specs");
  {
    std::set<long long> distinct;
    for (const SynthSpec& s : specs) distinct.insert(std::llround(s.target_ratio * 1000.0));
    if (distinct.size() < 2)
      throw ConfigError("density experiment needs at least two distinct target ratios");
  }
  std::filesystem::create_directories(base.out);

  std::vector<DensityRow> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const SynthSpec& spec = specs[i];
    DensityRow row;
    row.target_ratio = spec.target_ratio;
    std::string dir = base.out + "/density_" + std::to_string(i);
    try {
      std::filesystem::create_directories(dir);
      DyadicDataset data = generate_synthetic(spec);
      write_tripadvisor_tsv(data, dir + "/synthetic.tsv");
      SynthResources res = write_synth_resources(spec, dir);

      PipelineConfig cfg = base;
      cfg.dataset = dir + "/synthetic.tsv";
      cfg.format = "tripadvisor-tsv";
      cfg.stopwords = res.stopwords_path;
      cfg.lexicon = res.lexicon_path;
      cfg.lemmas = res.lemmas_path;
      cfg.out = dir + "/run";
      PipelineResult result = run_pipeline(cfg);
      row.achieved_ratio = result.stats.review_user_ratio;
      row.f_measure = result.metrics.f_measure.value_or(0.0);
      row.auc_pr = result.metrics.auc_pr.value_or(0.0);
      std::vector<double> deltas;
      for (const CcrReport& r : result.ccr)
        if (!r.empty) deltas.push_back(r.delta);
      if (!deltas.empty()) {
        std::sort(deltas.begin(), deltas.end());
        const std::size_t mid = deltas.size() / 2;
        row.delta_median = deltas.size() % 2 ? deltas[mid]
                                             : (deltas[mid - 1] + deltas[mid]) / 2.0;
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(row);
  }

  std::sort(rows.begin(), rows.end(),
            [](const DensityRow& a, const DensityRow& b) { return a.target_ratio > b.target_ratio; });
  std::ofstream out(base.out + "/density.csv", std::ios::binary);
  if (!out) throw ConfigError("cannot write density CSV");
  out << "target_ratio,achieved_ratio,status,f_measure,auc_pr,ccr_delta_median\n";
  for (const DensityRow& row : rows) {
    if (row.failed) {
      out << detail::fmt_double(row.target_ratio) << ",,error,,,\n";
      continue;
    }
    out << detail::fmt_double(row.target_ratio) << ',' << detail::fmt_double(row.achieved_ratio)
        << ",ok," << detail::fmt_double(row.f_measure) << ',' << detail::fmt_double(row.auc_pr)
        << ',' << detail::fmt_double(row.delta_median) << '\n';
  }
  return rows;
}

// Global-level explanation ranking over the test partition: one shared
// candidate pool, metrics @10, averaged over retraining runs; the seeded
// random baseline is reported alongside.
struct GlobalRankResult {
  RankMetricsReport model;
  RankMetricsReport random_baseline;
};

inline GlobalRankResult global_ranking_eval(const PipelineConfig& cfg, const RunPaths& paths,
                                            std::size_t runs, std::size_t at_k = 10) {
  if (runs < 1) throw ConfigError("need at least one run");
  detail::LoadedLabels l = detail::load_labels(cfg, paths);
  std::unique_ptr<EmbeddingProvider> provider = detail::make_provider(cfg);

  std::vector<ReviewId> test_ids = detail::read_id_file(paths.split_file("test"));
  std::vector<ReviewId> pool = test_ids;
  std::sort(pool.begin(), pool.end());
  auto pairs = detail::authored_pairs(l.labelled, l.targets.users, test_ids);
  if (pairs.empty()) throw DataError("no active-user pairs in the test partition");

  std::vector<std::vector<RankedQuery>> model_runs, random_runs;
  for (std::size_t run = 0; run < runs; ++run) {
    HeadConfig head = cfg.head;
    head.output_size = static_cast<int>(l.targets.users.size());
    head.seed = fnv1a64_mix(cfg.seed, 0x52554EULL + run);
    TrainResult trained = train(l.parts, *provider, cfg.pre, head);
    auto probs = detail::predict_reviews(trained.params, *provider, cfg.pre, l.labelled, pool,
                                         cfg.include_title);

    std::vector<RankedQuery> model_queries, random_queries;
    SplitMix64 rand_rng(fnv1a64_mix(0x52414E44ULL + run, cfg.seed));
    for (const auto& [key, authored] : pairs) {
      const auto& [user, item] = key;
      const std::size_t column = l.targets.users.column.at(user);
      std::vector<ReviewId> ranked = pool;
      std::stable_sort(ranked.begin(), ranked.end(), [&](const ReviewId& a, const ReviewId& b) {
        const double pa = probs.at(a)(static_cast<Eigen::Index>(column));
        const double pb = probs.at(b)(static_cast<Eigen::Index>(column));
        if (pa != pb) return pa > pb;
        return a < b;
      });
      RankedQuery q;
      q.ranked = std::move(ranked);
      q.relevant.insert(authored.begin(), authored.end());
      model_queries.push_back(q);

      RankedQuery rq;
      rq.ranked = pool;
      rand_rng.shuffle(rq.ranked);
      rq.relevant = model_queries.back().relevant;
      random_queries.push_back(std::move(rq));
    }
    model_runs.push_back(std::move(model_queries));
    random_runs.push_back(std::move(random_queries));
  }

  GlobalRankResult result;
  result.model = ranking_metrics_at_k(model_runs, at_k);
  result.random_baseline = ranking_metrics_at_k(random_runs, at_k);

  std::ofstream out(paths.rank_metrics_csv(), std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + paths.rank_metrics_csv());
  out << "method,ndcg_mean,ndcg_std,precision_mean,precision_std,recall_mean,recall_std,"
         "f1_mean,f1_std,runs\n";
  auto emit = [&](const char* name, const RankMetricsReport& r) {
    out << name << ',' << detail::fmt_double(r.ndcg.mean) << ',' << detail::fmt_double(r.ndcg.stddev)
        << ',' << detail::fmt_double(r.precision.mean) << ','
        << detail::fmt_double(r.precision.stddev) << ',' << detail::fmt_double(r.recall.mean) << ','
        << detail::fmt_double(r.recall.stddev) << ',' << detail::fmt_double(r.f1.mean) << ','
        << detail::fmt_double(r.f1.stddev) << ',' << r.runs << '\n';
  };
  emit("model", result.model);
  emit("random", result.random_baseline);
  return result;
}

}  // namespace pter

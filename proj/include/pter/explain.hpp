#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pter/dyadic.hpp"
#include "pter/errors.hpp"
#include "pter/head.hpp"
#include "pter/text.hpp"

namespace pter {

struct RankEntry {
  ReviewId review;
  double probability;
};

// Reviews of one item ordered for one user: descending probability, ties by
// ascending review id.
struct Ranking {
  UserId user;
  ItemId item;
  std::vector<RankEntry> entries;
};

struct PredictedContext {
  UserId user;
  ItemId item;
  std::vector<RankEntry> entries;  // prefix of the parent ranking
};

inline Ranking make_ranking(UserId user, ItemId item, std::vector<RankEntry> scored) {
  if (scored.empty())
    throw DataError("cannot rank an empty review set for item " + item);
  std::sort(scored.begin(), scored.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.review < b.review;
  });
  return Ranking{std::move(user), std::move(item), std::move(scored)};
}

// Scores every positive review of an item for one user column and sorts.
// The first entry is the argmax review, the user's best explanation candidate.
inline Ranking rank_reviews(const HeadParams& params, const EmbeddingProvider& provider,
                            const PreprocessConfig& pre, const UserId& user, std::size_t column,
                            const ItemId& item, const std::vector<const Interaction*>& reviews,
                            bool include_title = true) {
  if (column >= static_cast<std::size_t>(params.output_size()))
    throw ConfigError("user column out of range");
  std::vector<RankEntry> scored;
  scored.reserve(reviews.size());
  for (const Interaction* x : reviews) {
    Eigen::VectorXd probs =
        predict(params, provider, pre, x->review_id, model_input_text(*x, include_title));
    scored.push_back({x->review_id, probs(static_cast<Eigen::Index>(column))});
  }
  return make_ranking(user, item, std::move(scored));
}

// Top-N prefix, the "predicted context" of the interaction.
inline PredictedContext predicted_context(const Ranking& r, std::size_t n) {
  if (n < 1) throw ConfigError("predicted context size must be >= 1");
  PredictedContext pc{r.user, r.item, {}};
  const std::size_t take = std::min(n, r.entries.size());
  pc.entries.assign(r.entries.begin(), r.entries.begin() + static_cast<std::ptrdiff_t>(take));
  return pc;
}

// --- evaluation-time text filtering -------------------------------------------

// Stopword list, singular-noun lexicon and surface->lemma table, all UTF-8
// one entry per line (lemma table: "surface TAB lemma").
struct EvalResources {
  std::unordered_set<std::string> stopwords;
  std::unordered_set<std::string> lexicon;
  std::unordered_map<std::string, std::string> lemmas;

  static EvalResources load(const std::string& stopwords_path, const std::string& lexicon_path,
                            const std::string& lemmas_path) {
    EvalResources r;
    r.stopwords = load_word_set(stopwords_path);
    r.lexicon = load_word_set(lexicon_path);
    std::ifstream in(lemmas_path, std::ios::binary);
    if (!in) throw ConfigError("missing resource file: " + lemmas_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError("lemma table line " + std::to_string(line_no) + " lacks a tab: " +
                        lemmas_path);
      r.lemmas.emplace(line.substr(0, tab), line.substr(tab + 1));
    }
    return r;
  }

private:
  static std::unordered_set<std::string> load_word_set(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing resource file: " + path);
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) words.insert(line);
    }
    return words;
  }
};

// Keyword-space filtering: keep alphanumerics, lowercase, tokenise, drop
// stopwords, lemmatise, keep only lemmas the noun lexicon admits.
inline std::vector<std::string> eval_filter(std::string_view text, const EvalResources& res) {
  std::vector<std::string> out;
  for (const std::string& tok : split_whitespace(to_lower_ascii(keep_alnum(text)))) {
    if (res.stopwords.count(tok)) continue;
    auto lem = res.lemmas.find(tok);
    const std::string& word = lem != res.lemmas.end() ? lem->second : tok;
    if (res.lexicon.count(word)) out.push_back(word);
  }
  return out;
}

// --- TF-IDF --------------------------------------------------------------------

// Vector-space model over one city's filtered reviews. tf is the raw count,
// idf = ln(corpus size / document frequency). The ban_top most frequent terms
// by total corpus count are forced to zero weight.
class TfIdfModel {
public:
  static TfIdfModel fit(const std::vector<std::vector<std::string>>& docs,
                        std::size_t ban_top = 20) {
    if (docs.empty()) throw DataError("cannot fit TF-IDF on an empty corpus");
    TfIdfModel m;
    m.corpus_size_ = docs.size();
    std::map<std::string, std::size_t> df, total;
    for (const auto& doc : docs) {
      std::unordered_set<std::string> seen;
      for (const std::string& t : doc) {
        ++total[t];
        if (seen.insert(t).second) ++df[t];
      }
    }
    m.terms_.reserve(df.size());
    for (const auto& [term, _] : df) {
      m.vocab_.emplace(term, m.terms_.size());
      m.terms_.push_back(term);
    }
    m.idf_.resize(m.terms_.size());
    m.banned_.assign(m.terms_.size(), 0);
    for (std::size_t i = 0; i < m.terms_.size(); ++i)
      m.idf_[i] = std::log(static_cast<double>(m.corpus_size_) /
                           static_cast<double>(df[m.terms_[i]]));

    if (ban_top > 0 && !m.terms_.empty()) {
      std::vector<std::size_t> order(m.terms_.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const std::size_t ca = total[m.terms_[a]], cb = total[m.terms_[b]];
        if (ca != cb) return ca > cb;
        return m.terms_[a] < m.terms_[b];
      });
      for (std::size_t i = 0; i < std::min(ban_top, order.size()); ++i) m.banned_[order[i]] = 1;
    }
    return m;
  }

  std::size_t vocabulary_size() const { return terms_.size(); }
  std::size_t corpus_size() const { return corpus_size_; }
  const std::vector<std::string>& terms() const { return terms_; }
  bool is_banned(const std::string& term) const {
    auto it = vocab_.find(term);
    return it != vocab_.end() && banned_[it->second];
  }
  double idf(const std::string& term) const {
    auto it = vocab_.find(term);
    return it == vocab_.end() ? 0.0 : idf_[it->second];
  }

  // Dense tf*idf vector over the vocabulary; unknown and banned terms
  // contribute nothing.
  Eigen::VectorXd transform(const std::vector<std::string>& tokens) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(terms_.size()));
    for (const std::string& t : tokens) {
      auto it = vocab_.find(t);
      if (it == vocab_.end() || banned_[it->second]) continue;
      v(static_cast<Eigen::Index>(it->second)) += idf_[it->second];
    }
    return v;
  }

private:
  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::vector<char> banned_;
  std::size_t corpus_size_ = 0;
};

// Sum of the TF-IDF vectors of every review in the predicted context.
// `filtered` maps review ids to their eval-filtered token lists.
inline Eigen::VectorXd cumulative_vector(
    const TfIdfModel& m, const PredictedContext& pc,
    const std::unordered_map<ReviewId, std::vector<std::string>>& filtered) {
  if (pc.entries.empty()) throw DataError("predicted context is empty");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.vocabulary_size()));
  for (const RankEntry& e : pc.entries) {
    auto it = filtered.find(e.review);
    if (it == filtered.end()) throw NotFoundError("no filtered text for review " + e.review);
    v += m.transform(it->second);
  }
  return v;
}

// The k highest-weight terms; ties break by ascending term text. Fewer than
// k nonzero coordinates returns every nonzero term.
inline std::vector<std::string> extract_keywords(const Eigen::VectorXd& v, const TfIdfModel& m,
                                                 std::size_t k = 3) {
  if (k < 1) throw ConfigError("keyword count must be >= 1");
  std::vector<std::size_t> nonzero;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) > 0.0) nonzero.push_back(static_cast<std::size_t>(i));
  std::sort(nonzero.begin(), nonzero.end(), [&](std::size_t a, std::size_t b) {
    const double wa = v(static_cast<Eigen::Index>(a)), wb = v(static_cast<Eigen::Index>(b));
    if (wa != wb) return wa > wb;
    return m.terms()[a] < m.terms()[b];
  });
  if (nonzero.size() > k) nonzero.resize(k);
  std::vector<std::string> keywords;
  keywords.reserve(nonzero.size());
  for (std::size_t i : nonzero) keywords.push_back(m.terms()[i]);
  return keywords;
}

// Keyword occurrences in the filtered review, discounted by log2(rank + 1).
inline double score_review(const std::vector<std::string>& filtered_tokens,
                           const std::vector<std::string>& keywords, std::size_t rank_pos) {
  if (rank_pos < 1) throw ConfigError("rank position must be >= 1");
  std::unordered_set<std::string> kw(keywords.begin(), keywords.end());
  std::size_t hits = 0;
  for (const std::string& t : filtered_tokens)
    if (kw.count(t)) ++hits;
  return static_cast<double>(hits) / std::log2(static_cast<double>(rank_pos) + 1.0);
}

struct Explanation {
  ReviewId review;
  std::size_t rank_pos = 0;  // 1-based position within the ranking
  double score = 0.0;
  std::vector<std::string> keywords;
  bool fallback = false;  // every candidate scored zero; rank-1 returned
};

// Heuristic selection: extract the context keywords, score every candidate,
// keep the argmax (ties resolve to the better rank position).
inline Explanation select_explanation(
    const PredictedContext& pc, const TfIdfModel& m,
    const std::unordered_map<ReviewId, std::vector<std::string>>& filtered,
    std::size_t keyword_k = 3) {
  Eigen::VectorXd cumulative = cumulative_vector(m, pc, filtered);
  Explanation best;
  best.keywords = extract_keywords(cumulative, m, keyword_k);
  best.review = pc.entries.front().review;
  best.rank_pos = 1;
  best.score = 0.0;
  for (std::size_t i = 0; i < pc.entries.size(); ++i) {
    const ReviewId& id = pc.entries[i].review;
    const double s = score_review(filtered.at(id), best.keywords, i + 1);
    if (s > best.score) {
      best.score = s;
      best.review = id;
      best.rank_pos = i + 1;
    }
  }
  best.fallback = best.score == 0.0;
  return best;
}

// Explanations TSV: user_id, item_id, review_id, rank position, score,
// comma-joined keywords.
inline void write_explanations_tsv(
    const std::vector<std::pair<PredictedContext, Explanation>>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << "user_id\titem_id\treview_id\trank\tscore\tkeywords\n";
  char buf[64];
  for (const auto& [pc, ex] : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", ex.score);
    out << sanitize_tsv_field(pc.user) << '\t' << sanitize_tsv_field(pc.item) << '\t'
        << sanitize_tsv_field(ex.review) << '\t' << ex.rank_pos << '\t' << buf << '\t';
    for (std::size_t i = 0; i < ex.keywords.size(); ++i) {
      if (i) out << ',';
      out << ex.keywords[i];
    }
    out << '\n';
  }
}

}  // namespace pter

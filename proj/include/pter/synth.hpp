#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pter/dyadic.hpp"
#include "pter/errors.hpp"
#include "pter/rng.hpp"

namespace pter {

// Planted-preference generator for desk-scale experiments. Users fall into
// taste groups with disjoint vocabularies that tie them to their group's
// items. Independently of the group, every user keeps a persistent "style
// topic" drawn from a vocabulary shared across groups, so review texts carry
// a per-user signal that cuts across the group structure (the dimension the
// clustering evaluation keys on). User activity is long-tailed.
struct SynthSpec {
  std::size_t n_users = 100;
  std::size_t n_items = 40;
  std::size_t n_groups = 4;
  std::size_t group_vocab = 40;  // vocabulary size per group
  double target_ratio = 2.0;     // positive reviews per distinct positive user
  std::uint64_t seed = 0;

  // texture knobs
  std::size_t style_topics = 5;   // shared style vocabularies users adopt
  std::size_t style_vocab = 12;   // words per style topic
  std::size_t pref_window = 0;    // items a user favours within the group (0 = half)
  std::size_t review_tokens = 12; // words per review
  double group_rate = 0.20;       // share of group-vocabulary words
  double style_rate = 0.50;       // share of style-topic words
  double plural_rate = 0.10;      // share of planted words emitted in plural form
  double tail_exponent = 0.8;     // activity long-tail steepness

  void validate() const {
    if (n_users < 1 || n_items < 1 || n_groups < 1) throw ConfigError("counts must be >= 1");
    if (n_groups > n_users)
      throw ConfigError("more taste groups than users");
    if (n_groups > n_items)
      throw ConfigError("more taste groups than items");
    if (group_vocab < 1 || style_vocab < 1 || style_topics < 1)
      throw ConfigError("vocabulary sizes must be >= 1");
    if (target_ratio < 1.0)
      throw ConfigError("review/user ratio below 1 is infeasible: every user posts at least once");
    if (review_tokens < 1) throw ConfigError("reviews need at least one token");
    if (group_rate < 0.0 || style_rate < 0.0 || group_rate + style_rate > 1.0)
      throw ConfigError("token rates must be non-negative and sum to at most 1");
  }
};

namespace detail {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "the",   "and",   "was",   "with", "very",  "really", "nice", "place",
      "food",  "good",  "great", "time", "staff", "menu",   "back", "again",
      "would", "there", "here",  "this", "that",  "have",   "had",  "our"};
  return words;
}

inline std::string group_word(std::size_t group, std::size_t index) {
  return "g" + std::to_string(group) + "w" + std::to_string(index);
}

inline std::string style_word(std::size_t topic, std::size_t index) {
  return "s" + std::to_string(topic) + "w" + std::to_string(index);
}

}  // namespace detail

inline std::vector<std::string> synth_group_vocabulary(const SynthSpec& spec, std::size_t group) {
  std::vector<std::string> words;
  words.reserve(spec.group_vocab);
  for (std::size_t i = 0; i < spec.group_vocab; ++i)
    words.push_back(detail::group_word(group, i));
  return words;
}

inline DyadicDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SplitMix64 rng(fnv1a64_mix(0x53594E54ULL, spec.seed));

  const std::size_t total_reviews =
      static_cast<std::size_t>(std::llround(spec.target_ratio * static_cast<double>(spec.n_users)));

  // Long-tailed per-user review counts: everyone posts once, the surplus is
  // drawn with weights decaying over a seeded user permutation.
  std::vector<std::size_t> reviews_per_user(spec.n_users, 1);
  std::vector<std::size_t> perm(spec.n_users);
  for (std::size_t i = 0; i < spec.n_users; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> weight(spec.n_users);
  double weight_sum = 0.0;
  for (std::size_t rank = 0; rank < spec.n_users; ++rank) {
    weight[perm[rank]] = 1.0 / std::pow(static_cast<double>(rank + 1), spec.tail_exponent);
    weight_sum += weight[perm[rank]];
  }
  for (std::size_t extra = spec.n_users; extra < total_reviews; ++extra) {
    double target = rng.uniform01() * weight_sum;
    std::size_t u = spec.n_users - 1;
    double cum = 0.0;
    for (std::size_t i = 0; i < spec.n_users; ++i) {
      cum += weight[i];
      if (cum >= target) {
        u = i;
        break;
      }
    }
    ++reviews_per_user[u];
  }

  std::vector<std::vector<std::size_t>> group_items(spec.n_groups);
  for (std::size_t it = 0; it < spec.n_items; ++it) group_items[it % spec.n_groups].push_back(it);

  const auto& filler = detail::filler_words();
  std::vector<Interaction> rows;
  rows.reserve(total_reviews);
  std::size_t review_counter = 0;
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::size_t group = u % spec.n_groups;
    // round-robin style assignment keeps every (group, style) cell populated
    const std::size_t style = (u / spec.n_groups) % spec.style_topics;
    // users favour a style-anchored window of their group's items, so taste
    // within a group correlates with the style signal in the text
    const std::vector<std::size_t>& all_items = group_items[group];
    std::size_t window = spec.pref_window ? spec.pref_window
                                          : std::max<std::size_t>(1, all_items.size() / 2);
    window = std::min(window, all_items.size());
    const std::size_t start = (style * all_items.size()) / spec.style_topics;
    std::vector<std::size_t> items(window);
    for (std::size_t i = 0; i < window; ++i)
      items[i] = all_items[(start + i) % all_items.size()];
    for (std::size_t r = 0; r < reviews_per_user[u]; ++r) {
      Interaction x;
      x.user = "user" + std::to_string(u);
      x.item = "item" + std::to_string(items[rng.uniform_index(items.size())]);
      x.score = rng.uniform01() < 0.25 ? 4 : 5;
      x.review_id = "rev" + std::to_string(review_counter++);
      x.city = "synthetic";
      std::string text;
      for (std::size_t t = 0; t < spec.review_tokens; ++t) {
        if (t) text += ' ';
        const double draw = rng.uniform01();
        if (draw < spec.style_rate) {
          text += detail::style_word(style, rng.uniform_index(spec.style_vocab));
          if (rng.uniform01() < spec.plural_rate) text += 's';
        } else if (draw < spec.style_rate + spec.group_rate) {
          text += detail::group_word(group, rng.uniform_index(spec.group_vocab));
          if (rng.uniform01() < spec.plural_rate) text += 's';
        } else {
          text += filler[rng.uniform_index(filler.size())];
        }
      }
      x.text = text;
      rows.push_back(std::move(x));
    }
  }
  return DyadicDataset(std::move(rows), "synthetic");
}

// Companion resource files for the evaluation-time text filter: the noun
// lexicon admits every planted vocabulary word, the lemma table folds the
// plural forms back, and the stopword list covers the filler words.
struct SynthResources {
  std::string stopwords_path;
  std::string lexicon_path;
  std::string lemmas_path;
};

inline SynthResources write_synth_resources(const SynthSpec& spec, const std::string& dir) {
  SynthResources paths;
  paths.stopwords_path = dir + "/stopwords.txt";
  paths.lexicon_path = dir + "/lexicon.txt";
  paths.lemmas_path = dir + "/lemmas.tsv";

  std::ofstream stop(paths.stopwords_path, std::ios::binary);
  if (!stop) throw ConfigError("cannot write file: " + paths.stopwords_path);
  for (const std::string& w : detail::filler_words()) stop << w << '\n';

  std::ofstream lex(paths.lexicon_path, std::ios::binary);
  if (!lex) throw ConfigError("cannot write file: " + paths.lexicon_path);
  std::ofstream lem(paths.lemmas_path, std::ios::binary);
  if (!lem) throw ConfigError("cannot write file: " + paths.lemmas_path);
  auto admit = [&](const std::string& w) {
    lex << w << '\n';
    lem << w << "s\t" << w << '\n';
  };
  for (std::size_t g = 0; g < spec.n_groups; ++g)
    for (std::size_t i = 0; i < spec.group_vocab; ++i) admit(detail::group_word(g, i));
  for (std::size_t t = 0; t < spec.style_topics; ++t)
    for (std::size_t i = 0; i < spec.style_vocab; ++i) admit(detail::style_word(t, i));
  return paths;
}

}  // namespace pter

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pter/dyadic.hpp"
#include "pter/errors.hpp"
#include "pter/rng.hpp"

namespace pter {

// Output-label users: the top-n users by positive-interaction count.
// They define the column order of every target vector.
struct ActiveUserSet {
  std::vector<UserId> users;  // descending by positive count, ties by ascending id
  std::unordered_map<UserId, std::size_t> column;
  bool truncated = false;  // n exceeded the available user count

  std::size_t size() const { return users.size(); }
  bool contains(const UserId& u) const { return column.count(u) > 0; }
};

struct LabeledSample {
  ReviewId review_id;
  std::string input_text;
  std::vector<std::uint8_t> target;  // one slot per active user
};

inline bool operator==(const LabeledSample& a, const LabeledSample& b) {
  return a.review_id == b.review_id && a.input_text == b.input_text && a.target == b.target;
}

struct TargetMatrix {
  std::vector<LabeledSample> rows;
  ActiveUserSet users;
  std::size_t discarded = 0;  // all-zero rows removed before storage
};

struct Partitions {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> validation;
  std::vector<LabeledSample> test;
  std::uint64_t seed = 0;
};

// The text fed to the embedding provider: review title (when present),
// one space, review body.
inline std::string model_input_text(const Interaction& x, bool include_title = true) {
  if (include_title && !x.title.empty()) return x.title + " " + x.text;
  return x.text;
}

// Ranks every user of d by raw positive-interaction count (duplicates count)
// and keeps the top n. Ties break by ascending identifier. Asking for more
// users than exist returns them all, flagged.
inline ActiveUserSet select_active_users(const DyadicDataset& d, std::size_t n) {
  if (n < 1) throw ConfigError("active user count must be >= 1");
  std::unordered_map<UserId, std::size_t> counts;
  for (const Interaction& x : d.interactions()) {
    counts.emplace(x.user, 0);
    if (x.positive()) ++counts[x.user];
  }
  std::vector<std::pair<UserId, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  ActiveUserSet set;
  if (n > ranked.size()) {
    set.truncated = true;
    n = ranked.size();
  }
  set.users.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    set.users.push_back(ranked[i].first);
    set.column[ranked[i].first] = i;
  }
  return set;
}

// Multi-label targets over the active users. Column j of a review's target is
// 1 when user j authored the review or positively interacted with its item.
// All-zero rows are dropped and counted, unless keep_zero_rows is set (the
// EXTRA protocol trains on the unfiltered triplet set).
inline TargetMatrix build_targets(const DyadicDataset& d, const ActiveUserSet& users,
                                  bool include_title = true, bool keep_zero_rows = false) {
  std::unordered_map<ItemId, std::vector<std::size_t>> liked_columns;
  for (const Interaction& x : d.interactions()) {
    if (!x.positive()) continue;
    auto it = users.column.find(x.user);
    if (it != users.column.end()) liked_columns[x.item].push_back(it->second);
  }

  TargetMatrix m;
  m.users = users;
  for (const Interaction& x : d.interactions()) {
    LabeledSample s;
    s.review_id = x.review_id;
    s.input_text = model_input_text(x, include_title);
    s.target.assign(users.size(), 0);
    auto author = users.column.find(x.user);
    if (author != users.column.end()) s.target[author->second] = 1;
    auto liked = liked_columns.find(x.item);
    if (liked != liked_columns.end())
      for (std::size_t col : liked->second) s.target[col] = 1;
    bool any = std::any_of(s.target.begin(), s.target.end(), [](std::uint8_t v) { return v != 0; });
    if (any || keep_zero_rows)
      m.rows.push_back(std::move(s));
    else
      ++m.discarded;
  }
  return m;
}

// Seeded uniform shuffle, then contiguous slicing: floor(train), floor(val),
// remainder to test.
inline Partitions split(const TargetMatrix& m, double train_ratio, double val_ratio,
                        double test_ratio, std::uint64_t seed) {
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  const std::size_t n = m.rows.size();
  if (n < 3) throw DataError("need at least 3 samples to split, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(train_ratio * n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(val_ratio * n));

  Partitions p;
  p.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledSample& s = m.rows[order[i]];
    if (i < n_train)
      p.train.push_back(s);
    else if (i < n_train + n_val)
      p.validation.push_back(s);
    else
      p.test.push_back(s);
  }
  return p;
}

struct MlrosResult {
  std::vector<LabeledSample> samples;
  bool skipped = false;
  std::size_t clones = 0;
};

namespace detail {

struct MlrosState {
  std::vector<std::size_t> ones;  // per label
  double mean_level = 0.0;
  std::vector<std::size_t> bag;  // sample indices carrying >= 1 minority label
};

// Imbalance level of label j is max(ones) / ones(j); labels with zero ones
// are excluded (they cannot be oversampled). Minority labels sit above the
// mean level.
inline MlrosState mlros_state(const std::vector<LabeledSample>& samples, std::size_t n_labels) {
  MlrosState st;
  st.ones.assign(n_labels, 0);
  for (const LabeledSample& s : samples)
    for (std::size_t j = 0; j < n_labels; ++j)
      if (s.target[j]) ++st.ones[j];
  std::size_t max_ones = 0;
  for (std::size_t c : st.ones) max_ones = std::max(max_ones, c);
  if (max_ones == 0) return st;

  double sum = 0.0;
  std::size_t counted = 0;
  std::vector<double> level(n_labels, 0.0);
  for (std::size_t j = 0; j < n_labels; ++j) {
    if (st.ones[j] == 0) continue;
    level[j] = static_cast<double>(max_ones) / static_cast<double>(st.ones[j]);
    sum += level[j];
    ++counted;
  }
  st.mean_level = counted ? sum / static_cast<double>(counted) : 0.0;

  std::vector<char> minority(n_labels, 0);
  for (std::size_t j = 0; j < n_labels; ++j)
    if (st.ones[j] > 0 && level[j] > st.mean_level) minority[j] = 1;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LabeledSample& s = samples[i];
    for (std::size_t j = 0; j < n_labels; ++j)
      if (minority[j] && s.target[j]) {
        st.bag.push_back(i);
        break;
      }
  }
  return st;
}

}  // namespace detail

// Random oversampling of minority-label samples. Appends exact duplicates
// drawn uniformly from the minority bag until the collection holds
// ceil((1 + pct/100) * n) samples. The minority set is recomputed every
// ceil(10% of the clone budget) clones. Skipped entirely when the bag is
// empty or the mean imbalance level is at most `trigger`.
inline MlrosResult mlros_oversample(const std::vector<LabeledSample>& train, double pct,
                                    std::uint64_t seed, double trigger = 1.5) {
  if (pct < 0) throw ConfigError("oversampling percentage must be >= 0");
  MlrosResult r;
  r.samples = train;
  if (pct == 0.0 || train.empty()) return r;

  const std::size_t n_labels = train.front().target.size();
  detail::MlrosState st = detail::mlros_state(r.samples, n_labels);
  if (st.bag.empty() || st.mean_level <= trigger) {
    r.skipped = true;
    return r;
  }

  const std::size_t target_size =
      static_cast<std::size_t>(std::ceil((1.0 + pct / 100.0) * static_cast<double>(train.size())));
  const std::size_t budget = target_size - train.size();
  const std::size_t refresh = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(budget))));

  SplitMix64 rng(seed);
  for (std::size_t added = 0; added < budget; ++added) {
    if (added > 0 && added % refresh == 0) {
      detail::MlrosState fresh = detail::mlros_state(r.samples, n_labels);
      // A bag emptied mid-run keeps the previous one so the size contract holds.
      if (!fresh.bag.empty()) st = std::move(fresh);
    }
    std::size_t pick = st.bag[rng.uniform_index(st.bag.size())];
    r.samples.push_back(r.samples[pick]);
    ++r.clones;
  }
  return r;
}

// --- persistence ------------------------------------------------------------
// Sparse row file: "review_id idx idx ..." per row (indices of 1-entries);
// the companion file lists the active-user column order, one id per line.

inline void write_target_matrix(const TargetMatrix& m, const std::string& rows_path,
                                const std::string& users_path) {
  std::ofstream users(users_path, std::ios::binary);
  if (!users) throw ConfigError("cannot write file: " + users_path);
  for (const UserId& u : m.users.users) users << u << '\n';

  std::ofstream rows(rows_path, std::ios::binary);
  if (!rows) throw ConfigError("cannot write file: " + rows_path);
  for (const LabeledSample& s : m.rows) {
    rows << s.review_id;
    for (std::size_t j = 0; j < s.target.size(); ++j)
      if (s.target[j]) rows << ' ' << j;
    rows << '\n';
  }
}

inline ActiveUserSet read_active_users(const std::string& users_path) {
  std::ifstream in(users_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + users_path);
  ActiveUserSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    set.column[line] = set.users.size();
    set.users.push_back(line);
  }
  return set;
}

// Rebuilds samples from the sparse rows plus the dataset's review texts.
inline TargetMatrix read_target_matrix(const std::string& rows_path, const std::string& users_path,
                                       const DyadicDataset& d, bool include_title = true) {
  TargetMatrix m;
  m.users = read_active_users(users_path);
  std::ifstream in(rows_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + rows_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> parts = split_whitespace(line);
    LabeledSample s;
    s.review_id = parts[0];
    s.input_text = model_input_text(d.review(s.review_id), include_title);
    s.target.assign(m.users.size(), 0);
    for (std::size_t i = 1; i < parts.size(); ++i) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(parts[i]);
      } catch (const std::exception&) {
        throw DataError("bad column index on line " + std::to_string(line_no) + " of " +
                        rows_path);
      }
      if (idx >= m.users.size())
        throw DataError("column index out of range on line " + std::to_string(line_no) + " of " +
                        rows_path);
      s.target[idx] = 1;
    }
    m.rows.push_back(std::move(s));
  }
  return m;
}

inline void write_review_ids(const std::vector<LabeledSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  for (const LabeledSample& s : samples) out << s.review_id << '\n';
}

inline std::vector<LabeledSample> read_samples_by_id(const std::string& path,
                                                     const TargetMatrix& m) {
  std::unordered_map<ReviewId, const LabeledSample*> by_id;
  for (const LabeledSample& s : m.rows) by_id[s.review_id] = &s;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::vector<LabeledSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto it = by_id.find(line);
    if (it == by_id.end()) throw DataError("review id " + line + " in " + path + " not in targets");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace pter

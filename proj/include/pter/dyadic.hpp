#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pter/errors.hpp"
#include "pter/text.hpp"
#include "pter/tsv.hpp"

namespace pter {

using UserId = std::string;
using ItemId = std::string;
using ReviewId = std::string;

// One (user, item, score, review text) edge of the dyadic interaction graph.
struct Interaction {
  UserId user;
  ItemId item;
  int score = 0;  // 1..5
  ReviewId review_id;
  std::string text;
  std::string title;  // may be empty
  std::string city;
  std::string date;  // optional, kept verbatim

  bool positive() const { return score >= 4; }
};

enum class ContextKind { raw, positive, expanded };

struct ContextEdge {
  UserId user;
  ItemId item;
  int score;
};

inline bool operator==(const ContextEdge& a, const ContextEdge& b) {
  return a.user == b.user && a.item == b.item && a.score == b.score;
}

// A set of interaction edges keyed by (user, item); duplicate reviews of the
// same pair collapse (the maximum score wins, so polarity is row-order free).
struct ContextSet {
  UserId owner;
  ContextKind kind = ContextKind::raw;
  std::vector<ContextEdge> edges;  // sorted by (user, item), unique per pair

  bool empty() const { return edges.empty(); }
  std::size_t size() const { return edges.size(); }

  bool contains(const UserId& u, const ItemId& it) const {
    return std::any_of(edges.begin(), edges.end(),
                       [&](const ContextEdge& e) { return e.user == u && e.item == it; });
  }
};

namespace detail {

inline void insert_edge(std::map<std::pair<UserId, ItemId>, int>& acc, const UserId& u,
                        const ItemId& it, int score) {
  auto key = std::make_pair(u, it);
  auto [pos, inserted] = acc.emplace(key, score);
  if (!inserted && score > pos->second) pos->second = score;
}

inline ContextSet finish_context(UserId owner, ContextKind kind,
                                 const std::map<std::pair<UserId, ItemId>, int>& acc) {
  ContextSet ctx;
  ctx.owner = std::move(owner);
  ctx.kind = kind;
  ctx.edges.reserve(acc.size());
  for (const auto& [key, score] : acc) ctx.edges.push_back({key.first, key.second, score});
  return ctx;
}

// Empty cells and the usual null spellings count as missing values.
inline bool is_null_field(std::string_view s) {
  if (s.empty()) return true;
  std::string low = to_lower_ascii(s);
  return low == "null" || low == "none" || low == "nan" || low == "n/a";
}

}  // namespace detail

// Review counts, positive-user density and an items-liked-per-user histogram.
struct StatsReport {
  std::size_t total_reviews = 0;
  std::size_t positive_reviews = 0;
  std::size_t negative_reviews = 0;
  std::size_t distinct_positive_users = 0;
  std::size_t distinct_items = 0;  // items with >= 1 positive review
  bool ratio_defined = false;
  double review_user_ratio = std::numeric_limits<double>::quiet_NaN();
  std::map<std::size_t, std::size_t> items_liked_histogram;  // #items liked -> #users
};

enum class DatasetFormat { tripadvisor_tsv, extra_triplets };

inline DatasetFormat parse_format(std::string_view tag) {
  if (tag == "tripadvisor-tsv") return DatasetFormat::tripadvisor_tsv;
  if (tag == "extra-triplets") return DatasetFormat::extra_triplets;
  throw ConfigError("unknown dataset format tag: '" + std::string(tag) + "'");
}

// Immutable after construction; one city per dataset.
class DyadicDataset {
public:
  DyadicDataset() = default;

  DyadicDataset(std::vector<Interaction> interactions, std::string city,
                std::size_t discarded_rows = 0)
      : interactions_(std::move(interactions)), city_(std::move(city)),
        discarded_rows_(discarded_rows) {
    for (std::size_t i = 0; i < interactions_.size(); ++i) {
      const Interaction& x = interactions_[i];
      if (x.user.empty() || x.item.empty() || x.review_id.empty())
        throw DataError("interaction with empty identifier at position " + std::to_string(i));
      if (x.score < 1 || x.score > 5)
        throw DataError("interaction " + x.review_id + " has score outside [1,5]");
      if (!review_index_.emplace(x.review_id, i).second)
        throw DataError("duplicate review_id: " + x.review_id);
      user_index_[x.user].push_back(i);
      item_index_[x.item].push_back(i);
    }
  }

  const std::vector<Interaction>& interactions() const { return interactions_; }
  const std::string& city() const { return city_; }
  std::size_t discarded_rows() const { return discarded_rows_; }
  std::size_t size() const { return interactions_.size(); }

  bool has_user(const UserId& u) const { return user_index_.count(u) > 0; }
  bool has_item(const ItemId& it) const { return item_index_.count(it) > 0; }
  bool has_review(const ReviewId& r) const { return review_index_.count(r) > 0; }

  const Interaction& review(const ReviewId& r) const {
    auto it = review_index_.find(r);
    if (it == review_index_.end()) throw NotFoundError("unknown review_id: " + r);
    return interactions_[it->second];
  }

  const std::vector<std::size_t>& user_rows(const UserId& u) const {
    auto it = user_index_.find(u);
    if (it == user_index_.end()) throw NotFoundError("unknown user: " + u);
    return it->second;
  }

  const std::vector<std::size_t>& item_rows(const ItemId& it) const {
    auto pos = item_index_.find(it);
    if (pos == item_index_.end()) throw NotFoundError("unknown item: " + it);
    return pos->second;
  }

  std::vector<UserId> users() const {
    std::vector<UserId> out;
    out.reserve(user_index_.size());
    for (const auto& [u, _] : user_index_) out.push_back(u);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<ItemId> items() const {
    std::vector<ItemId> out;
    out.reserve(item_index_.size());
    for (const auto& [it, _] : item_index_) out.push_back(it);
    std::sort(out.begin(), out.end());
    return out;
  }

private:
  std::vector<Interaction> interactions_;
  std::string city_;
  std::size_t discarded_rows_ = 0;
  std::unordered_map<UserId, std::vector<std::size_t>> user_index_;
  std::unordered_map<ItemId, std::vector<std::size_t>> item_index_;
  std::unordered_map<ReviewId, std::size_t> review_index_;
};

namespace detail {

inline int parse_score(const std::string& field, std::size_t row, const std::string& path) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(field, &pos);
  } catch (const std::exception&) {
    throw DataError("malformed row " + std::to_string(row) + " in " + path +
                    ": non-integer score '" + field + "'");
  }
  if (pos != field.size() || v < 1 || v > 5)
    throw DataError("malformed row " + std::to_string(row) + " in " + path +
                    ": score '" + field + "' outside [1,5]");
  return v;
}

inline DyadicDataset ingest_tripadvisor(const std::string& path, const std::string& city_filter) {
  TsvReader reader(path);
  const std::size_t c_user = reader.column("user_id");
  const std::size_t c_item = reader.column("restaurant_name");
  const std::size_t c_score = reader.column("rating_review");
  const std::size_t c_review = reader.column("review_id");
  const std::size_t c_title = reader.column("title_review");
  const std::size_t c_text = reader.column("review_full");
  const std::size_t c_city = reader.column("city");
  const bool has_date = reader.has_column("date");
  const std::size_t c_date = has_date ? reader.column("date") : 0;

  std::vector<Interaction> rows;
  std::set<std::string> cities_seen;
  std::size_t discarded = 0;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const std::string& city = f[c_city];
    if (!city_filter.empty() && city != city_filter) continue;
    if (is_null_field(f[c_text]) || is_null_field(f[c_score])) {
      ++discarded;
      continue;
    }
    Interaction x;
    x.user = f[c_user];
    x.item = f[c_item];
    x.score = parse_score(f[c_score], reader.row_number(), path);
    x.review_id = f[c_review];
    x.title = is_null_field(f[c_title]) ? std::string() : f[c_title];
    x.text = f[c_text];
    x.city = city;
    if (has_date && !is_null_field(f[c_date])) x.date = f[c_date];
    cities_seen.insert(city);
    rows.push_back(std::move(x));
  }
  if (city_filter.empty() && cities_seen.size() > 1) {
    std::string msg = "file " + path + " contains multiple cities (";
    bool first = true;
    for (const auto& c : cities_seen) {
      if (!first) msg += ", ";
      msg += c;
      first = false;
    }
    throw ConfigError(msg + "); pass an explicit city to split on");
  }
  std::string city = city_filter;
  if (city.empty() && !cities_seen.empty()) city = *cities_seen.begin();
  return DyadicDataset(std::move(rows), city, discarded);
}

inline DyadicDataset ingest_extra(const std::string& path, const std::string& label) {
  TsvReader reader(path);
  const std::size_t c_user = reader.column("user_id");
  const std::size_t c_item = reader.column("item_id");
  const std::size_t c_expl = reader.column("explanation_id");
  const std::size_t c_text = reader.column("explanation_text");
  const std::size_t c_score = reader.column("score");

  std::vector<Interaction> rows;
  std::size_t discarded = 0;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (is_null_field(f[c_text]) || is_null_field(f[c_score])) {
      ++discarded;
      continue;
    }
    Interaction x;
    x.user = f[c_user];
    x.item = f[c_item];
    x.score = parse_score(f[c_score], reader.row_number(), path);
    x.review_id = f[c_expl];
    x.text = f[c_text];
    x.city = label;
    rows.push_back(std::move(x));
  }
  return DyadicDataset(std::move(rows), label, discarded);
}

}  // namespace detail

// Loads a dataset file. Rows with empty/null text or score are discarded and
// counted; structurally malformed rows reject the whole file. A TripAdvisor
// file spanning several cities must be split by passing `city`.
inline DyadicDataset ingest_reviews(const std::string& path, DatasetFormat format,
                                    const std::string& city = "") {
  switch (format) {
    case DatasetFormat::tripadvisor_tsv:
      return detail::ingest_tripadvisor(path, city);
    case DatasetFormat::extra_triplets:
      return detail::ingest_extra(path, city);
  }
  throw ConfigError("unhandled dataset format");
}

// Writes a dataset back out in the TripAdvisor column layout, so
// ingest -> serialize -> ingest round-trips.
inline void write_tripadvisor_tsv(const DyadicDataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << "parse_count\tuser_id\tauthor\trestaurant_name\trating_review\tsample\treview_id\t"
         "title_review\treview_preview\treview_full\turl_review\tdate\tcity\turl_restaurant\n";
  std::size_t n = 0;
  for (const Interaction& x : d.interactions()) {
    out << n++ << '\t' << sanitize_tsv_field(x.user) << '\t' << sanitize_tsv_field(x.user) << '\t'
        << sanitize_tsv_field(x.item) << '\t' << x.score << '\t'
        << (x.positive() ? "Positive" : "Negative") << '\t' << sanitize_tsv_field(x.review_id)
        << '\t' << sanitize_tsv_field(x.title) << '\t' << "" << '\t' << sanitize_tsv_field(x.text)
        << '\t' << "" << '\t' << sanitize_tsv_field(x.date) << '\t' << sanitize_tsv_field(x.city)
        << '\t' << "" << '\n';
  }
}

// Keeps exactly the interactions with score in [4,5], preserving order.
inline DyadicDataset filter_positive(const DyadicDataset& d) {
  std::vector<Interaction> rows;
  rows.reserve(d.size());
  for (const Interaction& x : d.interactions())
    if (x.positive()) rows.push_back(x);
  return DyadicDataset(std::move(rows), d.city());
}

// All edges leaving user u; positive_only restricts to scores in [4,5].
inline ContextSet user_context(const DyadicDataset& d, const UserId& u, bool positive_only) {
  std::map<std::pair<UserId, ItemId>, int> acc;
  for (std::size_t i : d.user_rows(u)) {
    const Interaction& x = d.interactions()[i];
    if (positive_only && !x.positive()) continue;
    detail::insert_edge(acc, x.user, x.item, x.score);
  }
  return detail::finish_context(u, positive_only ? ContextKind::positive : ContextKind::raw, acc);
}

// Positive edges from other users toward an item u itself liked. Defined only
// when u positively interacted with the item.
inline ContextSet restaurant_context(const DyadicDataset& d, const UserId& u, const ItemId& it) {
  bool u_positive = false;
  for (std::size_t i : d.user_rows(u)) {
    const Interaction& x = d.interactions()[i];
    if (x.item == it && x.positive()) {
      u_positive = true;
      break;
    }
  }
  if (!u_positive)
    throw NotFoundError("restaurant context undefined: user " + u +
                        " has no positive interaction with item " + it);
  std::map<std::pair<UserId, ItemId>, int> acc;
  for (std::size_t i : d.item_rows(it)) {
    const Interaction& x = d.interactions()[i];
    if (x.user != u && x.positive()) detail::insert_edge(acc, x.user, x.item, x.score);
  }
  return detail::finish_context(u, ContextKind::positive, acc);
}

// Positive user context plus, for every item u liked, the other users'
// positive edges toward that item.
inline ContextSet expanded_context(const DyadicDataset& d, const UserId& u) {
  std::map<std::pair<UserId, ItemId>, int> acc;
  std::set<ItemId> liked;
  for (std::size_t i : d.user_rows(u)) {
    const Interaction& x = d.interactions()[i];
    if (!x.positive()) continue;
    detail::insert_edge(acc, x.user, x.item, x.score);
    liked.insert(x.item);
  }
  for (const ItemId& it : liked) {
    for (std::size_t i : d.item_rows(it)) {
      const Interaction& x = d.interactions()[i];
      if (x.user != u && x.positive()) detail::insert_edge(acc, x.user, x.item, x.score);
    }
  }
  return detail::finish_context(u, ContextKind::expanded, acc);
}

inline StatsReport dataset_stats(const DyadicDataset& d) {
  StatsReport r;
  std::unordered_map<UserId, std::set<ItemId>> liked_items;
  std::unordered_set<ItemId> positive_items;
  for (const Interaction& x : d.interactions()) {
    ++r.total_reviews;
    if (x.positive()) {
      ++r.positive_reviews;
      liked_items[x.user].insert(x.item);
      positive_items.insert(x.item);
    } else {
      ++r.negative_reviews;
    }
  }
  r.distinct_positive_users = liked_items.size();
  r.distinct_items = positive_items.size();
  if (r.distinct_positive_users > 0) {
    r.ratio_defined = true;
    r.review_user_ratio =
        static_cast<double>(r.positive_reviews) / static_cast<double>(r.distinct_positive_users);
  }
  for (const auto& [user, items] : liked_items) ++r.items_liked_histogram[items.size()];
  return r;
}

}  // namespace pter

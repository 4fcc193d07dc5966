#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "pter/dyadic.hpp"

namespace ptest {

// Unique scratch directory, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    auto base = std::filesystem::temp_directory_path();
    path_ = base / ("pter_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Toy graph G1: users {u1,u2,u3}, items {r1,r2},
// edges (u1,r1,5), (u2,r1,4), (u2,r2,5), (u3,r2,2).
inline std::vector<pter::Interaction> g1_interactions() {
  return {
      {"u1", "r1", 5, "rev1", "loved the paella here", "", "testville", ""},
      {"u2", "r1", 4, "rev2", "great seafood and service", "", "testville", ""},
      {"u2", "r2", 5, "rev3", "amazing vegan tofu bowls", "", "testville", ""},
      {"u3", "r2", 2, "rev4", "overpriced and slow", "", "testville", ""},
  };
}

inline pter::DyadicDataset g1() { return pter::DyadicDataset(g1_interactions(), "testville"); }

inline std::string tripadvisor_header() {
  return "parse_count\tuser_id\tauthor\trestaurant_name\trating_review\tsample\treview_id\t"
         "title_review\treview_preview\treview_full\turl_review\tdate\tcity\turl_restaurant\n";
}

inline std::string tripadvisor_row(const pter::Interaction& x, int n) {
  std::string sample = x.score >= 4 ? "Positive" : "Negative";
  return std::to_string(n) + "\t" + x.user + "\t" + x.user + "\t" + x.item + "\t" +
         std::to_string(x.score) + "\t" + sample + "\t" + x.review_id + "\t" + x.title + "\t\t" +
         x.text + "\t\t" + x.date + "\t" + x.city + "\t\n";
}

inline std::string g1_tsv() {
  std::string out = tripadvisor_header();
  int n = 0;
  for (const auto& x : g1_interactions()) out += tripadvisor_row(x, n++);
  return out;
}

// Random dyadic graph for property tests; every review gets a distinct id.
inline pter::DyadicDataset random_dataset(std::mt19937& gen, int max_users = 15,
                                          int max_items = 10, int max_reviews = 60) {
  std::uniform_int_distribution<int> users(1, max_users), items(1, max_items),
      reviews(1, max_reviews), score(1, 5);
  const int n_users = users(gen), n_items = items(gen), n_reviews = reviews(gen);
  std::uniform_int_distribution<int> pick_user(0, n_users - 1), pick_item(0, n_items - 1);
  std::vector<pter::Interaction> rows;
  for (int r = 0; r < n_reviews; ++r) {
    pter::Interaction x;
    x.user = "u" + std::to_string(pick_user(gen));
    x.item = "i" + std::to_string(pick_item(gen));
    x.score = score(gen);
    x.review_id = "rev" + std::to_string(r);
    x.text = "text about " + x.item + " from " + x.user;
    x.city = "rand";
    rows.push_back(std::move(x));
  }
  return pter::DyadicDataset(std::move(rows), "rand");
}

}  // namespace ptest

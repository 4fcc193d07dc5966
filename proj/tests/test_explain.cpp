#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pter/explain.hpp"
#include "test_util.hpp"

using namespace pter;

namespace {

EvalResources fixture_resources(const ptest::TempDir& dir,
                                const std::string& lexicon = "paella\nseafood\nservice\nbeach\n",
                                const std::string& lemmas = "paellas\tpaella\n") {
  ptest::write_file(dir.file("stopwords.txt"), "the\nwas\nand\nis\na\nan\nof\n");
  ptest::write_file(dir.file("lexicon.txt"), lexicon);
  ptest::write_file(dir.file("lemmas.tsv"), lemmas);
  return EvalResources::load(dir.file("stopwords.txt"), dir.file("lexicon.txt"),
                             dir.file("lemmas.tsv"));
}

}  // namespace

TEST_CASE("make_ranking orders by probability with id tie-break") {
  Ranking r = make_ranking("u", "it", {{"a", 0.2}, {"b", 0.9}, {"c", 0.6}});
  REQUIRE(r.entries.size() == 3);
  REQUIRE(r.entries[0].review == "b");
  REQUIRE(r.entries[1].review == "c");
  REQUIRE(r.entries[2].review == "a");

  SECTION("equal probabilities fall back to ascending review id") {
    Ranking t = make_ranking("u", "it", {{"z", 0.5}, {"a", 0.5}, {"m", 0.5}});
    REQUIRE(t.entries[0].review == "a");
    REQUIRE(t.entries[1].review == "m");
    REQUIRE(t.entries[2].review == "z");
  }
  SECTION("singleton ranking") {
    Ranking s = make_ranking("u", "it", {{"only", 0.4}});
    REQUIRE(s.entries.size() == 1);
  }
  SECTION("empty candidate set is an error") {
    REQUIRE_THROWS_AS(make_ranking("u", "it", {}), DataError);
  }
  SECTION("the top entry survives any monotone rescaling of the scores") {
    std::vector<RankEntry> scored = {{"a", 0.21}, {"b", 0.87}, {"c", 0.55}, {"d", 0.3}};
    Ranking base = make_ranking("u", "it", scored);
    for (auto& e : scored) e.probability = 1.0 / (1.0 + std::exp(-7.0 * e.probability));
    Ranking warped = make_ranking("u", "it", scored);
    REQUIRE(base.entries[0].review == warped.entries[0].review);
  }
}

TEST_CASE("rank_reviews scores an item's reviews for one user column") {
  auto provider = hashed_surrogate_provider(5, 4);
  HeadConfig cfg;
  cfg.hidden_size = 3;
  cfg.dense_size = 6;
  cfg.output_size = 4;
  cfg.seed = 2;
  HeadParams params = init_head_params(provider->dim(), cfg);

  std::vector<Interaction> rows = {
      {"u1", "r1", 5, "reva", "loved the paella and wine", "", "c", ""},
      {"u2", "r1", 4, "revb", "friendly staff decent tapas", "", "c", ""},
      {"u3", "r1", 5, "revc", "the terrace view is great", "", "c", ""},
  };
  std::vector<const Interaction*> reviews = {&rows[0], &rows[1], &rows[2]};
  Ranking r = rank_reviews(params, *provider, PreprocessConfig{}, "u1", 0, "r1", reviews);
  REQUIRE(r.entries.size() == 3);
  for (std::size_t i = 1; i < r.entries.size(); ++i)
    REQUIRE(r.entries[i - 1].probability >= r.entries[i].probability);
  for (const RankEntry& e : r.entries) {
    REQUIRE(e.probability > 0.0);
    REQUIRE(e.probability < 1.0);
  }

  SECTION("empty review set is an error") {
    REQUIRE_THROWS_AS(rank_reviews(params, *provider, PreprocessConfig{}, "u1", 0, "r1", {}),
                      DataError);
  }
  SECTION("out-of-range user column is rejected") {
    REQUIRE_THROWS_AS(rank_reviews(params, *provider, PreprocessConfig{}, "u1", 9, "r1", reviews),
                      ConfigError);
  }
}

TEST_CASE("predicted_context takes the ranking prefix") {
  std::vector<RankEntry> entries;
  for (int i = 0; i < 120; ++i)
    entries.push_back({"r" + std::to_string(1000 + i), 1.0 - i * 0.001});
  Ranking r = make_ranking("u", "it", entries);
  REQUIRE(predicted_context(r, 50).entries.size() == 50);
  REQUIRE(predicted_context(r, 50).entries[0].review == r.entries[0].review);

  Ranking short_r = make_ranking("u", "it", {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}});
  REQUIRE(predicted_context(short_r, 50).entries.size() == 3);
  REQUIRE(predicted_context(short_r, 5).entries.size() == 3);
  REQUIRE_THROWS_AS(predicted_context(short_r, 0), ConfigError);
}

TEST_CASE("eval_filter pipeline") {
  ptest::TempDir dir;
  EvalResources res = fixture_resources(dir);

  REQUIRE(eval_filter("The paella was amazing!!", res) == std::vector<std::string>{"paella"});
  REQUIRE(eval_filter("The was and of", res).empty());
  REQUIRE(eval_filter("", res).empty());

  SECTION("plural forms fold through the lemma table when the lexicon admits the lemma") {
    REQUIRE(eval_filter("paellas", res) == std::vector<std::string>{"paella"});
  }
  SECTION("tokens outside the noun lexicon are dropped") {
    REQUIRE(eval_filter("wonderful paella tonight", res) == std::vector<std::string>{"paella"});
  }
  SECTION("non-alphanumerics split tokens") {
    REQUIRE(eval_filter("seafood,paella;beach", res) ==
            std::vector<std::string>{"seafood", "paella", "beach"});
  }
  SECTION("missing resource files are configuration errors") {
    REQUIRE_THROWS_AS(
        EvalResources::load(dir.file("nope.txt"), dir.file("lexicon.txt"), dir.file("lemmas.tsv")),
        ConfigError);
  }
}

TEST_CASE("shipped resource files load and filter") {
  EvalResources res = EvalResources::load(PTER_SOURCE_DIR "/resources/stopwords_en.txt",
                                          PTER_SOURCE_DIR "/resources/demo_lexicon.txt",
                                          PTER_SOURCE_DIR "/resources/demo_lemmas.tsv");
  REQUIRE(eval_filter("The paellas were amazing, great service!", res) ==
          std::vector<std::string>{"paella", "service"});
  REQUIRE(eval_filter("We will be back", res).empty());
}

TEST_CASE("fit_tfidf") {
  std::vector<std::vector<std::string>> docs = {{"paella", "seafood"}, {"vegan", "tofu"}};
  TfIdfModel m = TfIdfModel::fit(docs, 0);
  const double ln2 = std::log(2.0);

  SECTION("every term appearing in one of two docs has idf ln 2") {
    for (const char* term : {"paella", "seafood", "vegan", "tofu"})
      REQUIRE(m.idf(term) == Catch::Approx(ln2));
    Eigen::VectorXd v = m.transform(docs[0]);
    REQUIRE(v.sum() == Catch::Approx(2.0 * ln2));
  }
  SECTION("a term in every document has idf 0") {
    TfIdfModel all = TfIdfModel::fit({{"food", "paella"}, {"food", "tofu"}}, 0);
    REQUIRE(all.idf("food") == Catch::Approx(0.0));
  }
  SECTION("ban_top forces the most frequent term to zero weight") {
    TfIdfModel banned =
        TfIdfModel::fit({{"food", "food", "paella"}, {"food", "tofu"}}, 1);
    REQUIRE(banned.is_banned("food"));
    Eigen::VectorXd v = banned.transform({"food", "food", "paella"});
    REQUIRE(v.sum() == Catch::Approx(banned.idf("paella")));
  }
  SECTION("weights are non-negative and absent terms contribute nothing") {
    Eigen::VectorXd v = m.transform({"paella", "nothere"});
    REQUIRE(v.minCoeff() >= 0.0);
    REQUIRE(v.sum() == Catch::Approx(ln2));
  }
  SECTION("empty corpus is rejected") {
    REQUIRE_THROWS_AS(TfIdfModel::fit({}, 0), DataError);
  }
}

TEST_CASE("cumulative_vector sums the context's review vectors") {
  TfIdfModel m = TfIdfModel::fit({{"paella", "seafood"}, {"vegan", "tofu"}, {"beach"}}, 0);
  std::unordered_map<ReviewId, std::vector<std::string>> filtered = {
      {"r1", {"paella", "seafood"}},
      {"r2", {"vegan", "tofu"}},
      {"r3", {"beach", "paella"}},
  };
  PredictedContext one{"u", "it", {{"r1", 0.9}}};
  PredictedContext two{"u", "it", {{"r1", 0.9}, {"r2", 0.8}}};

  SECTION("singleton equals that review's vector") {
    REQUIRE((cumulative_vector(m, one, filtered) - m.transform(filtered["r1"])).norm() == 0.0);
  }
  SECTION("disjoint supports union") {
    Eigen::VectorXd v = cumulative_vector(m, two, filtered);
    REQUIRE(v.cwiseAbs().sum() ==
            Catch::Approx((m.transform(filtered["r1"]) + m.transform(filtered["r2"])).sum()));
  }
  SECTION("order of the reviews does not matter") {
    PredictedContext fwd{"u", "it", {{"r1", 0.9}, {"r2", 0.8}, {"r3", 0.7}}};
    PredictedContext rev{"u", "it", {{"r3", 0.9}, {"r2", 0.8}, {"r1", 0.7}}};
    REQUIRE((cumulative_vector(m, fwd, filtered) - cumulative_vector(m, rev, filtered)).norm() ==
            0.0);
  }
  SECTION("empty context is an error") {
    PredictedContext empty{"u", "it", {}};
    REQUIRE_THROWS_AS(cumulative_vector(m, empty, filtered), DataError);
  }
}

TEST_CASE("extract_keywords picks the heaviest terms") {
  TfIdfModel m = TfIdfModel::fit({{"alpha"}, {"beta"}, {"gamma"}, {"delta"}}, 0);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.vocabulary_size()));
  auto index_of = [&](const std::string& t) {
    const auto& terms = m.terms();
    return static_cast<Eigen::Index>(std::find(terms.begin(), terms.end(), t) - terms.begin());
  };
  v(index_of("alpha")) = 2.0;
  v(index_of("beta")) = 2.0;
  v(index_of("gamma")) = 1.0;

  SECTION("ties break by term text") {
    REQUIRE(extract_keywords(v, m, 2) == std::vector<std::string>{"alpha", "beta"});
  }
  SECTION("fewer nonzero terms than k returns them all") {
    Eigen::VectorXd sparse = Eigen::VectorXd::Zero(v.size());
    sparse(index_of("gamma")) = 1.0;
    REQUIRE(extract_keywords(sparse, m, 3) == std::vector<std::string>{"gamma"});
  }
}

TEST_CASE("score_review discounts keyword hits logarithmically") {
  std::vector<std::string> review;
  for (int i = 0; i < 3; ++i) review.push_back("paella");
  review.push_back("beach");
  const std::vector<std::string> keywords = {"paella", "beach"};

  REQUIRE(score_review(review, keywords, 1) == Catch::Approx(4.0));
  REQUIRE(score_review(review, keywords, 6) == Catch::Approx(4.0 / std::log2(7.0)));
  REQUIRE(score_review({"nothing", "relevant"}, keywords, 3) == 0.0);
  REQUIRE_THROWS_AS(score_review(review, keywords, 0), ConfigError);
}

TEST_CASE("select_explanation") {
  // rank-3 review carries every keyword twice; rank-1 carries none
  TfIdfModel m = TfIdfModel::fit(
      {{"paella", "seafood", "beach"}, {"vegan"}, {"tofu"}, {"filler"}}, 0);
  std::unordered_map<ReviewId, std::vector<std::string>> filtered = {
      {"top", {"vegan"}},
      {"mid", {"tofu"}},
      {"rich", {"paella", "paella", "seafood", "seafood", "beach", "beach"}},
  };
  PredictedContext pc{"u", "it", {{"top", 0.9}, {"mid", 0.8}, {"rich", 0.7}}};
  Explanation ex = select_explanation(pc, m, filtered, 3);

  REQUIRE(ex.review == "rich");
  REQUIRE(ex.rank_pos == 3);
  REQUIRE_FALSE(ex.fallback);
  REQUIRE(ex.keywords == std::vector<std::string>{"beach", "paella", "seafood"});

  SECTION("selection is always a member of the context") {
    bool member = false;
    for (const auto& e : pc.entries) member = member || e.review == ex.review;
    REQUIRE(member);
  }
  SECTION("doubling every count leaves the winner unchanged") {
    auto doubled = filtered;
    for (auto& [id, tokens] : doubled) {
      auto copy = tokens;
      tokens.insert(tokens.end(), copy.begin(), copy.end());
    }
    REQUIRE(select_explanation(pc, m, doubled, 3).review == ex.review);
  }
  SECTION("singleton context returns its only review") {
    PredictedContext solo{"u", "it", {{"mid", 0.5}}};
    REQUIRE(select_explanation(solo, m, filtered, 3).review == "mid");
  }
  SECTION("all-zero scores fall back to the rank-1 review, flagged") {
    std::unordered_map<ReviewId, std::vector<std::string>> blank = {
        {"top", {}}, {"mid", {}}, {"rich", {}}};
    Explanation fb = select_explanation(pc, m, blank, 3);
    REQUIRE(fb.review == "top");
    REQUIRE(fb.rank_pos == 1);
    REQUIRE(fb.fallback);
  }
}

TEST_CASE("explanations export as TSV") {
  ptest::TempDir dir;
  PredictedContext pc{"john", "salamanca", {{"r9", 0.9}}};
  Explanation ex{"r9", 1, 2.5, {"paella", "seafood"}, false};
  write_explanations_tsv({{pc, ex}}, dir.file("explanations.tsv"));

  TsvReader reader(dir.file("explanations.tsv"));
  std::vector<std::string> f;
  REQUIRE(reader.next(f));
  REQUIRE(f[reader.column("user_id")] == "john");
  REQUIRE(f[reader.column("review_id")] == "r9");
  REQUIRE(f[reader.column("keywords")] == "paella,seafood");
  REQUIRE_FALSE(reader.next(f));
}

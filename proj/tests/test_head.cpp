#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "pter/head.hpp"
#include "test_util.hpp"

using namespace pter;

namespace {

Eigen::MatrixXd random_embed(Eigen::Index t, Eigen::Index d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd m(t, d);
  for (Eigen::Index r = 0; r < t; ++r)
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
  return m;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-8);
}

HeadConfig tiny_config(int out = 5) {
  HeadConfig cfg;
  cfg.hidden_size = 3;
  cfg.dense_size = 6;
  cfg.output_size = out;
  cfg.dropout_rate = 0.0;
  cfg.seed = 17;
  return cfg;
}

// Learnable toy task: three token families map to three labels.
Partitions toy_partitions(int train_n, int val_n) {
  const std::vector<std::string> words = {"apple", "bridge", "cloud"};
  Partitions parts;
  SplitMix64 rng(99);
  auto make = [&](int i) {
    const std::size_t family = rng.uniform_index(3);
    LabeledSample s;
    s.review_id = "s" + std::to_string(i);
    s.input_text = words[family] + " " + words[family] + " filler" +
                   std::to_string(rng.uniform_index(4));
    s.target = {0, 0, 0};
    s.target[family] = 1;
    return s;
  };
  for (int i = 0; i < train_n; ++i) parts.train.push_back(make(i));
  for (int i = 0; i < val_n; ++i) parts.validation.push_back(make(train_n + i));
  return parts;
}

}  // namespace

TEST_CASE("bilstm_forward shape and numeric contract") {
  HeadConfig cfg = tiny_config();
  cfg.hidden_size = 4;
  HeadParams p = init_head_params(8, cfg);
  Eigen::MatrixXd embed = random_embed(3, 8, 1);
  Eigen::MatrixXd seq = bilstm_forward(p, embed);
  REQUIRE(seq.rows() == 3);
  REQUIRE(seq.cols() == 8);  // 2H

  SECTION("input width mismatch is a shape error") {
    REQUIRE_THROWS_AS(bilstm_forward(p, random_embed(3, 5, 1)), DataError);
  }
}

TEST_CASE("lstm cell gradients match central finite differences") {
  HeadConfig cfg = tiny_config();
  HeadParams p = init_head_params(6, cfg);
  Eigen::MatrixXd embed = random_embed(4, 6, 2);

  // scalar loss L = 0.5 * ||S||^2 over one direction
  auto loss_of = [&](const LstmCellParams& cell) {
    Eigen::MatrixXd s = detail::lstm_forward(cell, embed, false, nullptr);
    return 0.5 * s.squaredNorm();
  };
  detail::LstmCache cache;
  Eigen::MatrixXd s = detail::lstm_forward(p.fwd, embed, false, &cache);
  LstmCellParams grads = zeros_like(p).fwd;
  detail::lstm_backward(p.fwd, embed, cache, s, grads);

  const double h = 1e-6;
  auto check_tensor = [&](Eigen::MatrixXd& theta, const Eigen::MatrixXd& grad) {
    for (Eigen::Index r = 0; r < theta.rows(); ++r)
      for (Eigen::Index c = 0; c < theta.cols(); ++c) {
        const double keep = theta(r, c);
        theta(r, c) = keep + h;
        const double up = loss_of(p.fwd);
        theta(r, c) = keep - h;
        const double down = loss_of(p.fwd);
        theta(r, c) = keep;
        const double numeric = (up - down) / (2.0 * h);
        REQUIRE(relative_error(grad(r, c), numeric) < 1e-4);
      }
  };
  check_tensor(p.fwd.Wi, grads.Wi);
  check_tensor(p.fwd.Uf, grads.Uf);
  check_tensor(p.fwd.Wo, grads.Wo);
  check_tensor(p.fwd.Ug, grads.Ug);
  // bias vectors via the same route
  for (Eigen::Index i = 0; i < p.fwd.bg.size(); ++i) {
    const double keep = p.fwd.bg(i);
    p.fwd.bg(i) = keep + h;
    const double up = loss_of(p.fwd);
    p.fwd.bg(i) = keep - h;
    const double down = loss_of(p.fwd);
    p.fwd.bg(i) = keep;
    REQUIRE(relative_error(grads.bg(i), (up - down) / (2.0 * h)) < 1e-4);
  }
}

TEST_CASE("reversed input swaps the directional halves under shared cells") {
  HeadConfig cfg = tiny_config();
  HeadParams p = init_head_params(6, cfg);
  p.bwd = p.fwd;  // shared weights
  const Eigen::Index t_count = 5;
  Eigen::MatrixXd embed = random_embed(t_count, 6, 3);
  Eigen::MatrixXd reversed = embed.colwise().reverse();

  Eigen::MatrixXd s = bilstm_forward(p, embed);
  Eigen::MatrixXd s_rev = bilstm_forward(p, reversed);
  const Eigen::Index hidden = cfg.hidden_size;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    REQUIRE((s_rev.row(t).head(hidden) - s.row(t_count - 1 - t).tail(hidden)).norm() < 1e-12);
    REQUIRE((s_rev.row(t).tail(hidden) - s.row(t_count - 1 - t).head(hidden)).norm() < 1e-12);
  }
}

TEST_CASE("pool_concat means then maxima") {
  Eigen::MatrixXd s(2, 2);
  s << 1, 3, 5, 1;
  Eigen::VectorXd v = pool_concat(s);
  REQUIRE(v.size() == 4);
  REQUIRE(v(0) == Catch::Approx(3.0));
  REQUIRE(v(1) == Catch::Approx(2.0));
  REQUIRE(v(2) == Catch::Approx(5.0));
  REQUIRE(v(3) == Catch::Approx(3.0));

  SECTION("single step: both halves equal the row") {
    Eigen::MatrixXd one(1, 3);
    one << -1, 0, 2;
    Eigen::VectorXd pooled = pool_concat(one);
    REQUIRE(pooled.head(3) == pooled.tail(3));
  }
  SECTION("max half dominates avg half coordinate-wise") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      Eigen::MatrixXd m = random_embed(7, 5, seed);
      Eigen::VectorXd pooled = pool_concat(m);
      for (Eigen::Index c = 0; c < 5; ++c) REQUIRE(pooled(5 + c) >= pooled(c) - 1e-15);
    }
  }
  SECTION("reference width: 2H = 512 pools to 1024") {
    HeadConfig cfg;
    cfg.hidden_size = 256;
    cfg.dense_size = 512;
    cfg.output_size = 4;
    HeadParams p = init_head_params(8, cfg);
    REQUIRE(pool_concat(bilstm_forward(p, random_embed(2, 8, 4))).size() == 1024);
  }
}

TEST_CASE("head_forward") {
  HeadConfig cfg = tiny_config();
  HeadParams p = init_head_params(8, cfg);
  Eigen::MatrixXd embed = random_embed(4, 8, 5);

  SECTION("zero output layer gives probability one half everywhere") {
    p.out_w.setZero();
    p.out_b.setZero();
    Eigen::VectorXd probs = head_forward(p, embed, false, 0.0, 0);
    for (Eigen::Index j = 0; j < probs.size(); ++j) REQUIRE(probs(j) == Catch::Approx(0.5));
  }
  SECTION("inference is deterministic") {
    REQUIRE(head_forward(p, embed, false, 0.0, 1) == head_forward(p, embed, false, 0.0, 2));
  }
  SECTION("training dropout zeroes the seeded mask and rescales survivors") {
    const double rate = 0.1;
    const std::uint64_t seed = 42;
    // independently enumerate the mask from the same seeded generator
    SplitMix64 rng(seed);
    const Eigen::Index width = 4 * cfg.hidden_size;
    Eigen::VectorXd mask(width);
    for (Eigen::Index i = 0; i < width; ++i)
      mask(i) = rng.uniform01() < rate ? 0.0 : 1.0 / (1.0 - rate);

    Eigen::VectorXd pooled = pool_concat(bilstm_forward(p, embed));
    Eigen::VectorXd z1 = p.dense_w * pooled.cwiseProduct(mask) + p.dense_b;
    Eigen::VectorXd z2 = p.out_w * z1.cwiseMax(0.0) + p.out_b;
    Eigen::VectorXd expected = (1.0 / (1.0 + (-z2.array()).exp())).matrix();

    Eigen::VectorXd actual = head_forward(p, embed, true, rate, seed);
    REQUIRE((actual - expected).norm() < 1e-12);
  }
  SECTION("non-finite intermediates name the failing layer") {
    p.dense_w.setConstant(std::numeric_limits<double>::infinity());
    REQUIRE_THROWS_MATCHES(head_forward(p, embed, false, 0.0, 0), NumericError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("dense")));
  }
}

TEST_CASE("weighted_bce closed forms") {
  Eigen::VectorXd half(1);
  half << 0.5;
  REQUIRE(weighted_bce(half, {1}, 2.0) == Catch::Approx(2.0 * std::log(2.0)));
  REQUIRE(weighted_bce(half, {0}, 2.0) == Catch::Approx(std::log(2.0)));

  SECTION("perfect prediction costs at most the clamp epsilon") {
    Eigen::VectorXd exact(2);
    exact << 1.0, 0.0;
    REQUIRE(weighted_bce(exact, {1, 0}, 1.0) <= 1.1e-7);
  }
  SECTION("length mismatch is rejected") {
    REQUIRE_THROWS_AS(weighted_bce(half, {1, 0}, 1.0), DataError);
  }
}

TEST_CASE("L2 penalty applies to the dense kernel only") {
  HeadConfig cfg = tiny_config();
  HeadParams p = init_head_params(8, cfg);
  Eigen::MatrixXd embed = random_embed(3, 8, 6);
  std::vector<std::uint8_t> y = {1, 0, 1, 0, 0};
  const double bare = head_loss(p, embed, y, 2.0, 0.0);
  const double penalised = head_loss(p, embed, y, 2.0, 0.01);
  REQUIRE(penalised == Catch::Approx(bare + 0.01 * p.dense_w.squaredNorm()));
}

TEST_CASE("full network gradients match central finite differences") {
  HeadConfig cfg = tiny_config(5);
  HeadParams p = init_head_params(12, cfg);
  Eigen::MatrixXd embed = random_embed(4, 12, 7);
  std::vector<std::uint8_t> y = {1, 0, 1, 0, 1};
  const double w = 2.0, l2 = 0.001;

  HeadParams analytic = head_loss_gradients(p, embed, y, w, l2);
  auto tensors_p = flat_tensors(p);
  auto tensors_g = flat_tensors(analytic);
  std::size_t total = parameter_count(p);

  SplitMix64 rng(1301);
  const double h = 1e-5;
  for (int probe = 0; probe < 40; ++probe) {
    std::size_t flat = rng.uniform_index(total);
    std::size_t ti = 0;
    while (flat >= tensors_p[ti].size) {
      flat -= tensors_p[ti].size;
      ++ti;
    }
    double& theta = tensors_p[ti].data[flat];
    const double keep = theta;
    theta = keep + h;
    const double up = head_loss(p, embed, y, w, l2);
    theta = keep - h;
    const double down = head_loss(p, embed, y, w, l2);
    theta = keep;
    const double numeric = (up - down) / (2.0 * h);
    REQUIRE(relative_error(tensors_g[ti].data[flat], numeric) < 1e-4);
  }
}

TEST_CASE("training") {
  auto provider = hashed_surrogate_provider(11, 4);
  PreprocessConfig pre;
  HeadConfig cfg = tiny_config(3);
  cfg.dense_size = 8;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.dropout_rate = 0.1;
  cfg.max_epochs = 6;
  cfg.early_stopping = false;
  cfg.output_size = 3;

  Partitions parts = toy_partitions(48, 16);

  SECTION("loss decreases on a learnable toy task") {
    TrainResult r = train(parts, *provider, pre, cfg);
    REQUIRE(r.history.train_loss.size() == 6);
    REQUIRE(r.history.train_loss[0] > r.history.train_loss[1]);
    REQUIRE(r.history.train_loss[1] > r.history.train_loss[2]);
    REQUIRE_FALSE(r.history.diverged);
  }
  SECTION("fixed seeds give bit-identical parameters") {
    TrainResult a = train(parts, *provider, pre, cfg);
    TrainResult b = train(parts, *provider, pre, cfg);
    auto ta = flat_tensors(a.params);
    auto tb = flat_tensors(b.params);
    for (std::size_t i = 0; i < ta.size(); ++i)
      for (std::size_t k = 0; k < ta[i].size; ++k) REQUIRE(ta[i].data[k] == tb[i].data[k]);
  }
  SECTION("best epoch minimises the recorded validation loss") {
    TrainResult r = train(parts, *provider, pre, cfg);
    double best = r.history.val_loss[static_cast<std::size_t>(r.history.best_epoch - 1)];
    for (double v : r.history.val_loss) REQUIRE(best <= v + 1e-12);
  }
  SECTION("an infinite improvement requirement stops after patience + 1 epochs") {
    HeadConfig stall = cfg;
    stall.early_stopping = true;
    stall.early_stop_delta = std::numeric_limits<double>::infinity();
    stall.patience = 3;
    stall.max_epochs = 100;
    TrainResult r = train(parts, *provider, pre, stall);
    REQUIRE(r.history.stopped_epoch == 4);
  }
  SECTION("an absurd learning rate aborts with a diverged history") {
    HeadConfig wild = cfg;
    wild.learning_rate = 1e300;
    wild.max_epochs = 5;
    TrainResult r = train(parts, *provider, pre, wild);
    REQUIRE(r.history.diverged);
  }
  SECTION("empty training partition is rejected") {
    Partitions empty;
    REQUIRE_THROWS_AS(train(empty, *provider, pre, cfg), DataError);
  }
  SECTION("output size must match the target width") {
    HeadConfig wrong = cfg;
    wrong.output_size = 7;
    REQUIRE_THROWS_AS(train(parts, *provider, pre, wrong), ConfigError);
  }
}

TEST_CASE("predict and classify") {
  auto provider = hashed_surrogate_provider(11, 4);
  PreprocessConfig pre;
  HeadConfig cfg = tiny_config(3);
  HeadParams p = init_head_params(provider->dim(), cfg);

  SECTION("prediction is deterministic, bounded and sized by the label set") {
    Eigen::VectorXd a = predict(p, *provider, pre, "r1", "Nice apple pie!");
    Eigen::VectorXd b = predict(p, *provider, pre, "r1", "Nice apple pie!");
    REQUIRE(a == b);
    REQUIRE(a.size() == 3);
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      REQUIRE(a(j) > 0.0);
      REQUIRE(a(j) < 1.0);
    }
  }
  SECTION("empty-after-preprocessing reviews are rejected") {
    REQUIRE_THROWS_AS(predict(p, *provider, pre, "r2", "!!! ??? ..."), DataError);
  }
  SECTION("classify keeps strictly-above-threshold labels") {
    Eigen::VectorXd probs(3);
    probs << 0.7, 0.4, 0.5;
    REQUIRE(classify(probs, 0.5) == std::vector<std::size_t>{0});
    Eigen::VectorXd flat = Eigen::VectorXd::Constant(3, 0.5);
    REQUIRE(classify(flat, 0.5).empty());
    REQUIRE_THROWS_AS(classify(probs, 1.5), ConfigError);
  }
}

TEST_CASE("PTERHEAD1 round-trips at float precision") {
  ptest::TempDir dir;
  HeadConfig cfg = tiny_config(4);
  HeadParams p = init_head_params(8, cfg);
  const std::string path = dir.file("params.bin");
  save_head_params(p, path);
  HeadParams back = load_head_params(path);

  REQUIRE(back.input_dim() == p.input_dim());
  REQUIRE(back.hidden_size() == p.hidden_size());
  REQUIRE(back.dense_size() == p.dense_size());
  REQUIRE(back.output_size() == p.output_size());
  auto ta = flat_tensors(p);
  auto tb = flat_tensors(back);
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t k = 0; k < ta[i].size; ++k)
      REQUIRE(tb[i].data[k] == static_cast<double>(static_cast<float>(ta[i].data[k])));

  SECTION("loaded parameters predict identically to their float image") {
    Eigen::MatrixXd embed = random_embed(3, 8, 9);
    Eigen::VectorXd probs = head_forward(back, embed, false, 0.0, 0);
    REQUIRE(probs.size() == 4);
  }
  SECTION("corrupt headers are rejected") {
    ptest::write_file(dir.file("bad.bin"), "WRONG 1 2 3 4\n");
    REQUIRE_THROWS_AS(load_head_params(dir.file("bad.bin")), DataError);
  }
  SECTION("truncated payloads are rejected") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ptest::write_file(dir.file("trunc.bin"), bytes.substr(0, bytes.size() - 17));
    REQUIRE_THROWS_AS(load_head_params(dir.file("trunc.bin")), DataError);
  }
}

TEST_CASE("extra preset carries the benchmark head changes") {
  HeadConfig cfg = HeadConfig::extra_preset();
  REQUIRE(cfg.learning_rate == Catch::Approx(2e-5));
  REQUIRE(cfg.output_size == 500);
  REQUIRE(cfg.positive_weight == Catch::Approx(1.0));
  REQUIRE(cfg.max_epochs == 4);
  REQUIRE_FALSE(cfg.early_stopping);
}

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pter/dyadic.hpp"
#include "pter/errors.hpp"
#include "pter/rng.hpp"
#include "pter/text.hpp"

namespace pter {

struct PreprocessConfig {
  bool lowercase = true;
  bool strip_punct = true;
  std::size_t max_tokens = 512;  // keep-head truncation

  void validate() const {
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
};

// Lowercase, drop punctuation, whitespace-tokenise, keep the head tokens.
// Stopword removal and lemmatisation are deliberately NOT applied on the
// encoder path; they would degrade the bi-directional context.
inline std::vector<std::string> preprocess(std::string_view text, const PreprocessConfig& cfg) {
  cfg.validate();
  std::string s(text);
  if (cfg.strip_punct) s = strip_punctuation(s);
  if (cfg.lowercase) s = to_lower_ascii(s);
  std::vector<std::string> tokens = split_whitespace(s);
  if (tokens.size() > cfg.max_tokens) tokens.resize(cfg.max_tokens);
  return tokens;
}

// Contract shared by every encoder backend: the per-token hidden states of
// the last four layers, each T x d. Providers are read-only after
// construction and must be deterministic for a fixed token sequence.
class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;

  virtual int layer_width() const = 0;  // d
  int dim() const { return 4 * layer_width(); }

  // The review id keys lookup-style backends; token-driven backends ignore it.
  virtual std::array<Eigen::MatrixXd, 4> hidden_states(
      const ReviewId& id, const std::vector<std::string>& tokens) const = 0;
};

// Row t is the concatenation of the four layer vectors for token t (T x 4d).
inline Eigen::MatrixXd contextual_embed(const EmbeddingProvider& p, const ReviewId& id,
                                        const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw DataError("cannot embed an empty token sequence");
  std::array<Eigen::MatrixXd, 4> layers = p.hidden_states(id, tokens);
  const auto rows = layers[0].rows();
  const int d = p.layer_width();
  Eigen::MatrixXd out(rows, 4 * d);
  for (int l = 0; l < 4; ++l) {
    if (layers[l].rows() != rows || layers[l].cols() != d)
      throw DataError("provider returned inconsistent hidden-state shapes");
    out.block(0, l * d, rows, d) = layers[l];
  }
  return out;
}

inline Eigen::MatrixXd contextual_embed(const EmbeddingProvider& p,
                                        const std::vector<std::string>& tokens) {
  return contextual_embed(p, ReviewId(), tokens);
}

// Test/desk-scale stand-in for a frozen pretrained encoder. Every entry is a
// pseudo-random real in [-1, 1] derived from a seeded hash of
// (token, layer, column), so identical tokens embed identically at any
// position and any two seeds give unrelated spaces.
class HashedSurrogateProvider : public EmbeddingProvider {
public:
  HashedSurrogateProvider(std::uint64_t seed, int layer_width)
      : seed_(seed), width_(layer_width) {
    if (layer_width < 1) throw ConfigError("layer width must be >= 1");
  }

  int layer_width() const override { return width_; }

  std::array<Eigen::MatrixXd, 4> hidden_states(
      const ReviewId&, const std::vector<std::string>& tokens) const override {
    std::array<Eigen::MatrixXd, 4> layers;
    const auto t_count = static_cast<Eigen::Index>(tokens.size());
    for (int l = 0; l < 4; ++l) {
      layers[l].resize(t_count, width_);
      for (Eigen::Index t = 0; t < t_count; ++t) {
        std::uint64_t h = fnv1a64(tokens[static_cast<std::size_t>(t)]);
        h = fnv1a64_mix(h, seed_);
        h = fnv1a64_mix(h, static_cast<std::uint64_t>(l + 1));
        SplitMix64 rng(h);
        for (int c = 0; c < width_; ++c) layers[l](t, c) = 2.0 * rng.uniform01() - 1.0;
      }
    }
    return layers;
  }

private:
  std::uint64_t seed_;
  int width_;
};

inline std::unique_ptr<EmbeddingProvider> hashed_surrogate_provider(std::uint64_t seed, int d) {
  return std::make_unique<HashedSurrogateProvider>(seed, d);
}

// --- PTEREMB1 ----------------------------------------------------------------
// Bridge format for an externally run encoder. ASCII header
// "PTEREMB1 <n_reviews> <d>", then per review a line "<review_id> <T>"
// followed by T x 4d float32 little-endian values, row-major. Reviews are
// sorted by review_id.

namespace detail {

inline void write_f32(std::ostream& out, double v) {
  float f = static_cast<float>(v);
  out.write(reinterpret_cast<const char*>(&f), sizeof(float));
}

inline float read_f32(std::istream& in, const std::string& path) {
  float f = 0.0f;
  in.read(reinterpret_cast<char*>(&f), sizeof(float));
  if (!in) throw DataError("corrupt file (truncated float data): " + path);
  return f;
}

}  // namespace detail

inline void write_precomputed_embeddings(const std::string& path,
                                         const std::map<ReviewId, Eigen::MatrixXd>& reviews,
                                         int layer_width) {
  if (layer_width < 1) throw ConfigError("layer width must be >= 1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << "PTEREMB1 " << reviews.size() << ' ' << layer_width << '\n';
  for (const auto& [id, matrix] : reviews) {
    if (matrix.cols() != 4 * layer_width)
      throw DataError("embedding for review " + id + " has wrong column count");
    out << id << ' ' << matrix.rows() << '\n';
    for (Eigen::Index r = 0; r < matrix.rows(); ++r)
      for (Eigen::Index c = 0; c < matrix.cols(); ++c) detail::write_f32(out, matrix(r, c));
  }
}

// Serves stored matrices by review id; the token list only sanity-checks
// against the stored row count when non-empty.
class PrecomputedProvider : public EmbeddingProvider {
public:
  explicit PrecomputedProvider(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open embedding file: " + path);
    std::string magic;
    std::size_t n_reviews = 0;
    in >> magic >> n_reviews >> width_;
    if (!in || magic != "PTEREMB1" || width_ < 1)
      throw DataError("corrupt file (bad header): " + path);
    in.ignore(1);  // newline after header
    for (std::size_t i = 0; i < n_reviews; ++i) {
      std::string line;
      if (!std::getline(in, line)) throw DataError("corrupt file (missing review line): " + path);
      std::vector<std::string> parts = split_whitespace(line);
      if (parts.size() != 2) throw DataError("corrupt file (bad review line): " + path);
      Eigen::Index t_count = 0;
      try {
        t_count = static_cast<Eigen::Index>(std::stoll(parts[1]));
      } catch (const std::exception&) {
        throw DataError("corrupt file (bad token count): " + path);
      }
      if (t_count < 1) throw DataError("corrupt file (non-positive token count): " + path);
      Eigen::MatrixXd m(t_count, 4 * width_);
      for (Eigen::Index r = 0; r < t_count; ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          m(r, c) = static_cast<double>(detail::read_f32(in, path));
      if (!matrices_.emplace(parts[0], std::move(m)).second)
        throw DataError("corrupt file (duplicate review id " + parts[0] + "): " + path);
    }
  }

  int layer_width() const override { return width_; }

  std::array<Eigen::MatrixXd, 4> hidden_states(
      const ReviewId& id, const std::vector<std::string>& tokens) const override {
    auto it = matrices_.find(id);
    if (it == matrices_.end())
      throw NotFoundError("review id '" + id + "' not present in " + path_);
    const Eigen::MatrixXd& m = it->second;
    if (!tokens.empty() && static_cast<Eigen::Index>(tokens.size()) != m.rows())
      throw DataError("token count mismatch for review " + id + ": stored " +
                      std::to_string(m.rows()) + ", got " + std::to_string(tokens.size()));
    std::array<Eigen::MatrixXd, 4> layers;
    for (int l = 0; l < 4; ++l) layers[l] = m.block(0, l * width_, m.rows(), width_);
    return layers;
  }

private:
  std::string path_;
  int width_ = 0;
  std::map<ReviewId, Eigen::MatrixXd> matrices_;
};

inline std::unique_ptr<EmbeddingProvider> load_precomputed_provider(const std::string& path) {
  return std::make_unique<PrecomputedProvider>(path);
}

}  // namespace pter

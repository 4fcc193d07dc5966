#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pter/errors.hpp"
#include "pter/rng.hpp"

namespace pter {

// --- classification metrics ----------------------------------------------------

// Micro-aggregated over all (sample, label) cells. Undefined entries (no
// positive or no negative cells) stay unset.
struct ClassMetricsReport {
  std::optional<double> auc_pr;
  std::optional<double> auc_roc;
  double precision = 0.0;  // 0 when nothing is predicted positive
  std::optional<double> recall;
  std::optional<double> specificity;
  std::optional<double> balanced_accuracy;
  std::optional<double> f_measure;
};

namespace detail {

struct Cell {
  double score;
  bool positive;
};

}  // namespace detail

// scores/labels are flattened (sample, label) cells; the threshold applies
// strictly (score > threshold predicts positive). AUCs use a tie-grouped
// threshold sweep with trapezoidal integration.
inline ClassMetricsReport classification_metrics_flat(const std::vector<double>& scores,
                                                      const std::vector<std::uint8_t>& labels,
                                                      double threshold) {
  if (scores.size() != labels.size()) throw DataError("score/label size mismatch");
  if (scores.empty()) throw DataError("no cells to evaluate");

  ClassMetricsReport r;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (labels[i]) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  const std::size_t pos = tp + fn, neg = fp + tn;
  r.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  if (pos) r.recall = static_cast<double>(tp) / static_cast<double>(pos);
  if (neg) r.specificity = static_cast<double>(tn) / static_cast<double>(neg);
  if (r.recall && r.specificity) r.balanced_accuracy = (*r.recall + *r.specificity) / 2.0;
  if (r.recall) {
    const double pr = r.precision + *r.recall;
    r.f_measure = pr > 0.0 ? 2.0 * r.precision * *r.recall / pr : 0.0;
  }

  if (pos && neg) {
    std::vector<detail::Cell> cells(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) cells[i] = {scores[i], labels[i] != 0};
    std::sort(cells.begin(), cells.end(), [](const detail::Cell& a, const detail::Cell& b) {
      return a.score > b.score;
    });

    // Sweep from the strictest threshold down, advancing over whole tie groups.
    double roc = 0.0, pr_area = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    double prev_recall = 0.0;
    std::optional<double> prev_precision;
    std::size_t cum_tp = 0, cum_fp = 0;
    std::size_t i = 0;
    while (i < cells.size()) {
      std::size_t j = i;
      while (j < cells.size() && cells[j].score == cells[i].score) {
        cells[j].positive ? ++cum_tp : ++cum_fp;
        ++j;
      }
      const double tpr = static_cast<double>(cum_tp) / static_cast<double>(pos);
      const double fpr = static_cast<double>(cum_fp) / static_cast<double>(neg);
      roc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
      const double prec = static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
      if (!prev_precision) prev_precision = prec;  // extend the first point to recall 0
      pr_area += (tpr - prev_recall) * (prec + *prev_precision) / 2.0;
      prev_fpr = fpr;
      prev_tpr = tpr;
      prev_recall = tpr;
      prev_precision = prec;
      i = j;
    }
    r.auc_roc = roc;
    r.auc_pr = pr_area;
  }
  return r;
}

inline ClassMetricsReport classification_metrics(
    const std::vector<Eigen::VectorXd>& probs,
    const std::vector<std::vector<std::uint8_t>>& targets, double threshold) {
  if (probs.size() != targets.size()) throw DataError("prediction/target count mismatch");
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    if (static_cast<std::size_t>(probs[s].size()) != targets[s].size())
      throw DataError("prediction/target width mismatch at sample " + std::to_string(s));
    for (Eigen::Index j = 0; j < probs[s].size(); ++j) {
      scores.push_back(probs[s](j));
      labels.push_back(targets[s][static_cast<std::size_t>(j)]);
    }
  }
  return classification_metrics_flat(scores, labels, threshold);
}

// --- k-means++ -------------------------------------------------------------------

struct ClusterModel {
  Eigen::MatrixXd centroids;  // k x dim
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // per Lloyd iteration
  std::uint64_t seed = 0;
};

namespace detail {

inline double sq_dist(const Eigen::VectorXd& a, const Eigen::RowVectorXd& b) {
  return (a.transpose() - b).squaredNorm();
}

}  // namespace detail

inline std::size_t assign_centroid(const ClusterModel& m, const Eigen::VectorXd& point) {
  if (point.size() != m.centroids.cols()) throw DataError("point dimension mismatch");
  std::size_t best = 0;
  double best_d = detail::sq_dist(point, m.centroids.row(0));
  for (Eigen::Index c = 1; c < m.centroids.rows(); ++c) {
    const double d = detail::sq_dist(point, m.centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

// k-means++ seeding (first centroid uniform, the rest proportional to the
// squared distance to the nearest chosen centroid) followed by Lloyd
// iterations until the assignment reaches a fixpoint or max_iter.
inline ClusterModel kmeanspp_fit(const std::vector<Eigen::VectorXd>& points, std::size_t k,
                                 std::uint64_t seed, std::size_t max_iter = 300) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (points.size() < k)
    throw DataError("k-means needs at least k points (" + std::to_string(points.size()) + " < " +
                    std::to_string(k) + ")");
  const Eigen::Index dim = points.front().size();
  SplitMix64 rng(seed);

  ClusterModel model;
  model.seed = seed;
  model.centroids.resize(static_cast<Eigen::Index>(k), dim);
  model.centroids.row(0) = points[rng.uniform_index(points.size())].transpose();
  std::vector<double> d2(points.size());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = detail::sq_dist(points[i], model.centroids.row(0));
      for (std::size_t cc = 1; cc < c; ++cc)
        best = std::min(best, detail::sq_dist(points[i], model.centroids.row(
                                                             static_cast<Eigen::Index>(cc))));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        cum += d2[i];
        if (cum >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(points.size());  // all points coincide
    }
    model.centroids.row(static_cast<Eigen::Index>(c)) = points[pick].transpose();
  }

  std::vector<std::size_t> assign(points.size(), 0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t c = assign_centroid(model, points[i]);
      inertia += detail::sq_dist(points[i], model.centroids.row(static_cast<Eigen::Index>(c)));
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    model.inertia = inertia;
    model.inertia_trace.push_back(inertia);
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += points[i].transpose();
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)  // empty clusters keep their previous centroid
        model.centroids.row(static_cast<Eigen::Index>(c)) =
            sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
  }
  return model;
}

// Per-centroid top terms by coordinate weight; `terms` maps vocabulary
// columns to their text.
inline std::vector<std::vector<std::string>> centroid_tags(const ClusterModel& m,
                                                           const std::vector<std::string>& terms,
                                                           std::size_t top) {
  if (top < 1) throw ConfigError("tag count must be >= 1");
  if (static_cast<Eigen::Index>(terms.size()) != m.centroids.cols())
    throw DataError("vocabulary size does not match centroid dimension");
  std::vector<std::vector<std::string>> tags;
  for (Eigen::Index c = 0; c < m.centroids.rows(); ++c) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (m.centroids(c, static_cast<Eigen::Index>(i)) > 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double wa = m.centroids(c, static_cast<Eigen::Index>(a));
      const double wb = m.centroids(c, static_cast<Eigen::Index>(b));
      if (wa != wb) return wa > wb;
      return terms[a] < terms[b];
    });
    if (order.size() > top) order.resize(top);
    std::vector<std::string> list;
    for (std::size_t i : order) list.push_back(terms[i]);
    tags.push_back(std::move(list));
  }
  return tags;
}

// Uniform seeded draw from a non-empty review set.
template <typename Id>
inline Id random_adversary(const std::vector<Id>& reviews, std::uint64_t seed) {
  if (reviews.empty()) throw DataError("random adversary needs a non-empty review set");
  SplitMix64 rng(seed);
  return reviews[rng.uniform_index(reviews.size())];
}

// --- CCR -------------------------------------------------------------------------

// Macro-averaged centroid coincidence of authorship points against the
// personalised and random points, in percent.
struct CcrReport {
  double ccr_ap = 0.0;
  double ccr_ar = 0.0;
  double delta = 0.0;
  std::size_t comparisons = 0;  // #A
  std::size_t k = 0;
  bool empty = false;  // no authorship-eligible interaction existed
};

// One evaluated interaction: the user's own review vector(s), the
// personalised pick and the random pick, already in TF-IDF space.
struct CcrComparison {
  std::vector<Eigen::VectorXd> authorship_points;
  Eigen::VectorXd personalised_point;
  Eigen::VectorXd random_point;
};

inline CcrReport ccr_from_comparisons(const std::vector<CcrComparison>& interactions,
                                      const ClusterModel& clusters) {
  CcrReport report;
  report.k = static_cast<std::size_t>(clusters.centroids.rows());
  std::size_t match_p = 0, match_r = 0, total = 0;
  for (const CcrComparison& cmp : interactions) {
    const std::size_t cp = assign_centroid(clusters, cmp.personalised_point);
    const std::size_t cr = assign_centroid(clusters, cmp.random_point);
    for (const Eigen::VectorXd& a : cmp.authorship_points) {
      const std::size_t ca = assign_centroid(clusters, a);
      if (ca == cp) ++match_p;
      if (ca == cr) ++match_r;
      ++total;
    }
  }
  report.comparisons = total;
  if (total == 0) {
    report.empty = true;
    return report;
  }
  report.ccr_ap = 100.0 * static_cast<double>(match_p) / static_cast<double>(total);
  report.ccr_ar = 100.0 * static_cast<double>(match_r) / static_cast<double>(total);
  report.delta = report.ccr_ap - report.ccr_ar;
  return report;
}

// --- ranking metrics @k ------------------------------------------------------------

struct RankedQuery {
  std::vector<std::string> ranked;  // candidate ids, best first
  std::set<std::string> relevant;
};

struct RankRunMetrics {
  double ndcg = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped_no_relevant = 0;
};

// Binary gains, log2 discount. Queries without any relevant id are excluded
// from the averages and counted.
inline RankRunMetrics ranking_run_metrics(const std::vector<RankedQuery>& queries,
                                          std::size_t k = 10) {
  if (k < 1) throw ConfigError("k must be >= 1");
  RankRunMetrics out;
  double ndcg_sum = 0.0, p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  for (const RankedQuery& q : queries) {
    if (q.relevant.empty()) {
      ++out.skipped_no_relevant;
      continue;
    }
    const std::size_t depth = std::min(k, q.ranked.size());
    double dcg = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (q.relevant.count(q.ranked[r])) {
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    double idcg = 0.0;
    const std::size_t ideal = std::min(k, q.relevant.size());
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    const double ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
    const double precision = static_cast<double>(hits) / static_cast<double>(k);
    const double recall = static_cast<double>(hits) / static_cast<double>(q.relevant.size());
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    ndcg_sum += ndcg;
    p_sum += precision;
    r_sum += recall;
    f_sum += f1;
    ++out.evaluated;
  }
  if (out.evaluated > 0) {
    const double n = static_cast<double>(out.evaluated);
    out.ndcg = ndcg_sum / n;
    out.precision = p_sum / n;
    out.recall = r_sum / n;
    out.f1 = f_sum / n;
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

struct RankMetricsReport {
  MeanStd ndcg, precision, recall, f1;
  std::size_t runs = 0;
};

namespace detail {

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  double sum = 0.0;
  for (double x : xs) sum += x;
  ms.mean = sum / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - ms.mean) * (x - ms.mean);
  ms.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return ms;
}

}  // namespace detail

// Per-run query sets -> mean and standard deviation over runs.
inline RankMetricsReport ranking_metrics_at_k(const std::vector<std::vector<RankedQuery>>& runs,
                                              std::size_t k = 10) {
  RankMetricsReport report;
  report.runs = runs.size();
  std::vector<double> ndcg, prec, rec, f1;
  for (const auto& run : runs) {
    RankRunMetrics m = ranking_run_metrics(run, k);
    ndcg.push_back(m.ndcg);
    prec.push_back(m.precision);
    rec.push_back(m.recall);
    f1.push_back(m.f1);
  }
  report.ndcg = detail::mean_std(ndcg);
  report.precision = detail::mean_std(prec);
  report.recall = detail::mean_std(rec);
  report.f1 = detail::mean_std(f1);
  return report;
}

// --- 2-D PCA ----------------------------------------------------------------------

namespace detail {

// Dominant eigenvector of a symmetric matrix by power iteration; zero vector
// when the matrix is (numerically) null.
inline Eigen::VectorXd power_iteration(const Eigen::MatrixXd& m, std::uint64_t stream) {
  const Eigen::Index n = m.rows();
  SplitMix64 rng(fnv1a64_mix(0x50434131ULL, stream));
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
  double norm = v.norm();
  if (norm == 0.0) return Eigen::VectorXd::Zero(n);
  v /= norm;
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::VectorXd next = m * v;
    const double next_norm = next.norm();
    if (next_norm < 1e-14) return Eigen::VectorXd::Zero(n);
    next /= next_norm;
    const double shift = (next - v).norm();
    v = next;
    if (shift < 1e-13) break;
  }
  // Sign convention: the largest-magnitude coordinate is positive.
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < n; ++i)
    if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
  if (v(arg) < 0.0) v = -v;
  return v;
}

}  // namespace detail

// Projection onto the top-2 eigenvectors of the mean-centred covariance,
// computed by power iteration with deflation.
inline Eigen::MatrixXd pca_2d(const std::vector<Eigen::VectorXd>& points) {
  if (points.size() < 2) throw DataError("PCA needs at least 2 points");
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  const Eigen::Index dim = points.front().size();
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = points[static_cast<std::size_t>(i)].transpose();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

  Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(n, 2);
  for (int component = 0; component < 2; ++component) {
    Eigen::VectorXd v = detail::power_iteration(cov, static_cast<std::uint64_t>(component));
    if (v.isZero(0.0)) break;
    coords.col(component) = x * v;
    const double lambda = v.dot(cov * v);
    cov -= lambda * (v * v.transpose());
  }
  return coords;
}

}  // namespace pter

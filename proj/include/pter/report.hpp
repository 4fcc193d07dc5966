#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pter/errors.hpp"
#include "pter/eval.hpp"

namespace pter {

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string fmt_metric(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "undefined";
}

}  // namespace detail

// One metric per column, one run per row.
inline void write_metrics_csv(const std::vector<ClassMetricsReport>& runs,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << "run,auc_pr,auc_roc,precision,recall,specificity,balanced_accuracy,f_measure\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const ClassMetricsReport& r = runs[i];
    out << i << ',' << detail::fmt_metric(r.auc_pr) << ',' << detail::fmt_metric(r.auc_roc) << ','
        << detail::fmt_double(r.precision) << ',' << detail::fmt_metric(r.recall) << ','
        << detail::fmt_metric(r.specificity) << ',' << detail::fmt_metric(r.balanced_accuracy)
        << ',' << detail::fmt_metric(r.f_measure) << '\n';
  }
}

// Rows per dataset: CCR(A,P), CCR(A,R) and the delta, one column per k.
inline void write_ccr_csv(const std::map<std::string, std::vector<CcrReport>>& by_dataset,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  std::vector<std::size_t> ks;
  for (const auto& [name, reports] : by_dataset)
    for (const CcrReport& r : reports)
      if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
  std::sort(ks.begin(), ks.end());

  out << "dataset,metric,comparisons";
  for (std::size_t k : ks) out << ",k=" << k;
  out << '\n';
  for (const auto& [name, reports] : by_dataset) {
    auto value_for = [&](std::size_t k, auto getter) -> std::string {
      for (const CcrReport& r : reports)
        if (r.k == k) return r.empty ? "empty" : detail::fmt_double(getter(r));
      return "";
    };
    const std::size_t comparisons = reports.empty() ? 0 : reports.front().comparisons;
    const char* metric_names[3] = {"ccr_ap", "ccr_ar", "delta"};
    for (int row = 0; row < 3; ++row) {
      out << name << ',' << metric_names[row] << ',' << comparisons;
      for (std::size_t k : ks) {
        out << ',';
        if (row == 0)
          out << value_for(k, [](const CcrReport& r) { return r.ccr_ap; });
        else if (row == 1)
          out << value_for(k, [](const CcrReport& r) { return r.ccr_ar; });
        else
          out << value_for(k, [](const CcrReport& r) { return r.delta; });
      }
      out << '\n';
    }
  }
}

// --- SVG ------------------------------------------------------------------------

namespace detail {

inline const char* kSvgPalette[10] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
                                      "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd"};

struct SvgAxis {
  double lo = 0.0, hi = 1.0;
  double map(double v, double pix_lo, double pix_hi) const {
    if (hi == lo) return (pix_lo + pix_hi) / 2.0;
    return pix_lo + (v - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
};

}  // namespace detail

// Scatter plot of 2-D points coloured by group, with optional text labels
// (used for the PCA view of clustered contexts).
inline void write_svg_scatter(const Eigen::MatrixXd& coords, const std::vector<std::size_t>& group,
                              const std::vector<std::pair<Eigen::Vector2d, std::string>>& labels,
                              const std::string& title, const std::string& path) {
  if (coords.cols() != 2 || static_cast<std::size_t>(coords.rows()) != group.size())
    throw DataError("scatter data shape mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);

  const double w = 720, h = 540, margin = 50;
  detail::SvgAxis ax, ay;
  if (coords.rows() > 0) {
    ax.lo = coords.col(0).minCoeff();
    ax.hi = coords.col(0).maxCoeff();
    ay.lo = coords.col(1).minCoeff();
    ay.hi = coords.col(1).maxCoeff();
  }
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const double px = ax.map(coords(i, 0), margin, w - margin);
    const double py = ay.map(coords(i, 1), h - margin, margin);
    const char* color = detail::kSvgPalette[group[static_cast<std::size_t>(i)] % 10];
    out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << color
        << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (const auto& [pos, text] : labels) {
    const double px = ax.map(pos.x(), margin, w - margin);
    const double py = ay.map(pos.y(), h - margin, margin);
    out << "<text x=\"" << px << "\" y=\"" << py
        << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#222\">" << text << "</text>\n";
  }
  out << "</svg>\n";
}

// Line chart with one series per metric over a shared x axis (used for the
// active-user sweep curves).
inline void write_svg_curves(const std::vector<double>& xs,
                             const std::map<std::string, std::vector<double>>& series,
                             const std::string& x_label, const std::string& title,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  const double w = 720, h = 480, margin = 60;
  detail::SvgAxis ax, ay;
  if (!xs.empty()) {
    ax.lo = *std::min_element(xs.begin(), xs.end());
    ax.hi = *std::max_element(xs.begin(), xs.end());
  }
  ay.lo = 0.0;
  ay.hi = 0.0;
  for (const auto& [name, ys] : series)
    for (double y : ys) ay.hi = std::max(ay.hi, y);
  if (ay.hi == 0.0) ay.hi = 1.0;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - margin
      << "\" y2=\"" << h - margin << "\" stroke=\"#333\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << h - margin << "\" stroke=\"#333\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 16
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";

  int idx = 0;
  double legend_y = margin;
  for (const auto& [name, ys] : series) {
    const char* color = detail::kSvgPalette[idx % 10];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i)
      out << ax.map(xs[i], margin, w - margin) << ',' << ay.map(ys[i], h - margin, margin) << ' ';
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i)
      out << "<circle cx=\"" << ax.map(xs[i], margin, w - margin) << "\" cy=\""
          << ay.map(ys[i], h - margin, margin) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << w - margin + 6 << "\" y=\"" << legend_y
        << "\" font-size=\"11\" fill=\"" << color << "\">" << name << "</text>\n";
    legend_y += 16;
    ++idx;
  }
  out << "</svg>\n";
}

}  // namespace pter

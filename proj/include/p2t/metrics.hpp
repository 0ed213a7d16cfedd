#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "p2t/corpus.hpp"
#include "p2t/model.hpp"

namespace p2t {

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw MetricError("non-finite score");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw MetricError("labels must be 0 or 1");
  }
}

}  // namespace detail

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores get
/// their average rank, so a tied positive/negative pair counts one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y);
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("AUC undefined: only one class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const auto p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  return auc(std::span<const double>(scores), std::span<const int>(labels));
}

struct BinRow {
  std::size_t bin = 0;
  std::size_t size = 0;
  std::size_t positives = 0;
  std::optional<double> auc;  // unset when the bin holds a single class
};

struct WbaucResult {
  double value = 0.0;
  std::vector<BinRow> bins;
};

/// Bin-size weighted mean of per-bin AUCs. Bins holding one class only are
/// left out and the weights renormalized over the remaining bins.
inline WbaucResult wbauc(std::span<const double> scores, std::span<const int> labels, std::span<const std::size_t> bins,
                         std::size_t n_bins) {
  detail::check_scores(scores, labels);
  if (bins.size() != scores.size()) throw MetricError("bin assignment differs in length from scores");
  std::vector<std::vector<std::size_t>> members(n_bins);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] >= n_bins) throw MetricError("bin index out of range");
    members[bins[i]].push_back(i);
  }
  WbaucResult out;
  std::size_t included = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    BinRow row{b, members[b].size(), 0, std::nullopt};
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i : members[b]) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
      row.positives += static_cast<std::size_t>(labels[i]);
    }
    if (row.positives > 0 && row.positives < row.size) {
      row.auc = auc(s, y);
      included += row.size;
    }
    out.bins.push_back(row);
  }
  if (included == 0) throw MetricError("WBAUC undefined: every bin holds a single class");
  for (const auto& row : out.bins) {
    if (row.auc) out.value += static_cast<double>(row.size) / static_cast<double>(included) * *row.auc;
  }
  return out;
}

inline WbaucResult wbauc(const std::vector<double>& scores, const std::vector<int>& labels,
                         const std::vector<std::size_t>& bins, std::size_t n_bins) {
  return wbauc(std::span<const double>(scores), std::span<const int>(labels), std::span<const std::size_t>(bins),
               n_bins);
}

/// Offline and online numbers for one method.
struct MetricsReport {
  std::string method;
  std::optional<double> auc;
  std::optional<double> wbauc;
  std::vector<BinRow> bins;
  std::optional<double> rounds;
  std::optional<double> diversity;
  std::optional<double> repayment_rate;
};

inline json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json bins = json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"bin", b.bin}, {"size", b.size}, {"positives", b.positives}, {"auc", opt(b.auc)}});
  }
  return {{"method", r.method},          {"auc", opt(r.auc)},         {"wbauc", opt(r.wbauc)},
          {"bins", bins},                {"rounds", opt(r.rounds)},   {"diversity", opt(r.diversity)},
          {"repayment_rate", opt(r.repayment_rate)}};
}

namespace detail {
inline std::string fmt_opt(const std::optional<double>& v, const char* spec = "%.4f") {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}
}  // namespace detail

/// One line per method: AUC, WBAUC, rounds, diversity, repayment.
inline std::string format_table(const std::vector<MetricsReport>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.method.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %7s  %9s  %9s\n", static_cast<int>(w), "method", "AUC", "WBAUC",
                "rounds", "diversity", "repayment");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %7s  %9s  %9s\n", static_cast<int>(w), r.method.c_str(),
                  detail::fmt_opt(r.auc).c_str(), detail::fmt_opt(r.wbauc).c_str(),
                  detail::fmt_opt(r.rounds, "%.2f").c_str(), detail::fmt_opt(r.diversity).c_str(),
                  detail::fmt_opt(r.repayment_rate).c_str());
    out << buf;
  }
  return out.str();
}

/// Per-bin breakdown of a report.
inline std::string format_bins(const MetricsReport& r) {
  std::ostringstream out;
  char buf[128];
  out << r.method << " per-bin AUC\n";
  std::snprintf(buf, sizeof buf, "%4s  %7s  %9s  %8s\n", "bin", "size", "positives", "AUC");
  out << buf;
  for (const auto& b : r.bins) {
    std::snprintf(buf, sizeof buf, "%4zu  %7zu  %9zu  %8s\n", b.bin, b.size, b.positives,
                  b.auc ? detail::fmt_opt(b.auc).c_str() : "excluded");
    out << buf;
  }
  return out.str();
}

/// AUC/WBAUC of arbitrary scores on a labelled corpus, binned by bin_key quantiles.
inline MetricsReport evaluate_scores(const std::string& method, const std::vector<double>& scores,
                                     const Corpus& test, std::size_t n_bins) {
  std::vector<int> labels;
  for (const auto& d : test.dialogues) labels.push_back(d.label);
  const std::vector<std::size_t> bins = assign_bins(test.dialogues, n_bins);
  MetricsReport r;
  r.method = method;
  r.auc = auc(scores, labels);
  WbaucResult w = wbauc(scores, labels, bins, n_bins);
  r.wbauc = w.value;
  r.bins = std::move(w.bins);
  return r;
}

/// Scores each test dialogue with ŷ at its final turn.
inline std::vector<double> model_scores(const Model& model, const Corpus& test) {
  std::vector<double> scores;
  scores.reserve(test.dialogues.size());
  for (const auto& d : test.dialogues) scores.push_back(model.predict(d));
  return scores;
}

inline MetricsReport evaluate_model(const std::string& method, const Model& model, const Corpus& test,
                                    std::size_t n_bins) {
  return evaluate_scores(method, model_scores(model, test), test, n_bins);
}

}  // namespace p2t

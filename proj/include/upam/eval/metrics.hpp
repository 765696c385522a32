#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"

namespace upam::eval {

struct MetricSet {
  double ap = 0, recall = 0, precision = 0, f1 = 0;
};

inline void to_json(nlohmann::json& j, const MetricSet& m) {
  j = {{"ap", m.ap}, {"recall", m.recall}, {"precision", m.precision}, {"f1", m.f1}};
}

inline void from_json(const nlohmann::json& j, MetricSet& m) {
  m.ap = j.at("ap");
  m.recall = j.at("recall");
  m.precision = j.at("precision");
  m.f1 = j.at("f1");
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"ap", "recall", "precision", "f1"};
  return names;
}

inline double metric_value(const MetricSet& m, const std::string& name) {
  if (name == "ap") return m.ap;
  if (name == "recall") return m.recall;
  if (name == "precision") return m.precision;
  if (name == "f1") return m.f1;
  throw UsageError("unknown metric " + name);
}

inline std::size_t count_positive(const std::vector<int>& labels) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

/// Non-interpolated AP. Tied scores form one operating point: the group's
/// recall increment is weighted by the precision after the whole group.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("average_precision: score/label size mismatch");
  const std::size_t pos = count_positive(labels);
  if (pos == 0) throw DegenerateMetricError("average_precision: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, tp_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) tp_group += labels[order[j++]] == 1;
    tp += tp_group;
    seen = j;
    if (tp_group) ap += static_cast<double>(tp_group) / pos * (static_cast<double>(tp) / seen);
    i = j;
  }
  return ap;
}

/// Scores at or above the threshold count as positive predictions.
inline MetricSet compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("compute_metrics: non-finite score");
  for (int y : labels)
    if (y != 0 && y != 1) throw DataError("compute_metrics: labels must be 0 or 1");
  MetricSet m;
  m.ap = average_precision(scores, labels);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < threshold) continue;
    (labels[i] == 1 ? tp : fp)++;
  }
  const double pos = static_cast<double>(count_positive(labels));
  m.recall = tp / pos;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw DataError("mean of an empty list");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double population_sigma(const std::vector<double>& x) {
  const double mu = mean(x);
  double ss = 0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

struct Aggregate {
  double micro = 0, macro = 0, sigma = 0;
};

/// Annotation-weighted (micro) and unweighted (macro) means; sigma is across datasets.
inline Aggregate aggregate(const std::vector<double>& m, const std::vector<double>& n) {
  if (m.empty() || m.size() != n.size()) throw DataError("aggregate: need matching, non-empty metric and weight lists");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(n[i] > 0)) throw DataError("aggregate: weights must be positive");
    num += m[i] * n[i];
    den += n[i];
  }
  return {num / den, mean(m), population_sigma(m)};
}

struct ScoredWindow {
  std::string clip_id;
  std::size_t index = 0;
  int label = 0;
  double score = 0;
};

/// Merge runs of adjacent positive windows of one clip into events of at most
/// `cap` windows (0 = unlimited); an event scores the max over its windows.
inline std::vector<ScoredWindow> merge_events(std::vector<ScoredWindow> w, std::size_t cap) {
  std::stable_sort(w.begin(), w.end(), [](const ScoredWindow& a, const ScoredWindow& b) {
    return a.clip_id != b.clip_id ? a.clip_id < b.clip_id : a.index < b.index;
  });
  std::vector<ScoredWindow> out;
  std::size_t run = 0;
  for (const auto& x : w) {
    const bool extend = x.label == 1 && !out.empty() && out.back().label == 1 && out.back().clip_id == x.clip_id &&
                        out.back().index + 1 == x.index && (cap == 0 || run < cap);
    if (extend) {
      out.back().index = x.index;
      out.back().score = std::max(out.back().score, x.score);
      ++run;
    } else {
      out.push_back(x);
      run = 1;
    }
  }
  return out;
}

}  // namespace upam::eval

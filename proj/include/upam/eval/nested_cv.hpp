#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/dsp/types.hpp"
#include "upam/eval/folds.hpp"
#include "upam/eval/metrics.hpp"
#include "upam/model/arpan.hpp"
#include "upam/train/trainer.hpp"

namespace upam::eval {

using train::LabeledSet;

struct Dataset {
  std::vector<dsp::Spectrogram> windows;
  std::vector<ClipMeta> clips;
};

struct NestedCvOptions {
  std::size_t k = 5;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  double neg_downsample = 0.5;
  bool group_by_clip = false;
  bool merge_events = false;
  std::size_t merge_cap = 3;
  std::ostream* audit = nullptr;
  std::ostream* train_log = nullptr;
};

struct FoldJob {
  const FoldPlan* plan = nullptr;
  LabeledSet train, val, test;
};

struct FoldOutcome {
  std::vector<double> test_scores;
  std::size_t best_epoch = 0;
  double val_accuracy = 0;
  std::string log;
};

using Learner = std::function<FoldOutcome(const FoldJob&)>;

struct ModelResult {
  std::size_t outer = 0, inner = 0;
  MetricSet test;
  std::size_t best_epoch = 0;
  double val_accuracy = 0;
};

struct Stat {
  double mean = 0, sigma = 0;
};

struct BlockSummary {
  std::string block;
  std::size_t annotation_count = 0, windows = 0, positives = 0;
  std::map<std::string, Stat> metrics;
};

struct NestedCvReport {
  std::size_t outer_folds = 0, inner_folds = 0, models_trained = 0, leakage_checks = 0;
  std::vector<BlockSummary> blocks;
  std::map<std::string, Stat> micro, macro;
  std::vector<ModelResult> models;
};

inline nlohmann::json stats_json(const std::map<std::string, Stat>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, s] : m) j[k] = {{"mean", s.mean}, {"sigma", s.sigma}};
  return j;
}

inline nlohmann::json to_json(const NestedCvReport& r) {
  nlohmann::json j;
  j["outer_folds"] = r.outer_folds;
  j["inner_folds"] = r.inner_folds;
  j["models_trained"] = r.models_trained;
  j["leakage_checks"] = r.leakage_checks;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : r.blocks)
    j["blocks"].push_back({{"block", b.block},
                           {"annotation_count", b.annotation_count},
                           {"windows", b.windows},
                           {"positives", b.positives},
                           {"metrics", stats_json(b.metrics)}});
  j["micro"] = stats_json(r.micro);
  j["macro"] = stats_json(r.macro);
  j["models"] = nlohmann::json::array();
  for (const auto& m : r.models)
    j["models"].push_back({{"outer", m.outer}, {"inner", m.inner}, {"test", m.test}, {"best_epoch", m.best_epoch},
                           {"val_accuracy", m.val_accuracy}});
  return j;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

/// One row per block x metric, then micro and macro rows.
inline std::string to_csv(const NestedCvReport& r) {
  std::string out = "block,metric,mean,sigma\n";
  auto rows = [&](const std::string& name, const std::map<std::string, Stat>& m) {
    for (const auto& metric : metric_names()) {
      const auto& s = m.at(metric);
      out += name + "," + metric + "," + fmt(s.mean) + "," + fmt(s.sigma) + "\n";
    }
  };
  for (const auto& b : r.blocks) rows(b.block, b.metrics);
  rows("micro", r.micro);
  rows("macro", r.macro);
  return out;
}

/// ARPA-N learner: fresh model per fold, trained then scored on the test block.
inline Learner arpan_learner(model::ArpanConfig mcfg, train::TrainConfig tcfg) {
  return [mcfg, tcfg](const FoldJob& job) {
    auto mc = mcfg;
    mc.seed = job.plan->model_seed;
    auto tc = tcfg;
    tc.seed = job.plan->train_seed;
    auto m = model::build<float>(mc);
    std::ostringstream log;
    const auto hist = train::train(m, job.train, job.val, tc, &log);
    FoldOutcome out;
    const auto p = train::predict_all(m, job.test);
    out.test_scores.assign(p.begin(), p.end());
    out.best_epoch = hist.best_epoch;
    out.val_accuracy = hist.best_accuracy();
    out.log = log.str();
    return out;
  };
}

namespace detail {

inline std::vector<double> windows_scored(const LabeledSet& test, const std::vector<double>& scores,
                                          const NestedCvOptions& opt, std::vector<int>& labels) {
  labels.clear();
  if (!opt.merge_events) {
    for (const auto* s : test) labels.push_back(s->label);
    return scores;
  }
  std::vector<ScoredWindow> w;
  for (std::size_t i = 0; i < test.size(); ++i) w.push_back({test[i]->clip_id, test[i]->index, test[i]->label, scores[i]});
  std::vector<double> out;
  for (const auto& e : merge_events(std::move(w), opt.merge_cap)) {
    out.push_back(e.score);
    labels.push_back(e.label);
  }
  return out;
}

}  // namespace detail

/// Site-year blocks as outer folds, stratified inner folds on the remaining
/// pool. Exactly K*k learner calls; results are reduced in (i, j) order.
inline NestedCvReport nested_cv(const Dataset& data, const Learner& learner, const NestedCvOptions& opt) {
  const auto blocks = split_site_years(data.clips);
  if (blocks.size() < 2) throw DataError("nested_cv: need at least two site-year blocks, got " + std::to_string(blocks.size()));

  std::map<std::string, std::size_t> block_of_clip;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (const auto& id : blocks[b].clip_ids) block_of_clip[id] = b;
  std::vector<LabeledSet> members(blocks.size());
  for (const auto& w : data.windows) {
    auto it = block_of_clip.find(w.clip_id);
    if (it == block_of_clip.end()) throw DataError("nested_cv: window from unknown clip " + w.clip_id);
    members[it->second].push_back(&w);
  }

  const std::size_t K = blocks.size(), k = opt.k;
  std::vector<FoldPlan> plans;
  std::vector<FoldJob> jobs;
  plans.reserve(K * k);
  for (std::size_t i = 0; i < K; ++i) {
    if (members[i].empty()) throw DataError("nested_cv: block " + blocks[i].key.str() + " has no windows");
    LabeledSet pool;
    for (std::size_t o = 0; o < K; ++o)
      if (o != i) pool.insert(pool.end(), members[o].begin(), members[o].end());
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (const auto* s : pool) {
      labels.push_back(s->label);
      groups.push_back(s->clip_id);
    }
    const auto fold_seed = derive_seed(opt.seed, "folds", i);
    const auto folds = stratified_k_fold(labels, k, fold_seed, opt.group_by_clip ? &groups : nullptr);
    for (std::size_t j = 0; j < k; ++j) {
      FoldPlan p;
      p.outer = i;
      p.inner = j;
      p.block = blocks[i].key.str();
      p.fold_seed = fold_seed;
      p.model_seed = derive_seed(opt.seed, "model", i, j);
      p.train_seed = derive_seed(opt.seed, "train", i, j);
      p.downsample_seed = derive_seed(opt.seed, "downsample", i, j);
      FoldJob job;
      for (auto idx : folds[j]) job.val.push_back(pool[idx]);
      LabeledSet tr;
      for (std::size_t o = 0; o < k; ++o)
        if (o != j)
          for (auto idx : folds[o]) tr.push_back(pool[idx]);
      job.train = train::prepare_training_set(tr, opt.neg_downsample, RandomState{p.downsample_seed, 0});
      job.test = members[i];
      for (const auto* s : job.train) p.train_ids.push_back(train::instance_id(*s));
      for (const auto* s : job.val) p.val_ids.push_back(train::instance_id(*s));
      for (const auto* s : job.test) p.test_ids.push_back(train::instance_id(*s));
      plans.push_back(std::move(p));
      jobs.push_back(std::move(job));
    }
  }

  NestedCvReport rep;
  rep.outer_folds = K;
  rep.inner_folds = k;
  for (std::size_t q = 0; q < plans.size(); ++q) {
    jobs[q].plan = &plans[q];
    assert_no_leakage(plans[q]);
    ++rep.leakage_checks;
    if (opt.audit) *opt.audit << nlohmann::json(plans[q]).dump() << '\n';
  }

  std::vector<std::optional<FoldOutcome>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t q; (q = next.fetch_add(1)) < jobs.size();) {
      try {
        results[q] = learner(jobs[q]);
      } catch (...) {
        errors[q] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(1, opt.workers); ++t) pool.emplace_back(worker);
    worker();
  }

  std::vector<double> weights;
  std::map<std::string, std::vector<double>> block_means, block_sigmas;
  for (std::size_t i = 0; i < K; ++i) {
    std::map<std::string, std::vector<double>> per_metric;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t q = i * k + j;
      if (errors[q]) {
        try {
          std::rethrow_exception(errors[q]);
        } catch (const Error& e) {
          throw Error(e.category(), "nested_cv: block " + plans[q].block + " fold " + std::to_string(j) + " failed: " + e.what());
        }
      }
      const auto& r = *results[q];
      if (r.test_scores.size() != jobs[q].test.size())
        throw ShapeError("nested_cv: learner returned " + std::to_string(r.test_scores.size()) + " scores for " +
                         std::to_string(jobs[q].test.size()) + " test windows");
      std::vector<int> labels;
      const auto scores = detail::windows_scored(jobs[q].test, r.test_scores, opt, labels);
      ModelResult mr{i, j, compute_metrics(scores, labels, opt.threshold), r.best_epoch, r.val_accuracy};
      for (const auto& name : metric_names()) per_metric[name].push_back(metric_value(mr.test, name));
      rep.models.push_back(mr);
      ++rep.models_trained;
      if (opt.train_log) {
        std::istringstream lines(r.log);
        for (std::string line; std::getline(lines, line);) {
          auto jl = nlohmann::json::parse(line);
          jl["outer"] = i;
          jl["inner"] = j;
          *opt.train_log << jl.dump() << '\n';
        }
      }
    }
    BlockSummary bs;
    bs.block = blocks[i].key.str();
    bs.annotation_count = blocks[i].annotation_count;
    bs.windows = members[i].size();
    for (const auto* s : members[i]) bs.positives += s->label == 1;
    for (const auto& [name, xs] : per_metric) {
      bs.metrics[name] = {mean(xs), population_sigma(xs)};
      block_means[name].push_back(bs.metrics[name].mean);
      block_sigmas[name].push_back(bs.metrics[name].sigma);
    }
    weights.push_back(static_cast<double>(bs.annotation_count));
    rep.blocks.push_back(std::move(bs));
  }
  for (const auto& name : metric_names()) {
    const auto m = aggregate(block_means[name], weights);
    const auto s = aggregate(block_sigmas[name], weights);
    rep.micro[name] = {m.micro, s.micro};
    rep.macro[name] = {m.macro, s.macro};
  }
  return rep;
}

}  // namespace upam::eval

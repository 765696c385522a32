#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "toy.hpp"
#include "upam/eval/bench.hpp"
#include "upam/eval/nested_cv.hpp"

using namespace upam::eval;

namespace {

Dataset corpus_from(const std::map<std::pair<std::string, int>, std::pair<int, int>>& blocks) {
  Dataset d;
  for (const auto& [key, counts] : blocks) {
    const std::string clip = key.first + std::to_string(key.second);
    d.clips.push_back({clip, key.first, key.second, static_cast<std::size_t>(counts.first)});
    for (int i = 0; i < counts.first + counts.second; ++i) {
      upam::dsp::Spectrogram s;
      s.clip_id = clip;
      s.index = static_cast<std::size_t>(i);
      s.label = i < counts.first ? 1 : 0;
      d.windows.push_back(s);
    }
  }
  return d;
}

FoldOutcome constant_half(const FoldJob& job) {
  FoldOutcome o;
  o.test_scores.assign(job.test.size(), 0.5);
  return o;
}

}  // namespace

TEST(AveragePrecision, WorkedExample) {
  const auto m = compute_metrics({0.9, 0.8, 0.7}, {1, 0, 1}, 0.5);
  EXPECT_NEAR(m.ap, (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
  EXPECT_NEAR(m.precision, 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_NEAR(m.f1, 0.8, 1e-12);
}

TEST(AveragePrecision, PerfectAndDegenerate) {
  const auto m = compute_metrics({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}, 0.5);
  EXPECT_DOUBLE_EQ(m.ap, 1.0);
  EXPECT_DOUBLE_EQ(m.f1, 1.0);
  const auto none = compute_metrics({0.1, 0.2, 0.3}, {1, 0, 1}, 0.5);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(compute_metrics({0.1, 0.2}, {0, 0}, 0.5), upam::DegenerateMetricError);
  EXPECT_THROW(compute_metrics({NAN, 0.2}, {1, 0}, 0.5), upam::DataError);
}

TEST(AveragePrecision, AllTiedEqualsPrevalence) {
  EXPECT_DOUBLE_EQ(average_precision({0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1, 0}), 0.4);
}

TEST(AveragePrecision, ExhaustiveOracleUpToEight) {
  const std::vector<double> alphabet{0.1, 0.4, 0.7};
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    std::size_t score_combos = 1;
    for (std::size_t i = 0; i < n; ++i) score_combos *= alphabet.size();
    const std::size_t stride = n >= 7 ? 7 : 1;  // thin the score grid for the largest lengths
    for (std::size_t lab = 1; lab < (1u << n); ++lab) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = (lab >> i) & 1;
      for (std::size_t c = lab % stride; c < score_combos; c += stride) {
        std::vector<double> s(n);
        std::size_t r = c;
        for (std::size_t i = 0; i < n; ++i, r /= alphabet.size()) s[i] = alphabet[r % alphabet.size()];
        ASSERT_NEAR(average_precision(s, y), upam::testing::ap_oracle(s, y), 1e-12);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100000u);
}

TEST(Aggregate, MicroMacroAndSigma) {
  const auto a = aggregate({0.8, 0.6}, {100, 50});
  EXPECT_NEAR(a.micro, 0.7333333333333333, 1e-12);
  EXPECT_NEAR(a.macro, 0.7, 1e-12);
  const auto one = aggregate({0.42}, {7});
  EXPECT_EQ(one.micro, 0.42);
  EXPECT_EQ(one.macro, 0.42);
  EXPECT_EQ(one.sigma, 0.0);
  EXPECT_NEAR(population_sigma({1, 2, 3}), std::sqrt(2.0 / 3.0), 1e-12);
  const auto eq = aggregate({0.3, 0.9, 0.6}, {5, 5, 5});
  EXPECT_EQ(eq.micro, eq.macro);
  EXPECT_THROW(aggregate({0.3}, {0}), upam::DataError);
}

TEST(SiteYears, Blocking) {
  EXPECT_EQ(split_site_years({{"a", "A", 2015}, {"b", "B", 2015}, {"c", "C", 2015}}).size(), 3u);
  EXPECT_EQ(split_site_years({{"a", "A", 2015}, {"b", "A", 2016}}).size(), 2u);
  std::vector<ClipMeta> clips;
  for (int i = 0; i < 40; ++i) clips.push_back({"A" + std::to_string(i), "A", 2015, 1});
  for (int i = 0; i < 25; ++i) clips.push_back({"B" + std::to_string(i), "B", 2016, 2});
  for (int i = 0; i < 10; ++i) clips.push_back({"C" + std::to_string(i), "C", 2015, 0});
  const auto blocks = split_site_years(clips);
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].key.str(), "A_2015");
  EXPECT_EQ(blocks[0].clip_ids.size(), 40u);
  EXPECT_EQ(blocks[1].clip_ids.size(), 25u);
  EXPECT_EQ(blocks[1].annotation_count, 50u);
  EXPECT_EQ(blocks[2].clip_ids.front(), "C0");
  EXPECT_THROW(split_site_years({{"x", "", 2015}}), upam::DataError);
  EXPECT_THROW(split_site_years({{"x", "A", 0}}), upam::DataError);
}

TEST(Stratify, ExactDivisibility) {
  std::vector<int> y(50, 0);
  std::fill(y.begin(), y.begin() + 10, 1);
  const auto folds = stratified_k_fold(y, 5, 1);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    std::size_t pos = 0;
    for (auto i : f) pos += y[i];
    EXPECT_EQ(pos, 2u);
    EXPECT_EQ(f.size() - pos, 8u);
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(all.size(), 50u);
  EXPECT_EQ(folds, stratified_k_fold(y, 5, 1));
  EXPECT_NE(folds, stratified_k_fold(y, 5, 2));
}

TEST(Stratify, PigeonholeAndErrors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<int> y(11 + 37, 0);
    std::fill(y.begin(), y.begin() + 11, 1);
    const auto folds = stratified_k_fold(y, 5, seed);
    std::size_t lo = 99, hi = 0, slo = 99, shi = 0;
    for (const auto& f : folds) {
      std::size_t pos = 0;
      for (auto i : f) pos += y[i];
      lo = std::min(lo, pos);
      hi = std::max(hi, pos);
      slo = std::min(slo, f.size());
      shi = std::max(shi, f.size());
    }
    EXPECT_GE(lo, 2u);
    EXPECT_LE(hi, 3u);
    EXPECT_LE(shi - slo, 1u);
  }
  EXPECT_THROW(stratified_k_fold({1, 1, 0, 0, 0, 0}, 3, 0), upam::StratificationError);
  EXPECT_THROW(stratified_k_fold({1, 0}, 1, 0), upam::UsageError);
}

TEST(Stratify, GroupsStayTogether) {
  std::vector<int> y;
  std::vector<std::string> g;
  for (int c = 0; c < 12; ++c)
    for (int w = 0; w < 4; ++w) {
      y.push_back(c < 4 && w == 1);
      g.push_back("clip" + std::to_string(c));
    }
  const auto folds = stratified_k_fold(y, 3, 4, &g);
  for (const auto& f : folds) {
    std::set<std::string> here;
    for (auto i : f) here.insert(g[i]);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (here.count(g[i])) EXPECT_TRUE(std::binary_search(f.begin(), f.end(), i));
  }
}

TEST(Leakage, AssertionFires) {
  FoldPlan p;
  p.train_ids = {"a#0", "a#1"};
  p.val_ids = {"a#2"};
  p.test_ids = {"b#0"};
  EXPECT_NO_THROW(assert_no_leakage(p));
  p.val_ids.push_back("b#0");
  EXPECT_THROW(assert_no_leakage(p), upam::LeakageError);
  p.val_ids = {"a#1"};
  EXPECT_THROW(assert_no_leakage(p), upam::LeakageError);
}

TEST(MergeEvents, CapsRunsAtThree) {
  std::vector<ScoredWindow> w;
  for (std::size_t i = 0; i < 7; ++i) w.push_back({"c", i, i < 5 ? 1 : 0, 0.1 * static_cast<double>(i)});
  w.push_back({"d", 0, 1, 0.9});
  const auto e = merge_events(w, 3);
  // [0..2] [3..4] 5 6 d0
  ASSERT_EQ(e.size(), 5u);
  EXPECT_NEAR(e[0].score, 0.2, 1e-12);
  EXPECT_NEAR(e[1].score, 0.4, 1e-12);
  EXPECT_EQ(e[2].label, 0);
  EXPECT_EQ(merge_events(w, 0).size(), 4u);
}

TEST(NestedCv, ConstantPredictorApIsPrevalence) {
  const auto d = corpus_from({{{"A", 2015}, {6, 14}}, {{"B", 2016}, {5, 20}}});
  NestedCvOptions opt;
  opt.k = 2;
  const auto r = nested_cv(d, constant_half, opt);
  ASSERT_EQ(r.blocks.size(), 2u);
  EXPECT_DOUBLE_EQ(r.blocks[0].metrics.at("ap").mean, 6.0 / 20.0);
  EXPECT_DOUBLE_EQ(r.blocks[1].metrics.at("ap").mean, 5.0 / 25.0);
  EXPECT_EQ(r.blocks[0].metrics.at("ap").sigma, 0.0);
  EXPECT_EQ(r.models_trained, 4u);
}

TEST(NestedCv, CountContractAndAudit) {
  const auto d = corpus_from({{{"A", 2015}, {12, 30}}, {{"B", 2016}, {10, 25}}, {{"C", 2015}, {8, 40}}});
  std::ostringstream audit;
  NestedCvOptions opt;
  opt.k = 5;
  opt.audit = &audit;
  std::size_t calls = 0;
  const auto r = nested_cv(d, [&](const FoldJob& j) { ++calls; return constant_half(j); }, opt);
  EXPECT_EQ(calls, 15u);
  EXPECT_EQ(r.models_trained, 15u);
  EXPECT_EQ(r.leakage_checks, 15u);
  EXPECT_EQ(r.blocks.size(), 3u);
  EXPECT_EQ(r.micro.size(), 4u);

  std::istringstream lines(audit.str());
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    const auto j = nlohmann::json::parse(line);
    std::set<std::string> test(j["test_ids"].begin(), j["test_ids"].end());
    for (const auto& id : j["train_ids"]) EXPECT_FALSE(test.count(id));
    for (const auto& id : j["val_ids"]) EXPECT_FALSE(test.count(id));
    EXPECT_TRUE(j["seeds"].contains("model"));
  }
  EXPECT_EQ(n, 15u);

  const auto csv = to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "block,metric,mean,sigma");
  EXPECT_NE(csv.find("micro,ap,"), std::string::npos);
  EXPECT_NE(csv.find("macro,f1,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5 * 4);
}

TEST(NestedCv, InnerFoldsPartitionThePool) {
  const auto d = corpus_from({{{"A", 2015}, {10, 30}}, {{"B", 2016}, {10, 30}}, {{"C", 2017}, {10, 30}}});
  NestedCvOptions opt;
  opt.k = 4;
  opt.neg_downsample = 1.0;
  std::map<std::size_t, std::multiset<std::string>> val_union;
  std::mutex mu;
  nested_cv(d,
            [&](const FoldJob& j) {
              std::lock_guard lock(mu);
              for (const auto* s : j.val) val_union[j.plan->outer].insert(upam::train::instance_id(*s));
              EXPECT_EQ(j.train.size() + j.val.size(), 80u);
              return constant_half(j);
            },
            opt);
  for (const auto& [i, ids] : val_union) {
    EXPECT_EQ(ids.size(), 80u);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 80u);
  }
}

TEST(NestedCv, FailedFoldAbortsLoudly) {
  const auto d = corpus_from({{{"A", 2015}, {6, 14}}, {{"B", 2016}, {5, 20}}});
  NestedCvOptions opt;
  opt.k = 2;
  auto bad = [](const FoldJob& j) -> FoldOutcome {
    if (j.plan->outer == 1 && j.plan->inner == 1) throw upam::DataError("boom");
    return constant_half(j);
  };
  try {
    nested_cv(d, bad, opt);
    FAIL();
  } catch (const upam::Error& e) {
    EXPECT_EQ(e.category(), upam::ErrorCategory::data);
    EXPECT_NE(std::string(e.what()).find("B_2016"), std::string::npos);
  }
}

TEST(NestedCv, WorkerCountDoesNotChangeReport) {
  auto a = upam::testing::make_toy(6, 10, 1, "a");
  auto b = upam::testing::make_toy(6, 10, 2, "b");
  Dataset d;
  d.clips = {{"a", "A", 2015, 6}, {"b", "B", 2016, 6}};
  for (auto* set : {&a, &b})
    for (const auto& s : set->owned) d.windows.push_back(*s);
  auto mc = upam::model::ArpanConfig::desk();
  mc.width_scale = 1.0 / 32.0;
  upam::train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  NestedCvOptions opt;
  opt.k = 2;
  const auto r1 = to_json(nested_cv(d, arpan_learner(mc, tc), opt));
  opt.workers = 3;
  const auto r3 = to_json(nested_cv(d, arpan_learner(mc, tc), opt));
  EXPECT_EQ(r1.dump(), r3.dump());
}

TEST(Bench, DefinitionalAndDirection) {
  auto toy = upam::testing::make_toy(16, 16, 5, "bench");
  auto cfg = upam::model::ArpanConfig::desk();
  auto m = upam::model::build<float>(cfg);
  const auto e = efficiency_bench(m, toy.view, 3);
  EXPECT_NEAR(e.per_sample_seconds * static_cast<double>(e.samples), e.total_seconds, 1e-3 * e.total_seconds);
  EXPECT_EQ(e.parameters, m.count_parameters());
  EXPECT_THROW(efficiency_bench(m, {}, 3), upam::DataError);
}

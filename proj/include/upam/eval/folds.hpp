#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"

namespace upam::eval {

struct ClipMeta {
  std::string id;
  std::string site;
  int year = 0;
  std::size_t annotations = 0;
};

struct SiteYearKey {
  std::string site;
  int year = 0;

  auto operator<=>(const SiteYearKey&) const = default;
  std::string str() const { return site + "_" + std::to_string(year); }
};

struct SiteYearBlock {
  SiteYearKey key;
  std::vector<std::string> clip_ids;
  std::size_t annotation_count = 0;
};

/// One block per distinct (site, year), ordered by key; clips keep input order.
inline std::vector<SiteYearBlock> split_site_years(const std::vector<ClipMeta>& clips) {
  std::map<SiteYearKey, SiteYearBlock> blocks;
  std::set<std::string> seen;
  for (const auto& c : clips) {
    if (c.site.empty() || c.year <= 0) throw DataError("clip " + c.id + " lacks site/year metadata");
    if (!seen.insert(c.id).second) throw DataError("duplicate clip id " + c.id);
    auto& b = blocks[{c.site, c.year}];
    b.key = {c.site, c.year};
    b.clip_ids.push_back(c.id);
    b.annotation_count += c.annotations;
  }
  std::vector<SiteYearBlock> out;
  for (auto& [k, b] : blocks) out.push_back(std::move(b));
  return out;
}

/// Stratified k-fold over indices 0..n-1. With `groups`, whole groups move
/// together and a group counts as positive when any member is.
inline std::vector<std::vector<std::size_t>> stratified_k_fold(const std::vector<int>& labels, std::size_t k,
                                                               std::uint64_t seed,
                                                               const std::vector<std::string>* groups = nullptr) {
  if (k < 2) throw UsageError("stratified_k_fold: k must be at least 2");
  if (groups && groups->size() != labels.size()) throw ShapeError("stratified_k_fold: group list size mismatch");

  // units: each a list of member indices plus a class
  std::vector<std::vector<std::size_t>> units;
  std::vector<int> unit_class;
  if (groups) {
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, fresh] = at.emplace((*groups)[i], units.size());
      if (fresh) {
        units.emplace_back();
        unit_class.push_back(0);
      }
      units[it->second].push_back(i);
      unit_class[it->second] |= labels[i] == 1;
    }
  } else {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      units.push_back({i});
      unit_class.push_back(labels[i] == 1);
    }
  }

  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t offset = 0;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> members;
    for (std::size_t u = 0; u < units.size(); ++u)
      if (unit_class[u] == cls) members.push_back(u);
    if (members.size() < k)
      throw StratificationError("stratified_k_fold: class " + std::to_string(cls) + " has " +
                                std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));
    std::mt19937_64 rng(derive_seed(seed, "stratify", static_cast<std::uint64_t>(cls)));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      auto& f = folds[(offset + r) % k];
      f.insert(f.end(), units[members[r]].begin(), units[members[r]].end());
    }
    offset = (offset + members.size()) % k;
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

struct FoldPlan {
  std::size_t outer = 0, inner = 0;
  std::string block;
  std::vector<std::string> train_ids, val_ids, test_ids;
  std::uint64_t model_seed = 0, train_seed = 0, downsample_seed = 0, fold_seed = 0;
};

inline void to_json(nlohmann::json& j, const FoldPlan& p) {
  j = {{"outer", p.outer},
       {"inner", p.inner},
       {"block", p.block},
       {"seeds", {{"model", p.model_seed}, {"train", p.train_seed}, {"downsample", p.downsample_seed}, {"folds", p.fold_seed}}},
       {"train_ids", p.train_ids},
       {"val_ids", p.val_ids},
       {"test_ids", p.test_ids}};
}

/// Throws LeakageError unless train, val and test are pairwise disjoint.
inline void assert_no_leakage(const FoldPlan& p) {
  std::set<std::string> test(p.test_ids.begin(), p.test_ids.end());
  std::set<std::string> val(p.val_ids.begin(), p.val_ids.end());
  const auto where = " (block " + p.block + ", fold " + std::to_string(p.inner) + ")";
  for (const auto& id : p.val_ids)
    if (test.count(id)) throw LeakageError("validation instance " + id + " is in the test block" + where);
  for (const auto& id : p.train_ids) {
    if (test.count(id)) throw LeakageError("training instance " + id + " is in the test block" + where);
    if (val.count(id)) throw LeakageError("training instance " + id + " is in the validation fold" + where);
  }
}

}  // namespace upam::eval

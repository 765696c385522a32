#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/eval/bench.hpp"
#include "upam/eval/nested_cv.hpp"
#include "upam/model/checkpoint.hpp"
#include "upam/pipeline/dataset.hpp"
#include "upam/saliency/saliency.hpp"
#include "upam/synth/corpus.hpp"
#include "upam/train/trainer.hpp"

namespace upam::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode { ok = 0, usage = 2, data = 3, invariant = 4 };

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return usage;
    case ErrorCategory::data:
    case ErrorCategory::io: return data;
    case ErrorCategory::invariant: return invariant;
  }
  return invariant;
}

using nlohmann::json;
namespace fs = std::filesystem;

/// Indices ordered by descending score; equal scores keep input order.
inline std::vector<std::size_t> rank_samples(const std::vector<double>& scores, std::size_t top_j) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(top_j, idx.size()));
  return idx;
}

inline std::vector<synth::SiteProfile> default_profiles() {
  synth::SiteProfile a{"Kerguelen", 2015, -3.0, 4.0, 1.0};
  a.calls_per_block = 60;
  synth::SiteProfile b{"Casey", 2017, -3.0, 4.0, 1.0};
  b.calls_per_block = 30;
  synth::SiteProfile c{"Balleny", 2015, 3.0, 4.0, 1.0};
  c.calls_per_block = 15;
  c.interference = {synth::Interference::fm_confounder};
  return {a, b, c};
}

/// Defaults for every config section; a config file overrides keys it names.
inline json default_config() {
  const auto fe = dsp::FrontendConfig::desk();
  json j;
  j["seed"] = 0;
  j["frontend"] = {{"window", fe.window}, {"hop", fe.hop}, {"fft_len", fe.fft_len}, {"fft_hop", fe.fft_hop}};
  j["model"] = model::ArpanConfig::desk();
  j["train"] = train::TrainConfig{};
  j["cv"] = {{"k", 5}, {"workers", 1}, {"threshold", 0.5}, {"neg_downsample", 0.5},
             {"group_by_clip", false}, {"merge_events", false}, {"merge_cap", 3}};
  j["corpus"] = {{"clips_per_block", 4}, {"clip_seconds", 120.0}, {"sample_rate", 250.0}, {"profiles", default_profiles()}};
  return j;
}

inline json load_config(const std::string& path) {
  auto cfg = default_config();
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json user;
  try {
    user = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  cfg.merge_patch(user);
  return cfg;
}

inline dsp::FrontendConfig frontend_from(const json& j) {
  auto fe = dsp::FrontendConfig::desk();
  if (j.is_string()) {
    if (j == "canonical") return dsp::FrontendConfig::canonical();
    if (j == "desk") return fe;
    throw UsageError("unknown frontend preset " + j.get<std::string>());
  }
  fe.window = j.value("window", fe.window);
  fe.hop = j.value("hop", fe.hop);
  fe.fft_len = j.value("fft_len", fe.fft_len);
  fe.fft_hop = j.value("fft_hop", fe.fft_hop);
  return fe;
}

inline std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

/// FNV-1a over the manifest text and every referenced WAV.
inline std::string corpus_hash(const fs::path& manifest) {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::uint64_t h = fnv1a(slurp(manifest));
  for (const auto& r : synth::read_manifest(manifest)) h = fnv1a(slurp(manifest.parent_path() / r.path), h);
  return hex64(h);
}

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

inline std::optional<fs::path> cache_dir(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv("UPAM_CACHE_DIR"); env && *env) return fs::path(env);
  return std::nullopt;
}

struct Manifest {
  json doc;
  void write(const fs::path& dir) {
    doc["finished_at"] = iso_now();
    write_json(dir / "run_manifest.json", doc);
  }
};

inline Manifest start_manifest(const std::string& command, const std::vector<std::string>& args, const json& cfg) {
  Manifest m;
  m.doc = {{"command", command}, {"args", args}, {"config", cfg}, {"tool_version", kVersion},
           {"seed", cfg.at("seed")}, {"started_at", iso_now()}};
  return m;
}

namespace report_fmt {

inline eval::NestedCvReport from_json(const json& j) {
  eval::NestedCvReport r;
  auto stats = [](const json& s) {
    std::map<std::string, eval::Stat> m;
    for (auto it = s.begin(); it != s.end(); ++it) m[it.key()] = {it.value().at("mean"), it.value().at("sigma")};
    return m;
  };
  r.outer_folds = j.value("outer_folds", 0);
  r.inner_folds = j.value("inner_folds", 0);
  r.models_trained = j.value("models_trained", 0);
  r.leakage_checks = j.value("leakage_checks", 0);
  for (const auto& b : j.at("blocks")) {
    eval::BlockSummary s;
    s.block = b.at("block");
    s.annotation_count = b.value("annotation_count", 0);
    s.windows = b.value("windows", 0);
    s.positives = b.value("positives", 0);
    s.metrics = stats(b.at("metrics"));
    r.blocks.push_back(s);
  }
  r.micro = stats(j.at("micro"));
  r.macro = stats(j.at("macro"));
  return r;
}

/// Table-style markdown: one row per block plus micro and macro rows.
inline std::string markdown(const eval::NestedCvReport& r) {
  std::string out = "| Block | AP | σ | Rec | σ | Pre | σ | F1 | σ |\n|---|---|---|---|---|---|---|---|---|\n";
  auto row = [&](const std::string& name, const std::map<std::string, eval::Stat>& m) {
    out += "| " + name;
    for (const char* k : {"ap", "recall", "precision", "f1"}) {
      char buf[48];
      std::snprintf(buf, sizeof buf, " | %.3f | %.3f", m.at(k).mean, m.at(k).sigma);
      out += buf;
    }
    out += " |\n";
  };
  for (const auto& b : r.blocks) row(b.block, b.metrics);
  row("Micro", r.micro);
  row("Macro", r.macro);
  return out;
}

}  // namespace report_fmt

struct Common {
  std::string config, out = "upam_out", manifest, cache;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, epochs, k;
  std::optional<std::string> flags;
  std::optional<double> width;
  bool no_attention = false;
};

inline json resolve(const Common& c) {
  auto cfg = load_config(c.config);
  if (c.seed) cfg["seed"] = *c.seed;
  if (c.workers) cfg["cv"]["workers"] = *c.workers;
  if (c.k) cfg["cv"]["k"] = *c.k;
  if (c.epochs) cfg["train"]["epochs"] = *c.epochs;
  if (c.flags) cfg["model"]["flags"] = model::Flags::parse(*c.flags).to_string();
  if (c.width) cfg["model"]["width_scale"] = *c.width;
  if (c.no_attention) cfg["model"]["attention"] = false;
  model::Flags::parse(cfg["model"].value("flags", "full"));
  return cfg;
}

inline eval::NestedCvOptions cv_options(const json& cfg) {
  const auto& cv = cfg.at("cv");
  eval::NestedCvOptions o;
  o.k = cv.value("k", o.k);
  o.workers = cv.value("workers", o.workers);
  o.seed = cfg.at("seed").get<std::uint64_t>();
  o.threshold = cv.value("threshold", o.threshold);
  o.neg_downsample = cv.value("neg_downsample", o.neg_downsample);
  o.group_by_clip = cv.value("group_by_clip", o.group_by_clip);
  o.merge_events = cv.value("merge_events", o.merge_events);
  o.merge_cap = cv.value("merge_cap", o.merge_cap);
  return o;
}

inline model::ArpanConfig model_config(const json& cfg) { return cfg.at("model").get<model::ArpanConfig>(); }

inline train::TrainConfig train_config(const json& cfg) { return cfg.at("train").get<train::TrainConfig>(); }

inline eval::Dataset dataset_for(const Common& c, const json& cfg) {
  if (c.manifest.empty()) throw UsageError("--manifest is required");
  return pipeline::load_dataset(c.manifest, frontend_from(cfg.at("frontend")), cache_dir(c.cache));
}

inline int cmd_datagen(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
  auto cfg = resolve(c);
  const auto& cj = cfg.at("corpus");
  synth::CorpusConfig cc;
  cc.clips_per_block = cj.value("clips_per_block", cc.clips_per_block);
  cc.clip_seconds = cj.value("clip_seconds", cc.clip_seconds);
  cc.sample_rate = cj.value("sample_rate", cc.sample_rate);
  cc.seed = cfg.at("seed").get<std::uint64_t>();
  const auto profiles = cj.at("profiles").get<std::vector<synth::SiteProfile>>();
  const auto fe = frontend_from(cfg.at("frontend"));
  if (cc.clip_seconds * cc.sample_rate < 2.0 * static_cast<double>(fe.window))
    throw UsageError("clip_seconds must cover at least two analysis windows");
  ensure_dir(c.out);
  auto man = start_manifest("datagen", args, cfg);
  const auto manifest = synth::write_corpus(synth::generate_clips(profiles, cc), c.out);
  man.doc["corpus_hash"] = corpus_hash(manifest);
  man.write(c.out);
  out << manifest.string() << '\n';
  return ok;
}

inline int cmd_features(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
  auto cfg = resolve(c);
  Common cc = c;
  if (cache_dir(c.cache) == std::nullopt) cc.cache = (fs::path(c.out) / "cache").string();
  ensure_dir(c.out);
  auto man = start_manifest("features", args, cfg);
  const auto d = dataset_for(cc, cfg);
  json summary = json::object();
  for (const auto& b : eval::split_site_years(d.clips)) summary[b.key.str()] = {{"clips", b.clip_ids.size()}, {"annotations", b.annotation_count}};
  std::size_t pos = 0;
  for (const auto& w : d.windows) pos += w.label == 1;
  json j = {{"windows", d.windows.size()}, {"positives", pos}, {"blocks", summary}, {"cache", cache_dir(cc.cache)->string()}};
  write_json(fs::path(c.out) / "features.json", j);
  man.doc["corpus_hash"] = corpus_hash(c.manifest);
  man.write(c.out);
  out << j.dump() << '\n';
  return ok;
}

inline int cmd_train(const Common& c, const std::vector<std::string>& args, const std::string& holdout, std::size_t fold,
                     std::ostream& out) {
  auto cfg = resolve(c);
  ensure_dir(c.out);
  auto man = start_manifest("train", args, cfg);
  const auto d = dataset_for(c, cfg);
  const auto opt = cv_options(cfg);
  auto mc = model_config(cfg);
  auto tc = train_config(cfg);
  auto model_out = std::make_shared<std::optional<model::Model<float>>>();
  bool ran = false;
  json metrics;
  std::ofstream log(fs::path(c.out) / "train_log.jsonl");
  // A single (outer, inner) cell of the nested layout; every other cell is skipped.
  const auto blocks = eval::split_site_years(d.clips);
  std::size_t outer = 0;
  if (!holdout.empty()) {
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](const eval::SiteYearBlock& b) { return b.key.str() == holdout; });
    if (it == blocks.end()) throw UsageError("unknown block " + holdout);
    outer = static_cast<std::size_t>(it - blocks.begin());
  }
  if (fold >= opt.k) throw UsageError("--fold must be below k");
  eval::Learner learner = [&](const eval::FoldJob& job) {
    eval::FoldOutcome o;
    o.test_scores.assign(job.test.size(), 0.0);
    if (job.plan->outer != outer || job.plan->inner != fold) return o;
    auto m = mc;
    m.seed = job.plan->model_seed;
    auto t = tc;
    t.seed = job.plan->train_seed;
    auto model = model::build<float>(m);
    const auto hist = train::train(model, job.train, job.val, t, &log);
    const auto p = train::predict_all(model, job.test);
    o.test_scores.assign(p.begin(), p.end());
    o.best_epoch = hist.best_epoch;
    o.val_accuracy = hist.best_accuracy();
    model_out->emplace(std::move(model));
    ran = true;
    return o;
  };
  auto single = opt;
  single.workers = 1;
  const auto rep = eval::nested_cv(d, learner, single);
  if (!ran) throw Error(ErrorCategory::invariant, "train: selected fold was never scheduled");
  const auto& mr = rep.models[outer * opt.k + fold];
  model::save_checkpoint(**model_out, fs::path(c.out) / "model.ckpt");
  metrics = {{"block", blocks[outer].key.str()}, {"fold", fold}, {"test", mr.test}, {"best_epoch", mr.best_epoch},
             {"val_accuracy", mr.val_accuracy}};
  write_json(fs::path(c.out) / "metrics.json", metrics);
  man.doc["corpus_hash"] = corpus_hash(c.manifest);
  man.write(c.out);
  out << metrics.dump() << '\n';
  return ok;
}

inline int cmd_nested(const Common& c, const std::vector<std::string>& args, bool bench, std::ostream& out) {
  auto cfg = resolve(c);
  ensure_dir(c.out);
  auto man = start_manifest("nested-cv", args, cfg);
  const auto d = dataset_for(c, cfg);
  auto opt = cv_options(cfg);
  std::ofstream audit(fs::path(c.out) / "audit.jsonl"), log(fs::path(c.out) / "train_log.jsonl");
  opt.audit = &audit;
  opt.train_log = &log;
  const auto rep = eval::nested_cv(d, eval::arpan_learner(model_config(cfg), train_config(cfg)), opt);
  const auto j = eval::to_json(rep);
  write_json(fs::path(c.out) / "report.json", j);
  write_text(fs::path(c.out) / "report.csv", eval::to_csv(rep));
  if (bench) {
    auto m = model::build<float>(model_config(cfg));
    train::LabeledSet all;
    for (const auto& w : d.windows) all.push_back(&w);
    write_json(fs::path(c.out) / "efficiency.json", eval::efficiency_bench(m, all, 3));
  }
  man.doc["corpus_hash"] = corpus_hash(c.manifest);
  man.doc["derived_seeds"] = {{"folds", "derive_seed(seed, \"folds\", i)"},
                              {"model", "derive_seed(seed, \"model\", i, j)"},
                              {"train", "derive_seed(seed, \"train\", i, j)"},
                              {"downsample", "derive_seed(seed, \"downsample\", i, j)"}};
  man.write(c.out);
  out << eval::to_csv(rep);
  return ok;
}

inline int cmd_bench(const Common& c, const std::vector<std::string>& args, const std::string& checkpoint, std::size_t reps,
                     std::ostream& out) {
  auto cfg = resolve(c);
  ensure_dir(c.out);
  auto man = start_manifest("bench", args, cfg);
  const auto d = dataset_for(c, cfg);
  auto m = checkpoint.empty() ? model::build<float>(model_config(cfg)) : model::load_checkpoint<float>(fs::path(checkpoint));
  train::LabeledSet all;
  for (const auto& w : d.windows) all.push_back(&w);
  const json j = eval::efficiency_bench(m, all, reps);
  write_json(fs::path(c.out) / "efficiency.json", j);
  man.write(c.out);
  out << j.dump() << '\n';
  return ok;
}

inline int cmd_saliency(const Common& c, const std::vector<std::string>& args, const std::string& checkpoint,
                        const std::string& block, std::size_t top, std::ostream& out) {
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  auto cfg = resolve(c);
  ensure_dir(c.out);
  auto man = start_manifest("saliency", args, cfg);
  const auto d = dataset_for(c, cfg);
  auto m = model::load_checkpoint<double>(fs::path(checkpoint));
  std::map<std::string, std::string> block_of;
  for (const auto& cl : d.clips) block_of[cl.id] = eval::SiteYearKey{cl.site, cl.year}.str();
  train::LabeledSet chosen;
  for (const auto& w : d.windows)
    if (block.empty() || block_of[w.clip_id] == block) chosen.push_back(&w);
  if (chosen.empty()) throw DataError("no windows in block " + block);
  const auto p = train::predict_all(m, chosen);
  const auto fe = frontend_from(cfg.at("frontend"));
  json ranking = json::array();
  for (auto i : rank_samples(std::vector<double>(p.begin(), p.end()), top)) {
    const auto& s = *chosen[i];
    const auto map = saliency::saliency_map(m, s);
    const std::string stem = s.clip_id + "_" + std::to_string(s.index);
    saliency::export_overlay(s, map, fs::path(c.out) / (stem + ".png"));
    const double start = static_cast<double>(s.index * fe.hop) / fe.sample_rate;
    write_json(fs::path(c.out) / (stem + ".json"),
               {{"clip_id", s.clip_id}, {"index", s.index}, {"score", p[i]}, {"top", saliency::top_salient(map, s, 10, start)}});
    ranking.push_back({{"clip_id", s.clip_id}, {"index", s.index}, {"score", p[i]}, {"label", s.label}, {"image", stem + ".png"}});
  }
  write_json(fs::path(c.out) / "ranking.json", ranking);
  man.write(c.out);
  out << ranking.dump() << '\n';
  return ok;
}

inline int cmd_report(const std::string& in, const std::string& format, const std::string& dest, std::ostream& out) {
  std::ifstream f(in);
  if (!f) throw IoError("cannot open report " + in);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("report " + in + ": " + e.what());
  }
  eval::NestedCvReport r;
  try {
    r = report_fmt::from_json(j);
  } catch (const json::exception& e) {
    throw DataError("report " + in + ": " + e.what());
  }
  std::string text;
  if (format == "csv")
    text = eval::to_csv(r);
  else if (format == "markdown")
    text = report_fmt::markdown(r);
  else
    throw UsageError("unknown report format " + format);
  if (dest.empty())
    out << text;
  else
    write_text(dest, text);
  return ok;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Passive acoustic detection pipeline: synthetic corpora, spectrogram features, ARPA-N training and nested cross-validation", "upam"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common c;
  auto common = [&](CLI::App* s, bool needs_manifest) {
    s->add_option("--config", c.config, "JSON config file; flags override it");
    s->add_option("--out", c.out, "output directory")->capture_default_str();
    s->add_option("--seed", c.seed, "top-level seed (default 0)");
    s->add_option("--workers", c.workers, "parallel fold workers (default 1)");
    s->add_option("--k", c.k, "inner folds (default 5)");
    s->add_option("--epochs", c.epochs, "training epochs (default 15)");
    s->add_option("--flags", c.flags, "component flags, e.g. full, full-D, S+D+K (default full)");
    s->add_option("--width", c.width, "channel width scale (default 1/16)");
    s->add_flag("--no-attention", c.no_attention, "build the attention-free variant");
    if (needs_manifest) {
      s->add_option("--manifest", c.manifest, "corpus manifest (JSON lines)")->required();
      s->add_option("--cache", c.cache, "spectrogram cache directory (default $UPAM_CACHE_DIR)");
    }
  };
  auto* datagen = app.add_subcommand("datagen", "generate a synthetic multi-site corpus");
  common(datagen, false);
  auto* features = app.add_subcommand("features", "extract and cache spectrograms");
  common(features, true);
  auto* trainc = app.add_subcommand("train", "train one inner-fold model");
  common(trainc, true);
  std::string holdout;
  std::size_t fold = 0;
  trainc->add_option("--holdout", holdout, "outer block to hold out, e.g. Casey_2017 (default first)");
  trainc->add_option("--fold", fold, "inner fold index")->capture_default_str();
  auto* nested = app.add_subcommand("nested-cv", "run site-year nested cross-validation");
  common(nested, true);
  bool bench_flag = false;
  nested->add_flag("--bench", bench_flag, "also write efficiency.json");
  auto* bench = app.add_subcommand("bench", "measure inference time and parameter count");
  common(bench, true);
  std::string checkpoint;
  std::size_t reps = 3;
  bench->add_option("--checkpoint", checkpoint, "model checkpoint (default: freshly built model)");
  bench->add_option("--reps", reps, "timed repetitions after warm-up")->capture_default_str();
  auto* sal = app.add_subcommand("saliency", "saliency overlays for the top-ranked windows");
  common(sal, true);
  std::string block;
  std::size_t top = 5;
  sal->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  sal->add_option("--block", block, "restrict to one site-year block");
  sal->add_option("--top", top, "number of windows")->capture_default_str();
  auto* report = app.add_subcommand("report", "render a nested-cv report as CSV or markdown");
  std::string in, format = "csv", dest;
  report->add_option("--in", in, "report.json")->required();
  report->add_option("--format", format, "csv or markdown")->capture_default_str();
  report->add_option("--out", dest, "output file (default stdout)");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return ok;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return usage;
  }
  try {
    if (*datagen) return cmd_datagen(c, args, out);
    if (*features) return cmd_features(c, args, out);
    if (*trainc) return cmd_train(c, args, holdout, fold, out);
    if (*nested) return cmd_nested(c, args, bench_flag, out);
    if (*bench) return cmd_bench(c, args, checkpoint, reps, out);
    if (*sal) return cmd_saliency(c, args, checkpoint, block, top, out);
    if (*report) return cmd_report(in, format, dest, out);
  } catch (const Error& e) {
    err << json{{"error", to_string(e.category())}, {"message", e.what()}}.dump() << '\n';
    return exit_code(e.category());
  } catch (const json::exception& e) {
    err << json{{"error", "usage"}, {"message", std::string("config: ") + e.what()}}.dump() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << json{{"error", "invariant"}, {"message", e.what()}}.dump() << '\n';
    return invariant;
  }
  return usage;
}

}  // namespace upam::cli

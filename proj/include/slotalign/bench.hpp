#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slotalign/aligner.hpp"
#include "slotalign/config.hpp"
#include "slotalign/ctc.hpp"
#include "slotalign/metrics.hpp"

namespace slotalign {

struct TrainedRun {
  std::string name;
  std::vector<TraceRow> trace;
  EvalReport report;
  double train_seconds = 0.0;  // timing
};

struct BenchResult {
  std::vector<TrainedRun> runs;  // slot, [slot_no_insertion], ctc
};

using BenchLog = std::function<void(const std::string& run, const TraceRow&)>;

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline EvalReport evaluate_all(const Suites& suites, const AlignFn& align) {
  EvalReport rep;
  for (const auto& [name, suite] : suites.named())
    if (!suite->empty()) rep.suites.push_back(evaluate_suite(name, *suite, align, Reference::kGold));
  return rep;
}

}  // namespace detail

/// Trains one slot aligner on `corpus` with `schedule` and scores it on
/// every suite. The trained model is returned through `out` when given.
inline TrainedRun run_slot(const std::string& name, const RunConfig& cfg, const TrainSchedule& schedule,
                           const std::vector<Utterance>& corpus, const Suites& suites, const BenchLog& log,
                           AlignerModel<float>* out = nullptr) {
  TrainedRun run;
  run.name = name;
  AlignerModel<float> local(cfg.aligner);
  AlignerModel<float>& model = out ? *out : local;
  const auto t0 = std::chrono::steady_clock::now();
  run.trace = train(model, corpus, schedule, [&](const TraceRow& r) {
    if (log) log(name, r);
  });
  run.train_seconds = detail::seconds_since(t0);
  run.report = detail::evaluate_all(suites, [&](const Utterance& u) {
    return model.align(u, all_token_indices(u.tokens.size()));
  });
  return run;
}

inline TrainedRun run_ctc(const RunConfig& cfg, const std::vector<Utterance>& corpus, const Suites& suites,
                          const BenchLog& log, CtcModel<float>* out = nullptr) {
  TrainedRun run;
  run.name = "ctc";
  CtcModel<float> local(cfg.ctc);
  CtcModel<float>& model = out ? *out : local;
  const auto t0 = std::chrono::steady_clock::now();
  run.trace = train_ctc(model, corpus, cfg.ctc_schedule, [&](const TraceRow& r) {
    if (log) log(run.name, r);
  });
  run.train_seconds = detail::seconds_since(t0);
  run.report = detail::evaluate_all(suites, [&](const Utterance& u) { return model.align(u); });
  return run;
}

/// End-to-end comparison: slot aligner, optional no-insertion ablation
/// (identical seeds and steps, p_dynamic = 0) and the CTC baseline, all
/// scored against gold on the same suites.
inline BenchResult run_bench(const RunConfig& cfg, const BenchLog& log = {}) {
  const PrototypeTable protos(cfg.corpus);
  const auto corpus = build_train_corpus(cfg.corpus, protos, cfg.train);
  const auto suites = build_suites(cfg.corpus, protos, cfg.suites);
  BenchResult res;
  res.runs.push_back(run_slot("slot", cfg, cfg.schedule, corpus, suites, log));
  if (cfg.ablation) {
    TrainSchedule plain = cfg.schedule;
    plain.p_dynamic = 0.0;
    res.runs.push_back(run_slot("slot_no_insertion", cfg, plain, corpus, suites, log));
  }
  res.runs.push_back(run_ctc(cfg, corpus, suites, log));
  return res;
}

inline nlohmann::json to_json(const BenchResult& b, bool with_timing = true) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : b.runs) {
    nlohmann::json j = {{"name", r.name},
                        {"final_loss", r.trace.empty() ? 0.0 : r.trace.back().loss},
                        {"steps", r.trace.empty() ? 0 : r.trace.back().step},
                        {"eval", to_json(r.report, with_timing)}};
    if (with_timing) j["timing"] = {{"train_seconds", r.train_seconds}};
    runs.push_back(std::move(j));
  }
  return {{"runs", runs}};
}

/// Removes every "timing" member recursively; what remains must be
/// reproducible bit for bit.
inline nlohmann::json strip_timing(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

inline const TrainedRun* find_run(const BenchResult& b, const std::string& name) {
  for (const auto& r : b.runs)
    if (r.name == name) return &r;
  return nullptr;
}

inline const SuiteReport* find_suite(const EvalReport& r, const std::string& name) {
  for (const auto& s : r.suites)
    if (s.name == name) return &s;
  return nullptr;
}

}  // namespace slotalign

#pragma once

// Text formats used by the reporting side of the CLI: simulator metric
// traces, per-token logprob files, and (x, y) pair files.

#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "less/grpo.hpp"
#include "less/rollout.hpp"
#include "less/simulator.hpp"

namespace less {

inline constexpr std::string_view kMetricsHeader = "#less-metrics v1";
inline constexpr std::string_view kLogprobHeader = "#less-logprobs v1";

namespace detail {

inline nlohmann::ordered_json optional_real(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> read_optional_real(const nlohmann::json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

inline std::string at_k(const char* name, std::size_t k) { return std::string(name) + "@" + std::to_string(k); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Metric traces
// ---------------------------------------------------------------------------

/// One simulator run as read back from its trace file.
struct TraceFile {
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t k = 8;
  std::vector<sim::StepMetrics> steps;
  std::optional<sim::EvalMetrics> final_eval;
};

/// Line-delimited metrics: header, a run line, one line per step, and a
/// closing line with the final evaluation.
inline void write_trace(const sim::TrainRun& run, std::ostream& out) {
  const std::size_t k = run.config.group_size;
  out << kMetricsHeader << '\n';
  nlohmann::ordered_json head;
  head["run"] = {{"mode", sim::mode_name(run.mode)},
                 {"seed", run.config.seed},
                 {"steps", run.config.steps},
                 {"group_size", k},
                 {"quantile", run.config.shaping.h},
                 {"min_seg_len", run.config.shaping.min_seg_len},
                 {"learning_rate", run.config.learning_rate}};
  out << head.dump() << '\n';
  for (const auto& m : run.metrics) {
    nlohmann::ordered_json row;
    row["step"] = m.step;
    row["accuracy"] = m.accuracy;
    row["overlap_correct_only"] = m.overlap_correct_only;
    row["entropy_ratio_wrong_over_right"] = detail::optional_real(m.entropy_ratio);
    row[detail::at_k("worst", k)] = m.worst;
    row[detail::at_k("std", k)] = m.stddev;
    row["clip_fraction"] = m.clip_fraction;
    row["adv_mass_high"] = m.mass_high;
    row["adv_mass_frag"] = m.mass_frag;
    row["adv_mass_seg"] = m.mass_seg;
    out << row.dump() << '\n';
  }
  if (run.final_eval) {
    const auto& e = *run.final_eval;
    const std::size_t ek = e.samples.k;
    nlohmann::ordered_json fin;
    fin["final"] = {{detail::at_k("avg", ek), e.samples.avg},
                    {detail::at_k("worst", ek), e.samples.worst},
                    {detail::at_k("std", ek), e.samples.stddev},
                    {"k", ek},
                    {"overlap_correct_only", e.overlap_correct_only},
                    {"entropy_ratio_wrong_over_right", detail::optional_real(e.entropy_ratio)}};
    out << fin.dump() << '\n';
  }
}

inline TraceFile read_trace(std::istream& in) {
  TraceFile tf;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    if (!header) {
      if (text != kMetricsHeader) throw ParseError(line, "expected header '" + std::string(kMetricsHeader) + "'");
      header = true;
      continue;
    }
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
      if (const auto it = obj.find("run"); it != obj.end()) {
        tf.mode = it->at("mode").get<std::string>();
        tf.seed = it->at("seed").get<std::uint64_t>();
        tf.k = it->at("group_size").get<std::size_t>();
      } else if (const auto fin = obj.find("final"); fin != obj.end()) {
        sim::EvalMetrics e;
        e.samples.k = fin->at("k").get<std::size_t>();
        e.samples.avg = fin->at(detail::at_k("avg", e.samples.k)).get<double>();
        e.samples.worst = fin->at(detail::at_k("worst", e.samples.k)).get<double>();
        e.samples.stddev = fin->at(detail::at_k("std", e.samples.k)).get<double>();
        e.overlap_correct_only = fin->at("overlap_correct_only").get<double>();
        e.entropy_ratio = detail::read_optional_real(*fin, "entropy_ratio_wrong_over_right");
        tf.final_eval = e;
      } else {
        sim::StepMetrics m;
        m.step = obj.at("step").get<std::size_t>();
        m.accuracy = obj.at("accuracy").get<double>();
        m.overlap_correct_only = obj.at("overlap_correct_only").get<double>();
        m.entropy_ratio = detail::read_optional_real(obj, "entropy_ratio_wrong_over_right");
        m.worst = obj.at(detail::at_k("worst", tf.k)).get<double>();
        m.stddev = obj.at(detail::at_k("std", tf.k)).get<double>();
        m.clip_fraction = obj.value("clip_fraction", 0.0);
        m.mass_high = obj.value("adv_mass_high", 0.0);
        m.mass_frag = obj.value("adv_mass_frag", 0.0);
        m.mass_seg = obj.value("adv_mass_seg", 0.0);
        tf.steps.push_back(m);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("bad metrics record: ") + e.what());
    }
  }
  if (!header) throw ParseError(line, "empty metrics trace");
  return tf;
}

/// Seed-paired LESS vs GRPO comparison on final evaluation metrics.
struct ModeComparison {
  struct ModeMeans {
    std::size_t runs = 0;
    double accuracy = 0.0;
    double worst = 0.0;
    double stddev = 0.0;
    double overlap_correct_only = 0.0;
  };
  ModeMeans grpo;
  ModeMeans less;
  std::size_t paired_seeds = 0;
  std::size_t less_wins_overlap = 0;
  std::size_t less_wins_worst = 0;
  double accuracy_gap = 0.0;  // seed-mean LESS minus GRPO accuracy, in [-1, 1]
};

inline ModeComparison compare_runs(const std::vector<TraceFile>& traces) {
  ModeComparison cmp;
  std::map<std::uint64_t, const TraceFile*> by_seed[2];
  for (const auto& t : traces) {
    if (!t.final_eval) continue;
    const bool is_less = t.mode == "less";
    if (!is_less && t.mode != "grpo") continue;
    auto& mm = is_less ? cmp.less : cmp.grpo;
    ++mm.runs;
    mm.accuracy += t.final_eval->samples.avg;
    mm.worst += t.final_eval->samples.worst;
    mm.stddev += t.final_eval->samples.stddev;
    mm.overlap_correct_only += t.final_eval->overlap_correct_only;
    by_seed[is_less ? 1 : 0][t.seed] = &t;
  }
  for (auto* mm : {&cmp.grpo, &cmp.less}) {
    if (mm->runs == 0) continue;
    const double n = static_cast<double>(mm->runs);
    mm->accuracy /= n;
    mm->worst /= n;
    mm->stddev /= n;
    mm->overlap_correct_only /= n;
  }
  double gap = 0.0;
  for (const auto& [seed, g] : by_seed[0]) {
    const auto it = by_seed[1].find(seed);
    if (it == by_seed[1].end()) continue;
    const auto& ge = *g->final_eval;
    const auto& le = *it->second->final_eval;
    ++cmp.paired_seeds;
    cmp.less_wins_overlap += le.overlap_correct_only > ge.overlap_correct_only ? 1 : 0;
    cmp.less_wins_worst += le.samples.worst > ge.samples.worst ? 1 : 0;
    gap += le.samples.avg - ge.samples.avg;
  }
  if (cmp.paired_seeds) cmp.accuracy_gap = gap / static_cast<double>(cmp.paired_seeds);
  return cmp;
}

// ---------------------------------------------------------------------------
// Logprob files
// ---------------------------------------------------------------------------

/// One PolicyEvals per response, in the same order as the shaped file.
inline std::vector<PolicyEvals> load_logprobs(std::istream& in) {
  std::vector<PolicyEvals> out;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    if (!header) {
      if (text != kLogprobHeader) throw ParseError(line, "expected header '" + std::string(kLogprobHeader) + "'");
      header = true;
      continue;
    }
    try {
      const auto obj = nlohmann::json::parse(text);
      PolicyEvals ev;
      ev.old_logprobs = obj.at("old").get<std::vector<double>>();
      ev.new_logprobs = obj.at("new").get<std::vector<double>>();
      if (obj.contains("ref")) ev.ref_logprobs = obj.at("ref").get<std::vector<double>>();
      out.push_back(std::move(ev));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("bad logprob record: ") + e.what());
    }
  }
  return out;
}

inline void write_logprobs(const std::vector<RolloutGroup>& groups,
                           const std::vector<PolicyEvals>& evals, std::ostream& out) {
  out << kLogprobHeader << '\n';
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i, ++k) {
      nlohmann::ordered_json obj;
      obj["query_id"] = g.query_id;
      obj["old"] = evals.at(k).old_logprobs;
      obj["new"] = evals.at(k).new_logprobs;
      if (evals.at(k).ref_logprobs) obj["ref"] = *evals.at(k).ref_logprobs;
      out << obj.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Pair files
// ---------------------------------------------------------------------------

/// Whitespace-separated "x y" lines; '#' starts a comment.
inline std::pair<std::vector<double>, std::vector<double>> load_pairs(std::istream& in) {
  std::vector<double> xs, ys;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    std::istringstream ss(text);
    double x = 0.0, y = 0.0;
    if (!(ss >> x)) continue;
    if (!(ss >> y)) throw ParseError(line, "expected two reals");
    std::string rest;
    if (ss >> rest) throw ParseError(line, "trailing text after pair");
    if (!std::isfinite(x) || !std::isfinite(y)) throw ParseError(line, "non-finite value");
    xs.push_back(x);
    ys.push_back(y);
  }
  return {std::move(xs), std::move(ys)};
}

}  // namespace less

// less-shaper: command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 numerical guard abort in the simulator.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "less/less.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--seeds", "bad seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
  return seeds;
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

struct ShapeArgs {
  std::string input;
  std::string output;
  double quantile = less::kDefaultQuantile;
  std::size_t min_seg_len = less::kDefaultMinSegmentLength;
  bool keep_shared = false;
};

int run_shape(const ShapeArgs& a) {
  auto in = open_in(a.input);
  auto groups = less::load_rollout_groups(in);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& grp = groups[g];
    if (grp.undersized)
      std::cerr << "warning: group " << g << " ('" << grp.query_id
                << "') has fewer than 2 responses; emitting zero advantages\n";
    const bool have_base = std::all_of(grp.responses.begin(), grp.responses.end(),
                                       [](const less::Response& r) { return r.base_advantage.has_value(); });
    if (!have_base) less::assign_base_advantages(grp);
  }
  less::ShapingConfig cfg;
  cfg.h = a.quantile;
  cfg.min_seg_len = a.min_seg_len;
  cfg.neutralize_shared = !a.keep_shared;
  less::shape_batch_in_place(groups, cfg);

  // Serialize fully before touching the output file.
  std::ostringstream buf;
  less::write_shaped_groups(groups, buf);
  auto out = open_out(a.output);
  out << buf.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string input;
  std::string out;
  double quantile = less::kDefaultQuantile;
  std::size_t min_seg_len = less::kDefaultMinSegmentLength;
  bool per_group = false;
  bool dump_registry = false;
};

std::string fmt_ratio(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

void write_key(std::ostream& os, const std::vector<less::TokenId>& key) {
  os << '[';
  for (std::size_t i = 0; i < key.size(); ++i) os << (i ? "," : "") << key[i];
  os << ']';
}

int run_analyze(const AnalyzeArgs& a) {
  auto in = open_in(a.input);
  const auto groups = less::load_rollout_groups(in);

  std::ostringstream text;
  std::ostringstream machine;
  std::ostringstream registry;
  less::OverlapMass total;
  std::size_t skipped = 0;

  const auto row = [&](const std::string& name, const less::OverlapRatios& r, const std::string& er) {
    text << std::left << std::setw(24) << name << std::right << std::setw(10) << fmt_ratio(r.all)
         << std::setw(14) << fmt_ratio(r.correct_only) << std::setw(10) << fmt_ratio(r.shared)
         << std::setw(16) << fmt_ratio(r.incorrect_only) << std::setw(14) << er
         << (r.empty ? "  (no segments)" : "") << '\n';
  };
  text << std::left << std::setw(24) << "group" << std::right << std::setw(10) << "all"
       << std::setw(14) << "correct_only" << std::setw(10) << "shared" << std::setw(16)
       << "incorrect_only" << std::setw(14) << "entropy_ratio" << '\n';

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (grp.undersized) {
      ++skipped;
      continue;
    }
    const auto st = less::extract_group_structures(grp, a.quantile, a.min_seg_len);
    const auto reg = less::build_registry(grp, st);
    const auto ov = less::overlap_ratios(st, reg);
    const auto er = less::entropy_ratio(grp);
    total += ov.mass;

    if (a.per_group) {
      row(grp.query_id, ov.ratios, er ? fmt_ratio(*er) : "missing");
      nlohmann::ordered_json j;
      j["query_id"] = grp.query_id;
      j["all"] = ov.ratios.all;
      j["correct_only"] = ov.ratios.correct_only;
      j["shared"] = ov.ratios.shared;
      j["incorrect_only"] = ov.ratios.incorrect_only;
      j["empty"] = ov.ratios.empty;
      j["mass_total"] = ov.mass.total;
      j["mass_correct_only"] = ov.mass.correct_only;
      j["mass_shared"] = ov.mass.shared;
      j["mass_incorrect_only"] = ov.mass.incorrect_only;
      j["entries_correct_only"] = ov.mass.entries_correct_only;
      j["entries_shared"] = ov.mass.entries_shared;
      j["entries_incorrect_only"] = ov.mass.entries_incorrect_only;
      j["entries_singleton"] = ov.mass.entries_singleton;
      j["entropy_ratio"] = er ? nlohmann::ordered_json(*er) : nlohmann::ordered_json(nullptr);
      machine << "group " << j.dump() << '\n';
    }
    if (a.dump_registry) {
      registry << "query " << grp.query_id << "  N_r=" << grp.num_correct()
               << " N_w=" << grp.num_incorrect() << '\n';
      for (const auto& e : reg.entries()) {
        registry << "  ";
        write_key(registry, e.key);
        registry << "  n_r=" << e.n_r << " n_w=" << e.n_w << "  witnesses=";
        for (std::size_t w = 0; w < e.occurrences.size(); ++w)
          registry << (w ? "," : "") << '(' << e.occurrences[w].response_index << ':'
                   << e.occurrences[w].start << ')';
        registry << '\n';
      }
    }
  }
  row("aggregate", less::OverlapRatios::from(total), "-");

  std::ostringstream report;
  report << "# overlap report: quantile=" << a.quantile << " min_seg_len=" << a.min_seg_len
         << " groups=" << groups.size() << " skipped_undersized=" << skipped << '\n';
  report << text.str() << machine.str();
  if (a.dump_registry) report << "\n# registry\n" << registry.str();

  if (a.out.empty()) {
    std::cout << report.str();
  } else {
    auto out = open_out(a.out);
    out << report.str();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string mode;
  std::size_t steps = 300;
  std::string seeds = "1";
  std::string out;
  double quantile = less::kDefaultQuantile;
  std::size_t min_seg_len = less::kDefaultMinSegmentLength;
  bool keep_shared = false;
  std::size_t group_size = 8;
  double learning_rate = less::sim::TrainConfig{}.learning_rate;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  const auto seeds = parse_seed_list(a.seeds);
  const auto mode = a.mode == "less" ? less::sim::Mode::Less : less::sim::Mode::Grpo;
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw DataError("cannot create '" + a.out + "': " + ec.message());

  less::sim::TrainConfig base;
  base.steps = a.steps;
  base.group_size = a.group_size;
  base.learning_rate = a.learning_rate;
  base.shaping.h = a.quantile;
  base.shaping.min_seg_len = a.min_seg_len;
  base.shaping.neutralize_shared = !a.keep_shared;
  base.task.seed = a.seed;
  base.prior.seed = a.seed;

  for (const auto s : seeds) {
    auto cfg = base;
    cfg.seed = s;
    const auto run = less::sim::run_experiment(cfg, mode);
    const auto path = fs::path(a.out) / (a.mode + "-seed" + std::to_string(s) + ".metrics");
    auto out = open_out(path.string());
    less::write_trace(run, out);
    const auto& e = *run.final_eval;
    std::cerr << a.mode << " seed " << s << ": avg@" << e.samples.k << "=" << fmt_ratio(e.samples.avg)
              << " worst@" << e.samples.k << "=" << fmt_ratio(e.samples.worst)
              << " overlap_correct_only=" << fmt_ratio(e.overlap_correct_only) << " -> "
              << path.string() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string compare;
  std::string correlate;
  std::string loss;
  std::string logprobs;
  std::string out;
  double epsilon_low = 0.2;
  double epsilon_high = 0.28;
  double kl_coeff = 0.0;
};

int run_report(const ReportArgs& a) {
  std::ostringstream rep;
  if (!a.compare.empty()) {
    std::vector<less::TraceFile> traces;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.compare))
      if (entry.path().extension() == ".metrics") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .metrics files in '" + a.compare + "'");
    for (const auto& f : files) {
      auto in = open_in(f.string());
      try {
        traces.push_back(less::read_trace(in));
      } catch (const less::ParseError& e) {
        throw DataError(f.string() + ": " + e.what());
      }
    }
    const auto cmp = less::compare_runs(traces);
    rep << std::left << std::setw(8) << "mode" << std::right << std::setw(6) << "runs"
        << std::setw(12) << "accuracy" << std::setw(12) << "worst" << std::setw(12) << "std"
        << std::setw(22) << "overlap_correct_only" << '\n';
    for (const auto& [name, mm] : {std::pair{"grpo", cmp.grpo}, std::pair{"less", cmp.less}}) {
      rep << std::left << std::setw(8) << name << std::right << std::setw(6) << mm.runs
          << std::setw(12) << fmt_ratio(mm.accuracy) << std::setw(12) << fmt_ratio(mm.worst)
          << std::setw(12) << fmt_ratio(mm.stddev) << std::setw(22)
          << fmt_ratio(mm.overlap_correct_only) << '\n';
    }
    rep << "paired seeds: " << cmp.paired_seeds << '\n'
        << "less beats grpo on overlap_correct_only: " << cmp.less_wins_overlap << "/"
        << cmp.paired_seeds << '\n'
        << "less beats grpo on worst: " << cmp.less_wins_worst << "/" << cmp.paired_seeds << '\n'
        << "accuracy gap (less - grpo, points): " << fmt_ratio(100.0 * cmp.accuracy_gap) << '\n';
  } else if (!a.correlate.empty()) {
    auto in = open_in(a.correlate);
    const auto [xs, ys] = less::load_pairs(in);
    const auto c = less::pearson(xs, ys);
    rep << "n " << c.n << "\nr " << std::setprecision(12) << c.r << "\np ";
    if (c.p < 1e-12)
      rep << "< 1e-12\n";
    else
      rep << std::setprecision(6) << c.p << '\n';
  } else {
    auto shaped_in = open_in(a.loss);
    const auto groups = less::load_rollout_groups(shaped_in);
    auto lp_in = open_in(a.logprobs);
    const auto evals = less::load_logprobs(lp_in);
    std::size_t total_resp = 0;
    for (const auto& g : groups) total_resp += g.responses.size();
    if (evals.size() != total_resp)
      throw DataError("logprob file has " + std::to_string(evals.size()) + " records, shaped file has " +
                      std::to_string(total_resp) + " responses");
    less::GrpoConfig cfg;
    cfg.epsilon_low = a.epsilon_low;
    cfg.epsilon_high = a.epsilon_high;
    cfg.kl_coeff = a.kl_coeff;
    double loss = 0.0, objective = 0.0, kl = 0.0, clipped = 0.0;
    std::size_t tokens = 0, offset = 0;
    rep << std::left << std::setw(24) << "group" << std::right << std::setw(16) << "loss"
        << std::setw(16) << "objective" << std::setw(12) << "clip_frac" << '\n';
    for (const auto& g : groups) {
      const std::span<const less::PolicyEvals> ev(evals.data() + offset, g.responses.size());
      offset += g.responses.size();
      const auto r = less::surrogate_loss(g, ev, cfg);
      rep << std::left << std::setw(24) << g.query_id << std::right << std::setprecision(8)
          << std::setw(16) << r.loss << std::setw(16) << r.objective << std::setw(12)
          << fmt_ratio(r.clip_fraction) << '\n';
      loss += r.loss;
      objective += r.objective;
      kl += r.kl;
      clipped += r.clip_fraction * static_cast<double>(r.num_tokens);
      tokens += r.num_tokens;
    }
    const double n = groups.empty() ? 1.0 : static_cast<double>(groups.size());
    rep << "mean loss " << std::setprecision(12) << loss / n << "\nmean objective " << objective / n
        << "\nmean kl " << kl / n << "\nclip fraction "
        << (tokens ? clipped / static_cast<double>(tokens) : 0.0) << '\n';
  }

  if (a.out.empty()) {
    std::cout << rep.str();
  } else {
    auto out = open_out(a.out);
    out << rep.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"less-shaper: low-entropy segment advantage shaping toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  ShapeArgs shape;
  auto* shape_cmd = app.add_subcommand("shape", "Compute group advantages and shape them per token");
  shape_cmd->add_option("--input", shape.input, "Rollout record file")->required();
  shape_cmd->add_option("--output", shape.output, "Shaped-advantage output file")->required();
  shape_cmd->add_option("--quantile", shape.quantile, "Entropy quantile h")->check(CLI::Range(0.0, 1.0));
  shape_cmd->add_option("--min-seg-len", shape.min_seg_len, "Minimum segment length mu")->check(CLI::PositiveNumber);
  shape_cmd->add_flag("--keep-shared", shape.keep_shared, "Do not zero segments seen in both correct and incorrect responses");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Report low-entropy segment overlap by correctness");
  analyze_cmd->add_option("--input", analyze.input, "Rollout record file")->required();
  analyze_cmd->add_option("--out", analyze.out, "Report file (stdout when omitted)");
  analyze_cmd->add_option("--quantile", analyze.quantile, "Entropy quantile h")->check(CLI::Range(0.0, 1.0));
  analyze_cmd->add_option("--min-seg-len", analyze.min_seg_len, "Minimum segment length mu")->check(CLI::PositiveNumber);
  analyze_cmd->add_flag("--per-group", analyze.per_group, "Emit one aligned row and one machine-readable line per group");
  analyze_cmd->add_flag("--dump-registry", analyze.dump_registry, "Append each group's segment registry");

  SimulateArgs simulate;
  auto* sim_cmd = app.add_subcommand("simulate", "Train the toy policy with GRPO or LESS");
  sim_cmd->add_option("--mode", simulate.mode, "Training mode")->required()->check(CLI::IsMember({"grpo", "less"}));
  sim_cmd->add_option("--steps", simulate.steps, "Training steps");
  sim_cmd->add_option("--seeds", simulate.seeds, "Comma-separated run seeds");
  sim_cmd->add_option("--out", simulate.out, "Directory for metric traces")->required();
  sim_cmd->add_option("--quantile", simulate.quantile, "Entropy quantile h")->check(CLI::Range(0.0, 1.0));
  sim_cmd->add_option("--min-seg-len", simulate.min_seg_len, "Minimum segment length mu")->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--keep-shared", simulate.keep_shared, "Do not zero shared segments");
  sim_cmd->add_option("--group-size", simulate.group_size, "Rollouts per prompt G")->check(CLI::Range(2, 1024));
  sim_cmd->add_option("--learning-rate", simulate.learning_rate, "Gradient ascent step size")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", simulate.seed, "Task and pretrained-prior seed");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Summarize runs, correlate pairs, or recompute the surrogate loss");
  auto* compare_opt = report_cmd->add_option("--compare", report.compare, "Directory of simulator traces");
  auto* corr_opt = report_cmd->add_option("--correlate", report.correlate, "File of 'x y' pairs");
  auto* loss_opt = report_cmd->add_option("--loss", report.loss, "Shaped-advantage file");
  auto* lp_opt = report_cmd->add_option("--logprobs", report.logprobs, "Logprob file matching --loss");
  report_cmd->add_option("--out", report.out, "Report file (stdout when omitted)");
  report_cmd->add_option("--epsilon-low", report.epsilon_low, "Lower clip range");
  report_cmd->add_option("--epsilon-high", report.epsilon_high, "Upper clip range");
  report_cmd->add_option("--kl-coeff", report.kl_coeff, "KL penalty coefficient");
  compare_opt->excludes(corr_opt)->excludes(loss_opt);
  corr_opt->excludes(loss_opt);
  loss_opt->needs(lp_opt);
  lp_opt->needs(loss_opt);
  report_cmd->callback([&] {
    if (report.compare.empty() && report.correlate.empty() && report.loss.empty())
      throw CLI::RequiredError("one of --compare, --correlate, --loss");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    std::cerr << '\n' << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitUsage;
  }

  try {
    if (shape_cmd->parsed()) return run_shape(shape);
    if (analyze_cmd->parsed()) return run_analyze(analyze);
    if (sim_cmd->parsed()) return run_simulate(simulate);
    if (report_cmd->parsed()) return run_report(report);
  } catch (const less::sim::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

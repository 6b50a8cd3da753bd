// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Run a subset with `acceptance 1 3 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "less/less.hpp"
#include "oracles.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

less::Response response_from(const std::vector<double>& e) {
  less::Response r;
  for (std::size_t j = 0; j < e.size(); ++j) r.tokens.push_back({static_cast<less::TokenId>(j), e[j]});
  return r;
}

// 1. Segmentation vs. maximal-window enumeration.
Outcome segmentation_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  const double hs[] = {0.5, 0.8, 0.9};
  const std::size_t mus[] = {1, 3, 5, 7};
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto e = oracle::random_entropies(rng, 1 + rng() % 50);
    const double h = hs[rng() % 3];
    const std::size_t mu = mus[rng() % 4];
    const auto got = less::extract_structures(response_from(e), h, mu);
    const auto want = oracle::segment(e, h, mu);
    std::vector<oracle::Window> gs, gf;
    for (const auto& s : got.segs) gs.push_back({s.start, s.end});
    for (const auto& s : got.frags) gf.push_back({s.start, s.end});
    if (got.high != want.high || gs != want.segs || gf != want.frags || got.threshold != want.tau) ++mismatches;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "1000 sequences, " << mismatches << " mismatches, " << secs << " s (limit 5 s)";
  return {mismatches == 0 && secs < 5.0, d.str()};
}

// 2. Registry maximality and counts vs. exhaustive substring scan.
Outcome registry_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2002);
  std::size_t mismatches = 0, maximality = 0;
  for (int t = 0; t < 500; ++t) {
    const auto g = oracle::random_group(rng, 6, 40, 8);
    const double h = 0.8;
    const std::size_t mu = 1 + rng() % 5;
    const auto st = less::extract_group_structures(g, h, mu);
    const auto reg = less::build_registry(g, st);
    for (const auto& a : reg.entries())
      for (const auto& b : reg.entries())
        if (&a != &b && less::is_contained(a.key, b.key)) ++maximality;
    auto want = oracle::registry(g, h, mu);
    std::vector<oracle::Entry> got;
    for (const auto& e : reg.entries()) got.push_back({e.key, e.n_r, e.n_w});
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    bool same = got.size() == want.size();
    for (std::size_t k = 0; same && k < got.size(); ++k)
      same = got[k].key == want[k].key && got[k].n_r == want[k].n_r && got[k].n_w == want[k].n_w;
    if (!same) ++mismatches;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "500 groups, " << mismatches << " count mismatches, " << maximality << " maximality violations, "
    << secs << " s (limit 10 s)";
  return {mismatches == 0 && maximality == 0 && secs < 10.0, d.str()};
}

// 3. Six-branch fixture plus properties over 10,000 random groups.
Outcome shaping_piecewise() {
  constexpr less::TokenId H = 1000;
  const auto resp = [](std::vector<less::TokenId> ids, bool correct, double adv) {
    less::Response r;
    for (auto t : ids) r.tokens.push_back({t, t == H ? 1.0 : 0.0});
    r.correct = correct;
    r.base_advantage = adv;
    return r;
  };
  less::RolloutGroup g;
  g.query_id = "fixture";
  g.responses = {resp({H, 10, 11, 12, H}, true, 1.2),          resp({10, 11, 12, H}, true, 1.2),
                 resp({20, 21, 22, H, 77, H}, true, 0.5),       resp({H, 99, H, 40, 41, 42, 43}, true, 0.9),
                 resp({20, 21, 22, H, 30, 31, 32}, false, -0.8), resp({30, 31, 32, H}, false, -0.8),
                 resp({H, 55, H, 60, 61, 62}, false, -0.6)};
  const double w = 2.0 / 3.0 * -0.8;
  const std::vector<std::vector<double>> want{{1.2, 0.6, 0.6, 0.6, 1.2},
                                              {0.6, 0.6, 0.6, 1.2},
                                              {0, 0, 0, 0.5, 0.125, 0.5},
                                              {0.9, 0.225, 0.9, 0.225, 0.225, 0.225, 0.225},
                                              {0, 0, 0, -0.8, w, w, w},
                                              {w, w, w, -0.8},
                                              {-0.6, -0.2, -0.6, -0.2, -0.2, -0.2}};
  less::shape_group_in_place(g, {1.0, 3, true});
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[i].size(); ++j)
      worst = std::max(worst, std::abs((*g.responses[i].shaped)[j] - want[i][j]));

  std::mt19937_64 rng(3003);
  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    auto grp = oracle::random_group(rng, 8, 30, 4);
    const auto trace = less::shape_group_in_place(grp, {0.8, 1 + rng() % 5, true});
    for (std::size_t i = 0; i < grp.size(); ++i) {
      const double a = *grp.responses[i].base_advantage;
      for (std::size_t j = 0; j < grp.responses[i].size(); ++j) {
        const double v = (*grp.responses[i].shaped)[j];
        if (std::abs(v) > std::abs(a) + 1e-12) ++violations;
        if (v * a < 0.0) ++violations;
        if (trace.branches[i][j] == less::ShapeBranch::SegShared && v != 0.0) ++violations;
      }
    }
  }
  std::ostringstream d;
  d << "fixture max error " << worst << " (tol 1e-12), " << violations << " property violations in 10000 groups";
  return {worst <= 1e-12 && violations == 0, d.str()};
}

// 4. Group advantages vs. long-double Welford oracle.
Outcome group_advantage_oracle() {
  std::mt19937_64 rng(4004);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  double worst = 0.0;
  bool zero_ok = true;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> r(2 + rng() % 15);
    const int kind = t % 3;
    for (auto& x : r) x = kind == 0 ? static_cast<double>(rng() % 2) : u(rng);
    if (kind == 2) std::fill(r.begin(), r.end(), r[0]);
    const auto a = less::group_advantages(r);
    const auto o = oracle::standardize(r);
    for (std::size_t i = 0; i < r.size(); ++i) worst = std::max(worst, std::abs(a[i] - o[i]));
    if (kind == 2) zero_ok = zero_ok && std::all_of(a.begin(), a.end(), [](double v) { return v == 0.0; });
  }
  std::ostringstream d;
  d << "10000 vectors, max deviation " << worst << " (tol 1e-12), zero-variance groups all zero: "
    << (zero_ok ? "yes" : "no");
  return {worst <= 1e-12 && zero_ok, d.str()};
}

// 5. Surrogate gradient vs. central differences on a 10-parameter policy.
Outcome gradient_check() {
  less::sim::ToyTask task;
  task.modulus = 2;  // vocabulary of 5
  task.num_terms = 1;
  task.max_length = 6;
  std::mt19937_64 rng(5005);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst_rel = 0.0;
  std::size_t checked = 0;
  int configs = 0;
  while (configs < 100) {
    less::sim::ToyPolicy pol(2, task.vocab_size(), 0.5 + less::sim::uniform01(rng));
    for (double& v : pol.params()) v = gauss(rng);
    auto sg = less::sim::generate_rollouts(pol, task, task.instance(rng() % 2), 2 + rng() % 6, rng());
    for (auto& r : sg.group.responses) {
      r.reward = static_cast<double>(rng() % 2);
      r.correct = r.reward > 0.5;
    }
    less::assign_base_advantages(sg.group);
    if (configs % 2) less::shape_group_in_place(sg.group, {0.8, 1 + rng() % 3, true});

    less::sim::ToyPolicy moved = pol;
    const double spread = (configs % 4 < 2) ? 0.05 : 0.4;
    for (double& v : moved.params()) v += spread * gauss(rng);
    less::GrpoConfig cfg;
    std::vector<std::vector<double>> ref;
    if (configs % 3 == 0) {
      cfg.kl_coeff = 0.1;
      for (const auto& tr : sg.trajectories) {
        ref.emplace_back();
        for (double lp : tr.old_logprobs) ref.back().push_back(lp + 0.3 * gauss(rng));
      }
    }
    const auto* refp = ref.empty() ? nullptr : &ref;

    // Stay away from the clip kinks, where the loss is not differentiable.
    const auto evals = less::sim::evaluate_policy(moved, sg);
    bool near_kink = false;
    for (const auto& e : evals)
      for (std::size_t j = 0; j < e.new_logprobs.size(); ++j) {
        const double ratio = std::exp(e.new_logprobs[j] - e.old_logprobs[j]);
        near_kink = near_kink || std::abs(ratio - 0.8) < 1e-3 || std::abs(ratio - 1.28) < 1e-3;
      }
    if (near_kink) continue;
    ++configs;

    std::vector<double> grad(moved.num_params(), 0.0);
    less::sim::surrogate_with_gradient(moved, sg, cfg, grad, refp);
    const double hstep = 1e-5;
    for (std::size_t k = 0; k < moved.num_params(); ++k) {
      auto up = moved, dn = moved;
      up.params()[k] += hstep;
      dn.params()[k] -= hstep;
      const double fd = (less::sim::surrogate_with_gradient(up, sg, cfg, {}, refp).loss -
                         less::sim::surrogate_with_gradient(dn, sg, cfg, {}, refp).loss) /
                        (2 * hstep);
      const double scale = std::max(std::abs(fd), std::abs(grad[k]));
      // Entries that are zero on both routes (untouched buckets, all-clipped
      // tokens) have no meaningful relative error.
      if (scale < 1e-9) continue;
      worst_rel = std::max(worst_rel, std::abs(fd - grad[k]) / scale);
      ++checked;
    }
  }
  std::ostringstream d;
  d << "100 configurations, " << checked << " gradient entries, max relative error " << worst_rel
    << " (limit 1e-4)";
  return {worst_rel < 1e-4 && checked > 0, d.str()};
}

// 6. LESS vs GRPO on the chain-arithmetic task.
Outcome directional_dynamics() {
  const std::uint64_t seeds[] = {1, 2, 3, 4, 5};
  std::vector<std::future<less::sim::TrainRun>> jobs;
  std::vector<double> run_secs(10, 0.0);
  for (auto mode : {less::sim::Mode::Grpo, less::sim::Mode::Less}) {
    for (std::size_t s = 0; s < 5; ++s) {
      less::sim::TrainConfig cfg;
      cfg.steps = 300;
      cfg.seed = seeds[s];
      const std::size_t slot = (mode == less::sim::Mode::Less ? 5 : 0) + s;
      jobs.push_back(std::async(std::launch::async, [cfg, mode, slot, &run_secs] {
        const auto t0 = Clock::now();
        auto run = less::sim::run_experiment(cfg, mode);
        run_secs[slot] = seconds_since(t0);
        return run;
      }));
    }
  }
  std::vector<less::TraceFile> traces;
  for (auto& j : jobs) {
    const auto run = j.get();
    less::TraceFile tf;
    tf.mode = less::sim::mode_name(run.mode);
    tf.seed = run.config.seed;
    tf.final_eval = run.final_eval;
    traces.push_back(std::move(tf));
  }
  const auto cmp = less::compare_runs(traces);
  const double slowest = *std::max_element(run_secs.begin(), run_secs.end());
  const bool overlap_ok = cmp.less_wins_overlap >= 4;
  const bool worst_ok = cmp.less_wins_worst >= 4;
  const bool acc_ok = cmp.accuracy_gap >= -0.02;
  std::ostringstream d;
  d << "overlap wins " << cmp.less_wins_overlap << "/5 (need 4), worst@8 wins " << cmp.less_wins_worst
    << "/5 (need 4), accuracy gap " << 100.0 * cmp.accuracy_gap << " pts (need >= -2), mean acc grpo "
    << cmp.grpo.accuracy << " less " << cmp.less.accuracy << ", slowest run " << slowest << " s (limit 600 s)";
  return {overlap_ok && worst_ok && acc_ok && slowest < 600.0, d.str()};
}

// 7. worst@1 = avg@1 and nested-prefix monotonicity.
Outcome metric_protocol() {
  std::mt19937_64 rng(7007);
  std::size_t violations = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t prompts = 1 + rng() % 40;
    const double p = static_cast<double>(rng() % 1000) / 1000.0;
    std::bernoulli_distribution coin(p);
    std::vector<std::vector<double>> scores(prompts, std::vector<double>(32));
    for (auto& row : scores)
      for (auto& v : row) v = coin(rng) ? 1.0 : 0.0;
    const auto m1 = less::sample_metrics(scores, 1);
    const auto m8 = less::sample_metrics(scores, 8);
    const auto m16 = less::sample_metrics(scores, 16);
    const auto m32 = less::sample_metrics(scores, 32);
    if (m1.worst != m1.avg) ++violations;
    if (!(m32.worst <= m16.worst && m16.worst <= m8.worst)) ++violations;
  }
  std::ostringstream d;
  d << "100 score matrices, " << violations << " violations";
  return {violations == 0, d.str()};
}

// 8. Pearson r on exact lines and the p-value at r = 0.94, n = 13.
Outcome pearson_path() {
  std::vector<double> x(20), up(20), down(20);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 0.37 * static_cast<double>(i) - 2.0;
    up[i] = 4.5 * x[i] + 1.25;
    down[i] = -0.75 * x[i] + 3.0;
  }
  const double r_up = less::pearson(x, up).r;
  const double r_down = less::pearson(x, down).r;

  // Thirteen points: a linear trend plus deterministic noise, with the noise
  // amplitude bisected until the sample correlation is 0.94.
  std::vector<double> xs(13), noise(13);
  std::mt19937_64 rng(8008);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < 13; ++i) {
    xs[i] = static_cast<double>(i);
    noise[i] = gauss(rng);
  }
  const auto ys_for = [&](double amp) {
    std::vector<double> ys(13);
    for (std::size_t i = 0; i < 13; ++i) ys[i] = xs[i] + amp * noise[i];
    return ys;
  };
  double lo = 0.0, hi = 100.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (less::pearson(xs, ys_for(mid)).r > 0.94 ? lo : hi) = mid;
  }
  const auto c = less::pearson(xs, ys_for(0.5 * (lo + hi)));
  const bool lines_ok = std::abs(r_up - 1.0) <= 1e-12 && std::abs(r_down + 1.0) <= 1e-12;
  const bool p_ok = std::abs(c.r - 0.94) < 1e-9 && c.p < 1e-5 && c.p > 1e-7;
  std::ostringstream d;
  d << "r(+line) " << r_up << ", r(-line) " << r_down << "; n=13 r=" << c.r << " p=" << c.p
    << " (need p < 1e-5; reported 1.81e-6)";
  return {lines_ok && p_ok, d.str()};
}

std::vector<less::RolloutGroup> throughput_fixture(std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution high(0.2), coin(0.5);
  std::uniform_real_distribution<double> lowe(0.0, 0.3), highe(0.5, 3.0);
  // Token ids drawn from a small template pool so segments repeat across
  // responses and the registry does real containment work.
  std::vector<less::RolloutGroup> groups(512);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& grp = groups[g];
    grp.query_id = "bench-" + std::to_string(g);
    grp.responses.resize(8);
    for (auto& r : grp.responses) {
      r.tokens.resize(length);
      for (std::size_t j = 0; j < length; ++j) {
        const auto tok = static_cast<less::TokenId>((j * 7 + (coin(rng) ? 0 : rng() % 50)) % 32000);
        r.tokens[j] = {tok, high(rng) ? highe(rng) : lowe(rng)};
      }
      r.correct = coin(rng);
      r.reward = r.correct ? 1.0 : 0.0;
    }
    less::assign_base_advantages(grp);
  }
  return groups;
}

// 9. shape_batch throughput at 512 x 8 x 800 and linearity in L.
Outcome throughput() {
  // Best of three runs per length, to keep scheduler noise out of the ratio.
  const auto timed = [](std::size_t length) {
    const auto fixture = throughput_fixture(length, 9009);
    double best = INFINITY;
    for (int rep = 0; rep < 3; ++rep) {
      auto groups = fixture;
      const auto t0 = Clock::now();
      less::shape_batch_in_place(groups, {});
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  const double base = timed(800);
  const double doubled = timed(1600);
  std::ostringstream d;
  d << "512x8x800 in " << base << " s (limit 60 s), L=1600 in " << doubled << " s, ratio "
    << doubled / base << " (limit 2.5), workers " << less::worker_count();
  return {base < 60.0 && doubled <= 2.5 * base, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"segmentation matches maximal-window oracle", segmentation_oracle},
      {"registry maximality and counts match exhaustive scan", registry_oracle},
      {"shaping fixture and properties", shaping_piecewise},
      {"group advantages match mean/std oracle", group_advantage_oracle},
      {"surrogate gradient matches finite differences", gradient_check},
      {"LESS vs GRPO directional dynamics", directional_dynamics},
      {"sampling metric protocol", metric_protocol},
      {"Pearson r and p-value", pearson_path},
      {"shape_batch throughput and linearity", throughput},
  };
  std::set<std::size_t> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::strtoul(argv[a], nullptr, 10));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}

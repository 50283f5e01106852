// Acceptance gate: one PASS/FAIL line per criterion. `--only N` runs a single
// criterion (used by ctest); no arguments runs all ten.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nconv/classic_nc.hpp"
#include "nconv/cli.hpp"
#include "nconv/data_io.hpp"
#include "nconv/gradcheck.hpp"
#include "nconv/loss_metrics.hpp"
#include "nconv/multiscale_net.hpp"
#include "nconv/nconv_layer.hpp"
#include "nconv/optim_train.hpp"

using namespace nconv;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Confidence in [0, 1] with a share of exact zeros (missing samples).
Tensor sparse_confidence(const Shape& shape, double missing, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng) < missing ? 0.0 : u(rng);
  return t;
}

// Oracle-mode layer whose applicability is exactly `app`.
NConvLayer oracle_layer(const Tensor& app) {
  return {app, Tensor({app.dim(0)}), NonNegFn::identity(), 0.0, ConfPropagation::Normalized};
}

classic::Matrix random_spd(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  classic::Matrix a(n, n);
  for (double& v : a.v) v = u(rng);
  classic::Matrix g = classic::multiply(classic::transpose(a), a);
  for (std::size_t i = 0; i < n; ++i) g(i, i) += 0.1;
  return g;
}

// ---------------------------------------------------------------------------

Outcome ac1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_map = 0.0, worst_solve = 0.0;
  std::size_t solved = 0;
  for (int w = 0; w < 1000; ++w) {
    const Tensor F = uniform({5, 5}, -10.0, 10.0, rng);
    const Tensor C = sparse_confidence({5, 5}, 0.3, rng);
    const Tensor a = uniform({5, 5}, 0.01, 1.0, rng);
    const LayerOutput out = nconv_forward(oracle_layer(a.reshaped({1, 1, 5, 5})), {F.reshaped({1, 5, 5}),
                                                                                    C.reshaped({1, 5, 5})});
    const auto na = classic::normalized_average_map(F, C, a);
    for (std::size_t p = 0; p < 25; ++p) {
      if (na.valid[p] > 0.0) worst_map = std::max(worst_map, std::abs(out.out.z[p] - na.value[p]));
    }
    if (na.valid(2, 2) > 0.0) {
      classic::Neighborhood nb{F.values(), C.values(), a.values()};
      const double r = classic::nc_solve(classic::Basis::naive(25), nb)[0];
      worst_solve = std::max(worst_solve, std::abs(out.out.z(0, 2, 2) - r));
      ++solved;
    }
  }
  const double t = seconds_since(t0);
  const bool pass = worst_map < 1e-10 && worst_solve < 1e-10 && solved == 1000 && t < 10.0;
  return {pass, fmt("vs map %.2e, vs nc_solve %.2e over %zu windows, %.2fs", worst_map, worst_solve, solved, t)};
}

Outcome ac2() {
  const auto t0 = Clock::now();
  const NetSpec spec;
  NetSpec small = spec;
  small.scales = 2;
  std::size_t layer_checks = 0, layer_fail = 0, net_fail = 0;
  double worst_layer = 0.0, worst_net = 0.0;
  std::string first_failure;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    NetState st = init_net_state(spec, seed);
    const gradcheck::NetCheckOptions defaults;
    gradcheck::condition_weights(st, defaults.weight_lo, defaults.weight_hi, seed);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      NConvLayer layer = st.layers[l];
      layer.bias = uniform(layer.bias.shape(), -1.0, 1.0, rng);
      const auto rep = gradcheck::layer_check(layer, 8, 8, seed * 31 + l, gradcheck::kDefaultStep,
                                              gradcheck::kTolSingleOp);
      ++layer_checks;
      worst_layer = std::max(worst_layer, rep.max_rel());
      if (!rep.pass) {
        ++layer_fail;
        if (first_failure.empty()) first_failure = fmt("seed %llu layer %zu:\n", (unsigned long long)seed, l) + rep.format();
      }
    }
    const auto net = gradcheck::network_check(small, seed);
    worst_net = std::max(worst_net, net.max_rel());
    if (!net.pass) {
      ++net_fail;
      if (first_failure.empty()) first_failure = fmt("seed %llu network:\n", (unsigned long long)seed) + net.format();
    }
  }
  const double t = seconds_since(t0);
  if (!first_failure.empty()) std::cerr << first_failure;
  return {layer_fail == 0 && net_fail == 0 && t < 120.0,
          fmt("100 seeds: layer %zu/%zu pass (worst %.2e < 1e-6), 2-scale net %zu/100 pass (worst %.2e < 1e-4), "
              "%.1fs",
              layer_checks - layer_fail, layer_checks, worst_layer, 100 - net_fail, worst_net, t)};
}

Outcome ac3() {
  std::mt19937_64 rng(303);
  // Constant confidence: out.z equals correlation with the mass-normalized kernel.
  double worst_reduction = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = uniform({5, 5}, 0.01, 1.0, rng);
    const Tensor F = uniform({12, 12}, -5.0, 5.0, rng);
    const LayerOutput out = nconv_forward(oracle_layer(a.reshaped({1, 1, 5, 5})),
                                          {F.reshaped({1, 12, 12}), Tensor({1, 12, 12}, 1.0)});
    const Tensor ref = correlate2d(F, (1.0 / sum(a)) * a);
    for (std::size_t y = 2; y < 10; ++y)
      for (std::size_t x = 2; x < 10; ++x)
        worst_reduction = std::max(worst_reduction, std::abs(out.out.z(0, y, x) - ref(y, x)));
  }
  // Scale invariance at eps = 0, with power-of-two scales so no rounding enters.
  bool scale_exact = true;
  for (int trial = 0; trial < 200; ++trial) {
    NConvLayer l{uniform({2, 2, 3, 3}, -0.5, 0.5, rng), Tensor({2}), NonNegFn::softplus(10.0), 0.0,
                 ConfPropagation::Normalized};
    const ConfSignal in{uniform({2, 6, 6}, -3, 3, rng), uniform({2, 6, 6}, 0.05, 1.0, rng)};
    const LayerOutput base = nconv_forward(l, in);
    for (double s : {0.125, 2.0, 32.0}) {
      const LayerOutput r = nconv_forward(l, {in.z, s * in.c});
      scale_exact = scale_exact && r.out.z == base.out.z && r.out.c == s * base.out.c;
    }
  }
  // Convex-combination bound on 1e5 windows (4000 images of 25 windows).
  std::size_t windows = 0, violations = 0;
  for (int img = 0; img < 4000; ++img) {
    const Tensor a = uniform({1, 1, 3, 3}, 0.0, 1.0, rng);
    const ConfSignal in{uniform({1, 5, 5}, -10, 10, rng), sparse_confidence({1, 5, 5}, 0.5, rng)};
    const LayerOutput out = nconv_forward(oracle_layer(a), in);
    for (std::ptrdiff_t y = 0; y < 5; ++y)
      for (std::ptrdiff_t x = 0; x < 5; ++x) {
        double lo = 1e300, hi = -1e300;
        for (std::ptrdiff_t m = -1; m <= 1; ++m)
          for (std::ptrdiff_t n = -1; n <= 1; ++n) {
            if (y + m < 0 || y + m >= 5 || x + n < 0 || x + n >= 5) continue;
            if (in.c(0, y + m, x + n) * a(0, 0, m + 1, n + 1) > 0.0) {
              lo = std::min(lo, in.z(0, y + m, x + n));
              hi = std::max(hi, in.z(0, y + m, x + n));
            }
          }
        ++windows;
        if (lo > hi) continue;  // no support: output undefined in oracle mode
        const double v = out.out.z(0, y, x);
        if (v < lo - 1e-12 || v > hi + 1e-12) ++violations;
      }
  }
  return {worst_reduction < 1e-12 && scale_exact && violations == 0 && windows >= 100000,
          fmt("reduction %.2e (< 1e-12), scale invariance %s, convex bound %zu violations in %zu windows",
              worst_reduction, scale_exact ? "exact" : "NOT exact", violations, windows)};
}

Outcome ac4() {
  std::mt19937_64 rng(404);
  double worst_w = 0.0, worst_k = 0.0, worst_k_identity = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + trial % 4;
    const classic::Matrix g0 = random_spd(m, rng);
    worst_w = std::max(worst_w, std::abs(classic::confidence_westelius(g0, g0) - 1.0));
    worst_k = std::max(worst_k, std::abs(classic::confidence_karlholm(g0, g0) - 1.0));
    const classic::Matrix id = classic::Matrix::identity(m);
    worst_k_identity = std::max(worst_k_identity, std::abs(classic::confidence_karlholm(id, id) - 1.0));
  }
  double worst_layer = 0.0;
  const classic::Basis naive = classic::Basis::naive(25);
  for (int w = 0; w < 1000; ++w) {
    const Tensor a = uniform({5, 5}, 0.01, 1.0, rng);
    const Tensor C = sparse_confidence({5, 5}, 0.3, rng);
    const LayerOutput out =
        nconv_forward(oracle_layer(a.reshaped({1, 1, 5, 5})), {Tensor({1, 5, 5}, 1.0), C.reshaped({1, 5, 5})});
    const std::vector<double> av = a.values(), cv = C.values();
    const double ratio =
        classic::confidence_westelius(classic::grammian(naive, av, cv), classic::full_grammian(naive, av));
    worst_layer = std::max(worst_layer, std::abs(out.out.c(0, 2, 2) - ratio));
  }
  const bool pass = worst_w < 1e-10 && worst_k < 1e-10 && worst_layer < 1e-10;
  return {pass, fmt("Westelius |w-1| %.2e; Karlholm |k-1| %.2e on random SPD G0 (%.2e at G0 = I); "
                    "layer conf vs Westelius %.2e",
                    worst_w, worst_k, worst_k_identity, worst_layer)};
}

Outcome ac5() {
  const std::size_t n = count_params(NetSpec{});
  return {n >= 300 && n <= 1000, fmt("default 3-scale spec: %zu parameters (reference 4.8e2)", n)};
}

// Shared synthetic suite for the training criteria.
struct Suite {
  std::vector<Scene> train = make_synthetic_set(64, 64, 64, 0.05, 1000);
  std::vector<Scene> held_out = make_synthetic_set(20, 64, 64, 0.05, 5000);
};

const Suite& suite() {
  static const Suite s;
  return s;
}

double gaussian_baseline_mae(const std::vector<Scene>& scenes) {
  const Tensor g = classic::gaussian_kernel(9, 2.0);
  double abs_sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : scenes) {
    const auto na = classic::normalized_average_map(s.sparse, s.confidence, g);
    // Pixels with no sample in reach take the mean of the image's samples.
    const double fill = sum(s.sparse) / sum(s.confidence);
    for (std::size_t p = 0; p < s.gt.size(); ++p) {
      if (!(s.gt_mask[p] > 0.0)) continue;
      abs_sum += std::abs((na.valid[p] > 0.0 ? na.value[p] : fill) - s.gt[p]);
      ++n;
    }
  }
  return abs_sum / static_cast<double>(n);
}

struct TrainedNets {
  std::vector<Evaluation> evals;
  double seconds = 0.0;
};

const TrainedNets& trained_nets() {
  static const TrainedNets nets = [] {
    TrainedNets r;
    const auto t0 = Clock::now();
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      TrainConfig cfg;
      cfg.epochs = 30;
      cfg.lr = 0.01;
      cfg.seed = seed;
      const NetSpec spec;
      const TrainResult tr = train(spec, cfg, suite().train, suite().held_out);
      r.evals.push_back(evaluate(spec, tr.state, suite().held_out));
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return nets;
}

Outcome ac6() {
  const auto t0 = Clock::now();
  const double baseline = gaussian_baseline_mae(suite().held_out);
  const TrainedNets& nets = trained_nets();
  double mean = 0.0;
  std::string per_seed;
  for (const auto& e : nets.evals) {
    mean += e.metrics.mae / static_cast<double>(nets.evals.size());
    per_seed += fmt(" %.4f", e.metrics.mae);
  }
  const double t = seconds_since(t0);
  return {mean < baseline && t < 600.0,
          fmt("net MAE %.4f m (seeds:%s) vs Gaussian baseline %.4f m, %.1fs", mean, per_seed.c_str(), baseline, t)};
}

Outcome ac7() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig constrained;
    constrained.epochs = 1;
    constrained.seed = seed;
    TrainConfig unconstrained = constrained;
    unconstrained.loss = LossMode::HuberOnly;
    NetSpec ablation;
    ablation.gamma = NonNegFn::identity();
    const double a = train(NetSpec{}, constrained, suite().train, suite().held_out).log[0].data_term;
    const double b = train(ablation, unconstrained, suite().train, suite().held_out).log[0].data_term;
    wins += a < b;
    detail += fmt(" %.3g<%.3g", a, b);
  }
  return {wins >= 4, fmt("SoftPlus beats Identity after epoch 1 in %d/5 seeds (Huber data term:%s)", wins,
                         detail.c_str())};
}

Outcome ac8() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = seed;
    TrainConfig huber = cfg;
    huber.loss = LossMode::HuberOnly;
    const auto conf = train(NetSpec{}, cfg, suite().train, suite().held_out).log;
    const auto plain = train(NetSpec{}, huber, suite().train, suite().held_out).log;
    int dips = 0;
    bool small_dips = true;
    for (std::size_t e = 1; e < conf.size(); ++e) {
      if (conf[e].mean_max_conf < conf[e - 1].mean_max_conf) {
        ++dips;
        small_dips = small_dips && conf[e].mean_max_conf >= 0.99 * conf[e - 1].mean_max_conf;
      }
    }
    const bool monotone = dips <= 1 && small_dips;
    const bool above = conf.back().mean_max_conf > plain.back().mean_max_conf;
    ok += monotone && above;
    detail += fmt(" [%.4f->%.4f %s, vs huber %.4f]", conf.front().mean_max_conf, conf.back().mean_max_conf,
                  monotone ? "monotone" : "NOT monotone", plain.back().mean_max_conf);
  }
  return {ok >= 4, fmt("%d/5 seeds:%s", ok, detail.c_str())};
}

Outcome ac9() {
  const TrainedNets& nets = trained_nets();
  double mean = 0.0;
  std::string per_seed;
  for (const auto& e : nets.evals) {
    const double rho = conf_error_pearson(e.errors, e.confidences);
    mean += rho / static_cast<double>(nets.evals.size());
    per_seed += fmt(" %.3f", rho);
  }
  return {mean > 0.1, fmt("mean rho %.3f (seeds:%s), threshold 0.1", mean, per_seed.c_str())};
}

Outcome ac10() {
  // Bit-identical training logs.
  const std::vector<Scene> data(suite().train.begin(), suite().train.begin() + 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 77;
  const std::string log_a = format_log_csv(train(NetSpec{}, cfg, data).log);
  const std::string log_b = format_log_csv(train(NetSpec{}, cfg, data).log);
  const bool logs_equal = log_a == log_b;

  // PGM16 round trip.
  const fs::path dir = fs::temp_directory_path() / "nconv_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(1010);
  std::uniform_int_distribution<int> counts(0, 65535);
  Tensor map({48, 40});
  for (double& v : map.data()) v = counts(rng) * kDepthScale;
  write_pgm16(dir / "map.pgm", map);
  const bool pgm_exact = read_pgm16(dir / "map.pgm") == map;

  // eval on identical files.
  write_pgm16(dir / "gt.pgm", suite().held_out[0].gt);
  const std::string gt = (dir / "gt.pgm").string();
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const char* argv[] = {"nconv_cli", "eval", "--pred", gt.c_str(), "--gt", gt.c_str()};
  const int rc = cli::run(6, argv);
  std::cout.rdbuf(old);
  fs::remove_all(dir);
  const std::string expected = "0,0,0,0," + std::to_string(64 * 64) + "\n";
  const bool eval_zero = rc == 0 && captured.str() == expected;

  std::string line = captured.str();
  if (!line.empty() && line.back() == '\n') line.pop_back();
  return {logs_equal && pgm_exact && eval_zero,
          fmt("logs %s, PGM16 round trip %s, eval identical -> \"%s\"", logs_equal ? "bit-identical" : "DIFFER",
              pgm_exact ? "bit-exact" : "NOT exact", line.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"oracle equivalence", ac1},   {"gradient suite", ac2},          {"reductions", ac3},
      {"confidence measures", ac4},  {"parameter count", ac5},         {"synthetic completion", ac6},
      {"non-negativity trend", ac7}, {"loss/confidence trend", ac8},   {"confidence-error correlation", ac9},
      {"determinism and I/O", ac10}};
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::cerr << "--only expects 1.." << criteria.size() << "\n";
    return 2;
  }
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only != 0 && static_cast<int>(k) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " AC" << k + 1 << " " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

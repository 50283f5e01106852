#include "nconv/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nconv/data_io.hpp"
#include "nconv/error.hpp"
#include "nconv/gradcheck.hpp"
#include "nconv/loss_metrics.hpp"
#include "nconv/multiscale_net.hpp"
#include "nconv/optim_train.hpp"

namespace nconv::cli {
namespace {

namespace fs = std::filesystem;

struct SynthArgs {
  std::string out;
  std::size_t n = 32;
  std::size_t hw = 64;
  double density = 0.05;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string data, val, spec, out, log;
  int epochs = 30;
  double lr = 0.01;
  std::string loss = "conf";
  std::optional<std::string> gamma;
  std::optional<double> beta;
  std::uint64_t seed = 1;
  std::size_t batch = 4;
};

struct InferArgs {
  std::string ckpt, in, conf, out_depth, out_conf;
};

struct EvalArgs {
  std::string pred, gt, mask;
};

struct GradArgs {
  std::string spec;
  std::uint64_t seed = 1;
};

struct DumpArgs {
  std::string ckpt, out;
};

int do_synth(const SynthArgs& a) {
  if (a.hw < 16) throw RangeError("--hw must be >= 16, got " + std::to_string(a.hw));
  if (!(a.density > 0.0 && a.density <= 1.0)) throw RangeError("--density must be in (0, 1]");
  const auto scenes = make_synthetic_set(a.n, a.hw, a.hw, a.density, a.seed);
  write_dataset(a.out, scenes);
  std::cerr << "wrote " << scenes.size() << " scenes of " << a.hw << "x" << a.hw << " to " << a.out << "\n";
  return 0;
}

int do_train(const TrainArgs& a) {
  NetSpec spec = a.spec.empty() ? NetSpec{} : read_net_spec(a.spec);
  if (a.gamma) spec.gamma.kind = parse_nonneg_kind(*a.gamma);
  if (a.beta) spec.gamma.beta = *a.beta;
  spec.validate();

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.loss = parse_loss_mode(a.loss);
  cfg.batch_size = a.batch;

  const auto data = read_dataset(a.data);
  const auto val = a.val.empty() ? std::vector<Scene>{} : read_dataset(a.val);
  std::cerr << "training on " << data.size() << " scenes, " << count_params(spec) << " parameters\n";
  const TrainResult result = train(spec, cfg, data, val, [](const EpochLog& e) {
    std::fprintf(stderr, "epoch %3d  loss %.6f  data %.6f  max_conf %.4f  mae %.4f\n", e.epoch, e.total,
                 e.data_term, e.mean_max_conf, e.val_mae);
  });
  save_checkpoint(a.out, spec, result.state);
  const std::string csv = format_log_csv(result.log);
  const fs::path log_path = a.log.empty() ? fs::path(a.out) / "train_log.csv" : fs::path(a.log);
  std::ofstream(log_path) << csv;
  std::cerr << "checkpoint written to " << a.out << "\n";
  return 0;
}

int do_infer(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const Tensor sparse = read_pgm16(a.in, kDepthScale);
  const Tensor conf = read_pgm16(a.conf, kConfidenceScale);
  require_same_shape(sparse, conf, "infer: --in and --conf");
  const std::size_t H = sparse.dim(0), W = sparse.dim(1);
  const std::size_t m = ck.spec.size_multiple();
  if (H % m != 0 || W % m != 0) {
    throw ShapeError("infer: image " + shape_to_string(sparse.shape()) + " must be a multiple of " +
                     std::to_string(m));
  }
  const ConfSignal out =
      unguided_forward(ck.spec, ck.state, {sparse.reshaped({1, H, W}), conf.reshaped({1, H, W})});
  Tensor depth = out.z.reshaped({H, W});
  Tensor c = out.c.reshaped({H, W});
  // Clamp into the representable range of the 16-bit encodings.
  for (double& v : depth.data()) v = std::clamp(v, 0.0, 65535.0 * kDepthScale);
  for (double& v : c.data()) v = std::clamp(v, 0.0, 1.0);
  write_pgm16(a.out_depth, depth, kDepthScale);
  if (!a.out_conf.empty()) write_pgm16(a.out_conf, c, kConfidenceScale);
  return 0;
}

int do_eval(const EvalArgs& a) {
  const Tensor pred = read_pgm16(a.pred, kDepthScale);
  const Tensor gt = read_pgm16(a.gt, kDepthScale);
  require_same_shape(pred, gt, "eval: --pred and --gt");
  Tensor mask;
  if (a.mask.empty()) {
    mask = Tensor::zeros_like(gt);
    for (std::size_t i = 0; i < gt.size(); ++i) mask[i] = gt[i] > 0.0 ? 1.0 : 0.0;
  } else {
    mask = read_pgm16(a.mask, 1.0);
    require_same_shape(mask, gt, "eval: --mask and --gt");
  }
  std::cout << depth_metrics(pred, gt, mask).csv() << "\n";
  return 0;
}

int do_gradcheck(const GradArgs& a) {
  const NetSpec spec = a.spec.empty() ? NetSpec{} : read_net_spec(a.spec);
  spec.validate();
  NetState state = init_net_state(spec, a.seed);
  const gradcheck::NetCheckOptions defaults;
  gradcheck::condition_weights(state, defaults.weight_lo, defaults.weight_hi, a.seed);
  bool ok = true;
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto r = gradcheck::layer_check(state.layers[l], 7, 6, a.seed + l);
    std::cout << "layer " << l << "\n" << r.format();
    ok = ok && r.pass;
  }
  gradcheck::NetCheckOptions opt;
  opt.height = opt.width = std::max<std::size_t>(8, 2 * spec.size_multiple());
  const auto r = gradcheck::network_check(spec, a.seed, opt);
  std::cout << "network\n" << r.format();
  ok = ok && r.pass;
  return ok ? 0 : 2;
}

int do_dump(const DumpArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  fs::create_directories(a.out);
  for (std::size_t l = 0; l < ck.state.layers.size(); ++l) {
    const Tensor app = ck.state.layers[l].applicability();
    char name[64];
    std::snprintf(name, sizeof name, "layer_%02zu_applicability.nct", l);
    write_nct(fs::path(a.out) / name, app);
    const std::size_t O = app.dim(0), I = app.dim(1), kh = app.dim(2), kw = app.dim(3);
    // PGM export is scaled so each filter's largest tap maps to full range.
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t i = 0; i < I; ++i) {
        Tensor f({kh, kw});
        double peak = 0.0;
        for (std::size_t y = 0; y < kh; ++y)
          for (std::size_t x = 0; x < kw; ++x) {
            f(y, x) = std::max(0.0, app(o, i, y, x));
            peak = std::max(peak, f(y, x));
          }
        if (peak > 0.0)
          for (double& v : f.data()) v /= peak;
        std::snprintf(name, sizeof name, "layer_%02zu_o%zu_i%zu.pgm", l, o, i);
        write_pgm16(fs::path(a.out) / name, f, kConfidenceScale);
      }
    }
  }
  std::cerr << "dumped " << ck.state.layers.size() << " layers to " << a.out << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Normalized convolution for sparse depth completion", "nconv_cli"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n", synth.n, "Number of scenes");
  s->add_option("--hw", synth.hw, "Height and width");
  s->add_option("--density", synth.density, "Fraction of kept samples");
  s->add_option("--seed", synth.seed, "RNG seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the unguided network");
  t->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--val", tr.val, "Validation dataset directory")->check(CLI::ExistingDirectory);
  t->add_option("--spec", tr.spec, "Network spec file")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Checkpoint directory")->required();
  t->add_option("--log", tr.log, "Per-epoch CSV log (default CKPT/train_log.csv)");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--lr", tr.lr, "ADAM learning rate");
  t->add_option("--loss", tr.loss, "Loss")->check(CLI::IsMember({"conf", "huber", "l2conf"}));
  t->add_option("--gamma", tr.gamma, "Non-negativity function")
      ->check(CLI::IsMember({"softplus", "exp", "sigmoid", "identity"}));
  t->add_option("--beta", tr.beta, "SoftPlus beta");
  t->add_option("--seed", tr.seed, "RNG seed");
  t->add_option("--batch", tr.batch, "Batch size");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Complete one sparse depth map");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  i->add_option("--in", inf.in, "Sparse depth PGM")->required()->check(CLI::ExistingFile);
  i->add_option("--conf", inf.conf, "Confidence PGM")->required()->check(CLI::ExistingFile);
  i->add_option("--out-depth", inf.out_depth, "Output depth PGM")->required();
  i->add_option("--out-conf", inf.out_conf, "Output confidence PGM");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Print mae,rmse,imae,irmse,n");
  e->add_option("--pred", ev.pred, "Predicted depth PGM")->required()->check(CLI::ExistingFile);
  e->add_option("--gt", ev.gt, "Ground-truth depth PGM")->required()->check(CLI::ExistingFile);
  e->add_option("--mask", ev.mask, "Validity PGM (nonzero = valid; default gt > 0)")->check(CLI::ExistingFile);

  GradArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the network loss");
  g->add_option("--spec", gc.spec, "Network spec file")->check(CLI::ExistingFile);
  g->add_option("--seed", gc.seed, "RNG seed");

  DumpArgs dump;
  auto* d = app.add_subcommand("dump-filters", "Export learned applicabilities");
  d->add_option("--ckpt", dump.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  d->add_option("--out", dump.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (*s) return do_synth(synth);
    if (*t) return do_train(tr);
    if (*i) return do_infer(inf);
    if (*e) return do_eval(ev);
    if (*g) return do_gradcheck(gc);
    if (*d) return do_dump(dump);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace nconv::cli

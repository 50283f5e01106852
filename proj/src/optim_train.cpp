#include "nconv/optim_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nconv {

void TrainConfig::validate() const {
  if (epochs < 1) throw RangeError("TrainConfig: epochs must be >= 1");
  if (!(lr > 0.0)) throw RangeError("TrainConfig: lr must be positive");
  if (batch_size < 1) throw RangeError("TrainConfig: batch size must be >= 1");
  if (!(huber_delta > 0.0)) throw RangeError("TrainConfig: Huber delta must be positive");
}

std::string format_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "epoch,data_term,conf_term,total,mean_max_conf,std_max_conf,val_mae,val_rmse\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.data_term << ',' << e.conf_term << ',' << e.total << ',' << e.mean_max_conf << ','
       << e.std_max_conf << ',' << e.val_mae << ',' << e.val_rmse << '\n';
  }
  return os.str();
}

std::size_t worker_count() {
  if (const char* env = std::getenv("NCONV_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ConfSignal scene_input(const Scene& scene) {
  const std::size_t H = scene.sparse.dim(0), W = scene.sparse.dim(1);
  return {scene.sparse.reshaped({1, H, W}), scene.confidence.reshaped({1, H, W})};
}

namespace {

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
// handled by exactly one thread; callers store results per index.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ItemResult {
  LossReport report;
  std::vector<Tensor> grads;
  std::size_t bad_pixel = std::numeric_limits<std::size_t>::max();
};

ItemResult run_item(const NetSpec& spec, const NetState& state, const Scene& scene, const TrainConfig& cfg,
                    int epoch) {
  const std::size_t H = scene.gt.dim(0), W = scene.gt.dim(1);
  NetForward fwd = unguided_forward_tape(spec, state, scene_input(scene));
  const Tensor z = fwd.out.z.reshaped({H, W});
  const Tensor c = fwd.out.c.reshaped({H, W});
  LossResult loss = confidence_loss(z, c, scene.gt, scene.gt_mask, epoch, cfg.loss, cfg.huber_delta);
  ItemResult res{loss.report, {}};
  if (!std::isfinite(loss.report.total)) {
    for (std::size_t p = 0; p < z.size(); ++p)
      if (!std::isfinite(z[p]) || !std::isfinite(c[p])) {
        res.bad_pixel = p;
        break;
      }
    return res;
  }
  const NetGradients g =
      unguided_backward(spec, state, fwd.tape, loss.grad_z.reshaped({1, H, W}), loss.grad_c.reshaped({1, H, W}));
  res.grads = g.flat();
  return res;
}

void check_applicability_positive(const NetState& state, int epoch) {
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& layer = state.layers[l];
    if (layer.gamma.kind == NonNegFn::Kind::Identity) continue;
    for (std::size_t k = 0; k < layer.weight.size(); ++k) {
      if (!(layer.gamma(layer.weight[k]) > 0.0)) {
        throw std::logic_error("applicability of layer " + std::to_string(l) + " lost positivity after epoch " +
                               std::to_string(epoch));
      }
    }
  }
}

}  // namespace

Evaluation evaluate(const NetSpec& spec, const NetState& state, const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw RangeError("evaluate: no scenes");
  std::vector<ConfSignal> outs(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) { outs[i] = unguided_forward(spec, state, scene_input(scenes[i])); });

  Evaluation ev;
  std::vector<double> z_all, t_all, maxima;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    maxima.push_back(max_value(outs[i].c));
    for (std::size_t p = 0; p < s.gt.size(); ++p) {
      if (!(s.gt_mask[p] > 0.0)) continue;
      z_all.push_back(outs[i].z[p]);
      t_all.push_back(s.gt[p]);
      ev.errors.push_back(outs[i].z[p] - s.gt[p]);
      ev.confidences.push_back(outs[i].c[p]);
    }
  }
  const std::size_t n = z_all.size();
  ev.metrics = depth_metrics(Tensor({n}, std::move(z_all)), Tensor({n}, std::move(t_all)), Tensor({n}, 1.0));
  const double mean = std::accumulate(maxima.begin(), maxima.end(), 0.0) / static_cast<double>(maxima.size());
  double var = 0.0;
  for (double m : maxima) var += (m - mean) * (m - mean);
  ev.mean_max_conf = mean;
  ev.std_max_conf = std::sqrt(var / static_cast<double>(maxima.size()));
  return ev;
}

TrainResult train_from(const NetSpec& spec, NetState state, const TrainConfig& cfg, const std::vector<Scene>& data,
                       const std::vector<Scene>& val, const EpochCallback& on_epoch) {
  cfg.validate();
  spec.validate();
  check_state_matches(spec, state);
  if (data.empty()) throw RangeError("train: dataset is empty");
  const std::size_t mult = spec.size_multiple();
  for (const auto& s : data) {
    if (s.gt.dim(0) % mult != 0 || s.gt.dim(1) % mult != 0) {
      throw ShapeError("train: scene size " + shape_to_string(s.gt.shape()) + " not divisible by " +
                       std::to_string(mult));
    }
  }
  state.optimizer.lr = cfg.lr;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::vector<Scene>& eval_set = val.empty() ? data : val;

  TrainResult result;
  std::size_t iteration = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with explicit draws so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    EpochLog entry;
    entry.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++iteration) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<ItemResult> items(count);
      parallel_for(count, [&](std::size_t k) {
        items[k] = run_item(spec, state, data[order[start + k]], cfg, epoch);
      });

      std::vector<Tensor> grads;
      LossReport batch{};
      for (std::size_t k = 0; k < count; ++k) {
        const ItemResult& it = items[k];
        if (!std::isfinite(it.report.total)) {
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                                 std::to_string(iteration) + ", scene " + std::to_string(order[start + k]) +
                                 (it.bad_pixel != std::numeric_limits<std::size_t>::max()
                                      ? ", first non-finite pixel " + std::to_string(it.bad_pixel)
                                      : std::string()));
        }
        batch.data_term += it.report.data_term;
        batch.conf_term += it.report.conf_term;
        batch.total += it.report.total;
        if (grads.empty()) {
          grads = it.grads;
        } else {
          for (std::size_t j = 0; j < grads.size(); ++j) grads[j] += it.grads[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : grads)
        for (double& v : g.data()) v *= inv;

      std::vector<Tensor*> params = state.parameters();
      std::vector<Tensor> values;
      values.reserve(params.size());
      for (Tensor* p : params) values.push_back(std::move(*p));
      adam_step(state.optimizer, values, grads);
      for (std::size_t j = 0; j < params.size(); ++j) *params[j] = std::move(values[j]);

      entry.data_term += batch.data_term * inv;
      entry.conf_term += batch.conf_term * inv;
      entry.total += batch.total * inv;
      ++batches;
    }
    entry.data_term /= static_cast<double>(batches);
    entry.conf_term /= static_cast<double>(batches);
    entry.total /= static_cast<double>(batches);

    check_applicability_positive(state, epoch);
    const Evaluation ev = evaluate(spec, state, eval_set);
    entry.mean_max_conf = ev.mean_max_conf;
    entry.std_max_conf = ev.std_max_conf;
    entry.val_mae = ev.metrics.mae;
    entry.val_rmse = ev.metrics.rmse;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.state = std::move(state);
  return result;
}

TrainResult train(const NetSpec& spec, const TrainConfig& cfg, const std::vector<Scene>& data,
                  const std::vector<Scene>& val, const EpochCallback& on_epoch) {
  return train_from(spec, init_net_state(spec, cfg.seed), cfg, data, val, on_epoch);
}

}  // namespace nconv

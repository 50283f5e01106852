#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nconv/adam.hpp"
#include "nconv/data_io.hpp"
#include "nconv/loss_metrics.hpp"
#include "nconv/multiscale_net.hpp"

namespace nconv {

struct TrainConfig {
  int epochs = 30;
  double lr = 0.01;
  std::uint64_t seed = 1;
  LossMode loss = LossMode::HuberConf;
  std::size_t batch_size = 4;
  double huber_delta = 1.0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double data_term = 0.0;  // means over the epoch's training batches
  double conf_term = 0.0;
  double total = 0.0;
  double mean_max_conf = 0.0;  // image-wise max output confidence, over the evaluation set
  double std_max_conf = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
};

/// CSV with header: epoch,data_term,conf_term,total,mean_max_conf,std_max_conf,val_mae,val_rmse
std::string format_log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
  NetState state;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Seeded training loop: per epoch shuffle, forward, loss with the epoch
/// number as decay, backward and one ADAM step per batch. Batch gradients are
/// summed in batch order. `val` is used for the per-epoch confidence and
/// metrics columns; the training set stands in when it is empty.
TrainResult train(const NetSpec& spec, const TrainConfig& cfg, const std::vector<Scene>& data,
                  const std::vector<Scene>& val = {}, const EpochCallback& on_epoch = {});

/// Continue training an existing state (used by the CLI when resuming).
TrainResult train_from(const NetSpec& spec, NetState state, const TrainConfig& cfg, const std::vector<Scene>& data,
                       const std::vector<Scene>& val = {}, const EpochCallback& on_epoch = {});

ConfSignal scene_input(const Scene& scene);

struct Evaluation {
  MetricsReport metrics;   // pooled over every valid pixel of every scene
  double mean_max_conf = 0.0;
  double std_max_conf = 0.0;
  std::vector<double> errors;       // Z - T on valid pixels, scene order
  std::vector<double> confidences;  // matching output confidences
};

Evaluation evaluate(const NetSpec& spec, const NetState& state, const std::vector<Scene>& scenes);

/// Worker count from NCONV_THREADS, else hardware concurrency (at least 1).
std::size_t worker_count();

}  // namespace nconv

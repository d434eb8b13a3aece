#pragma once

#include <functional>
#include <optional>
#include <span>

#include "fedsdr/model.hpp"
#include "fedsdr/rng.hpp"

namespace fedsdr {

// Per-step snapshot for tests that need to watch the alternating scheme.
// Hooks fire on whichever thread executes the client, so observers must be
// their own synchronization when run_round uses a worker pool.
struct StepInfo {
  int epoch = 0;
  int step = 0;
  double batch_loss = 0.0;
  double grad_norm_r = 0.0;
  double grad_norm_s = 0.0;
};
using StepHook = std::function<void(const StepInfo&)>;

struct SgdOpts {
  int epochs = 3;
  int batch_size = 8;
  double lr = 3e-4;
  double prox_mu = 0.0;             // (mu/2)||theta - anchor||^2 on prox_stream
  Stream prox_stream = Stream::R;
  Vector prox_anchor;               // required when prox_mu > 0
};

struct TrainTrace {
  std::vector<double> epoch_nll;  // mean next-token NLL per epoch
  long steps = 0;
};

// Seeded-shuffle mini-batch SGD on whichever streams the model currently
// marks trainable. Gradients are averaged over each batch. Throws on a
// non-finite loss, naming the epoch and step.
TrainTrace sgd_train(DualAdapterModel& model, std::span<const Position> positions,
                     const SgdOpts& opts, Rng& rng, const StepHook* hook = nullptr);

}  // namespace fedsdr

#include "fedsdr/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsdr {

TrainTrace sgd_train(DualAdapterModel& model, std::span<const Position> positions,
                     const SgdOpts& opts, Rng& rng, const StepHook* hook) {
  if (positions.empty()) throw std::invalid_argument("sgd_train: no training positions");
  if (opts.batch_size < 1) throw std::invalid_argument("sgd_train: batch_size must be >= 1");
  if (opts.prox_mu > 0.0 && opts.prox_anchor.size() != model.stream_param_count()) {
    throw std::invalid_argument("sgd_train: prox anchor size mismatch");
  }

  const bool train_r = stream_trainable(model.trainable(), Stream::R);
  const bool train_s = stream_trainable(model.trainable(), Stream::S);

  TrainTrace trace;
  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      const auto count = static_cast<double>(end - start);

      model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const Position& p = positions[order[i]];
        batch_loss += model.forward_backward(p.context, p.target);
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("sgd_train: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
      }
      epoch_loss += batch_loss;
      batch_loss /= count;

      for (Stream s : {Stream::R, Stream::S}) {
        if (!stream_trainable(model.trainable(), s)) continue;
        Vector g = model.stream_grads(s) / count;
        Vector theta = model.stream_params(s);
        if (opts.prox_mu > 0.0 && s == opts.prox_stream) {
          g += opts.prox_mu * (theta - opts.prox_anchor);
        }
        theta -= opts.lr * g;
        model.set_stream_params(s, theta);
      }

      if (hook != nullptr && *hook) {
        StepInfo info;
        info.epoch = epoch;
        info.step = step;
        info.batch_loss = batch_loss;
        info.grad_norm_r = train_r ? model.stream_grads(Stream::R).norm() : 0.0;
        info.grad_norm_s = train_s ? model.stream_grads(Stream::S).norm() : 0.0;
        (*hook)(info);
      }
      ++trace.steps;
    }
    trace.epoch_nll.push_back(epoch_loss / static_cast<double>(positions.size()));
  }
  return trace;
}

}  // namespace fedsdr

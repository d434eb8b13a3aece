#include "fedsdr/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace fedsdr {

namespace {

// per-(round, client) stream tags
constexpr std::uint64_t kStageSmooth = 0xA1;
constexpr std::uint64_t kStageRect = 0xA2;
constexpr std::uint64_t kMixturePick = 0xA3;

}  // namespace

Mode mode_from_string(const std::string& s) {
  if (s == "baseline-raw") return Mode::BaselineRaw;
  if (s == "fedsd-single") return Mode::FedSdSingle;
  if (s == "fedsdr-dual") return Mode::FedSdrDual;
  if (s == "dual-upload") return Mode::DualUpload;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::BaselineRaw: return "baseline-raw";
    case Mode::FedSdSingle: return "fedsd-single";
    case Mode::FedSdrDual: return "fedsdr-dual";
    case Mode::DualUpload: return "dual-upload";
  }
  return "?";
}

Strategy::Kind strategy_kind_from_string(const std::string& s) {
  if (s == "fedavg") return Strategy::Kind::FedAvg;
  if (s == "fedavgm") return Strategy::Kind::FedAvgM;
  if (s == "fedprox") return Strategy::Kind::FedProx;
  if (s == "fedadam") return Strategy::Kind::FedAdam;
  if (s == "fedyogi") return Strategy::Kind::FedYogi;
  if (s == "fedadagrad") return Strategy::Kind::FedAdagrad;
  throw ConfigError("unknown strategy '" + s + "'");
}

std::string strategy_kind_to_string(Strategy::Kind k) {
  switch (k) {
    case Strategy::Kind::FedAvg: return "fedavg";
    case Strategy::Kind::FedAvgM: return "fedavgm";
    case Strategy::Kind::FedProx: return "fedprox";
    case Strategy::Kind::FedAdam: return "fedadam";
    case Strategy::Kind::FedYogi: return "fedyogi";
    case Strategy::Kind::FedAdagrad: return "fedadagrad";
  }
  return "?";
}

void Strategy::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("strategy.beta must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("strategy.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("strategy.beta2 must lie in [0, 1)");
  if (!(tau > 0.0)) throw ConfigError("strategy.tau must be > 0");
  if (!(mu >= 0.0)) throw ConfigError("strategy.mu must be >= 0");
  if (!(eta > 0.0)) throw ConfigError("strategy.eta must be > 0");
}

std::vector<std::uint8_t> encode_client_payload(const PayloadHeader& header,
                                                std::span<const std::uint8_t> adapter_r,
                                                std::span<const std::uint8_t> adapter_s) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + adapter_r.size() + adapter_s.size());
  out.push_back(static_cast<std::uint8_t>(header.client_id & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.client_id >> 8));
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((header.n_k >> (8 * i)) & 0xff));
  }
  out.push_back(static_cast<std::uint8_t>(header.round & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.round >> 8));
  out.insert(out.end(), adapter_r.begin(), adapter_r.end());
  out.insert(out.end(), adapter_s.begin(), adapter_s.end());
  return out;
}

DecodedUpdate decode_client_payload(std::span<const std::uint8_t> bytes,
                                    const DualAdapterModel& shape_ref) {
  if (bytes.size() < 8) throw std::runtime_error("client payload: truncated header");
  DecodedUpdate out;
  out.client_id = bytes[0] | bytes[1] << 8;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(bytes[2 + i]) << (8 * i);
  out.n_k = n;
  out.round = bytes[6] | bytes[7] << 8;

  std::size_t at = 8;
  std::size_t consumed = 0;
  const AdapterPayload first = decode_adapter_payload(bytes.subspan(at), &consumed);
  if (first.tag != Stream::R) {
    throw std::runtime_error("client payload: expected rectification stream first");
  }
  out.delta_r = flatten_layers(first.layers);
  at += consumed;

  if (at < bytes.size()) {
    const AdapterPayload second = decode_adapter_payload(bytes.subspan(at), &consumed);
    if (second.tag != Stream::S) {
      throw std::runtime_error("client payload: trailing payload must be stream S");
    }
    out.delta_s = flatten_layers(second.layers);
    at += consumed;
  }
  if (at != bytes.size()) {
    throw std::runtime_error("client payload: " + std::to_string(bytes.size() - at) +
                             " trailing bytes at offset " + std::to_string(at));
  }
  if (out.delta_r.size() != shape_ref.stream_param_count()) {
    throw std::runtime_error("client payload: delta size does not match the model");
  }
  return out;
}

void aggregate(ServerState& state, std::vector<DecodedUpdate> updates,
               const Strategy& strategy) {
  strategy.validate();
  if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
  std::sort(updates.begin(), updates.end(),
            [](const DecodedUpdate& a, const DecodedUpdate& b) {
              return a.client_id < b.client_id;
            });

  long total_n = 0;
  for (const DecodedUpdate& u : updates) {
    if (u.n_k <= 0) throw std::invalid_argument("aggregate: n_k must be positive");
    if (u.delta_r.size() != state.global_r.size()) {
      throw std::invalid_argument("aggregate: delta shape " + std::to_string(u.delta_r.size()) +
                                  " != global shape " + std::to_string(state.global_r.size()));
    }
    total_n += u.n_k;
  }

  Vector dbar = Vector::Zero(state.global_r.size());
  for (const DecodedUpdate& u : updates) {
    dbar += (static_cast<double>(u.n_k) / static_cast<double>(total_n)) * u.delta_r;
  }

  const auto lazy_init = [&](Vector& buf) {
    if (buf.size() != state.global_r.size()) buf = Vector::Zero(state.global_r.size());
  };

  switch (strategy.kind) {
    case Strategy::Kind::FedAvg:
    case Strategy::Kind::FedProx:
      state.global_r += dbar;
      break;
    case Strategy::Kind::FedAvgM:
      lazy_init(state.momentum_buf);
      state.momentum_buf = strategy.beta * state.momentum_buf + dbar;
      state.global_r += state.momentum_buf;
      break;
    case Strategy::Kind::FedAdagrad: {
      lazy_init(state.v);
      state.v.array() += dbar.array().square();
      state.global_r.array() +=
          strategy.eta * dbar.array() / (state.v.array().sqrt() + strategy.tau);
      break;
    }
    case Strategy::Kind::FedAdam: {
      lazy_init(state.m);
      lazy_init(state.v);
      state.m = strategy.beta1 * state.m + (1.0 - strategy.beta1) * dbar;
      state.v.array() = strategy.beta2 * state.v.array() +
                        (1.0 - strategy.beta2) * dbar.array().square();
      state.global_r.array() +=
          strategy.eta * state.m.array() / (state.v.array().sqrt() + strategy.tau);
      break;
    }
    case Strategy::Kind::FedYogi: {
      lazy_init(state.m);
      lazy_init(state.v);
      state.m = strategy.beta1 * state.m + (1.0 - strategy.beta1) * dbar;
      const Eigen::ArrayXd d2 = dbar.array().square();
      state.v.array() -= (1.0 - strategy.beta2) * d2 * (state.v.array() - d2).sign();
      state.global_r.array() +=
          strategy.eta * state.m.array() / (state.v.array().sqrt() + strategy.tau);
      break;
    }
  }

  // dual-upload additionally carries plain-averaged smoothing deltas
  const bool any_s =
      std::any_of(updates.begin(), updates.end(),
                  [](const DecodedUpdate& u) { return u.delta_s.size() > 0; });
  if (any_s) {
    if (state.global_s.size() == 0) {
      throw std::runtime_error("aggregate: smoothing delta received but server holds no "
                               "global smoothing stream");
    }
    Vector dbar_s = Vector::Zero(state.global_s.size());
    for (const DecodedUpdate& u : updates) {
      if (u.delta_s.size() != state.global_s.size()) {
        throw std::invalid_argument("aggregate: smoothing delta shape mismatch");
      }
      dbar_s += (static_cast<double>(u.n_k) / static_cast<double>(total_n)) * u.delta_s;
    }
    state.global_s += dbar_s;
  }

  state.round += 1;
}

namespace {

std::vector<Position> build_positions(const ClientShard& shard, const Objective& obj,
                                      int context_len, std::uint64_t seed) {
  if (shard.raw.empty()) {
    throw std::runtime_error("client " + std::to_string(shard.client_id) + ": empty shard");
  }
  const bool needs_distilled = obj.kind != Objective::Kind::Raw;
  if (needs_distilled && shard.distilled.size() != shard.raw.size()) {
    throw std::runtime_error("client " + std::to_string(shard.client_id) +
                             ": refinery has not run (distilled responses missing)");
  }
  Rng pick(mix_seed(seed, kMixturePick));
  std::vector<Position> out;
  for (std::size_t i = 0; i < shard.raw.size(); ++i) {
    const Sample* src = &shard.raw[i];
    switch (obj.kind) {
      case Objective::Kind::Raw: break;
      case Objective::Kind::Distilled: src = &shard.distilled[i]; break;
      case Objective::Kind::Mixture:
        src = (pick.u01() < obj.mixture_ratio) ? &shard.raw[i] : &shard.distilled[i];
        break;
    }
    expand_positions(src->c, src->x, src->y, context_len, out);
  }
  return out;
}

SgdOpts to_sgd(const LocalOpts& opts, Stream prox_stream, const Vector& anchor) {
  SgdOpts sgd;
  sgd.epochs = opts.epochs;
  sgd.batch_size = opts.batch_size;
  sgd.lr = opts.lr;
  sgd.prox_mu = opts.prox_mu;
  sgd.prox_stream = prox_stream;
  if (opts.prox_mu > 0.0) sgd.prox_anchor = anchor;
  return sgd;
}

ClientUpdate finish_update(const DualAdapterModel& model, const ClientShard& shard,
                           const Vector& global_r, int round, bool upload_s,
                           const Vector& theta_s_anchor) {
  const Vector delta_r = model.stream_params(Stream::R) - global_r;
  const auto layers_r = unflatten_stream(model, delta_r);
  const auto bytes_r = encode_adapter_payload(Stream::R, layers_r);

  PayloadHeader header;
  header.client_id = static_cast<std::uint16_t>(shard.client_id);
  header.n_k = static_cast<std::uint32_t>(shard.n_k());
  header.round = static_cast<std::uint16_t>(round);

  ClientUpdate update;
  update.client_id = shard.client_id;
  update.n_k = shard.n_k();
  if (upload_s) {
    const Vector delta_s = model.stream_params(Stream::S) - theta_s_anchor;
    const auto bytes_s = encode_adapter_payload(Stream::S, unflatten_stream(model, delta_s));
    update.payload = encode_client_payload(header, bytes_r, bytes_s);
  } else {
    update.payload = encode_client_payload(header, bytes_r);
  }
  return update;
}

}  // namespace

LocalResult local_update_single(const DualAdapterModel& base, const Vector& global_r,
                                const ClientShard& shard, const LocalOpts& opts, int round,
                                std::uint64_t seed, const StepHook* hook) {
  DualAdapterModel model = base;
  model.set_stream_params(Stream::R, global_r);
  model.set_trainable(Trainable::ROnly);

  const std::vector<Position> positions =
      build_positions(shard, opts.objective, model.config().context_len, seed);
  Rng rng(mix_seed(seed, kStageRect));
  const TrainTrace trace = sgd_train(model, positions, to_sgd(opts, Stream::R, global_r),
                                     rng, hook);

  LocalResult result;
  result.update = finish_update(model, shard, global_r, round, false, Vector());
  result.update.stage2_epoch_nll = trace.epoch_nll;
  result.theta_s = model.stream_params(Stream::S);
  return result;
}

LocalResult local_update_dual(const DualAdapterModel& base, const Vector& global_r,
                              const Vector& theta_s_init, const ClientShard& shard,
                              const LocalOpts& opts_s, const LocalOpts& opts_r, int round,
                              std::uint64_t seed, bool upload_s, const StepHook* hook) {
  DualAdapterModel model = base;
  model.set_stream_params(Stream::R, global_r);
  if (theta_s_init.size() > 0) model.set_stream_params(Stream::S, theta_s_init);
  const Vector theta_s_start = model.stream_params(Stream::S);

  // Stage 1: smoothing stream on distilled responses
  Objective distilled;
  distilled.kind = Objective::Kind::Distilled;
  const std::vector<Position> positions_s =
      build_positions(shard, distilled, model.config().context_len, seed);
  model.set_trainable(Trainable::SOnly);
  Rng rng_s(mix_seed(seed, kStageSmooth));
  const TrainTrace trace_s =
      sgd_train(model, positions_s, to_sgd(opts_s, Stream::S, theta_s_start), rng_s, hook);

  // Stage 2: rectification stream on raw responses, smoothing frozen
  Objective raw;
  raw.kind = Objective::Kind::Raw;
  const std::vector<Position> positions_r =
      build_positions(shard, raw, model.config().context_len, seed);
  model.set_trainable(Trainable::ROnly);
  Rng rng_r(mix_seed(seed, kStageRect));
  const TrainTrace trace_r =
      sgd_train(model, positions_r, to_sgd(opts_r, Stream::R, global_r), rng_r, hook);

  LocalResult result;
  result.update = finish_update(model, shard, global_r, round, upload_s, theta_s_start);
  result.update.stage1_epoch_nll = trace_s.epoch_nll;
  result.update.stage2_epoch_nll = trace_r.epoch_nll;
  result.theta_s = model.stream_params(Stream::S);
  return result;
}

ServerState make_server_state(const DualAdapterModel& base, Mode mode) {
  ServerState state;
  state.global_r = base.stream_params(Stream::R);
  state.momentum_buf = Vector::Zero(state.global_r.size());
  state.m = Vector::Zero(state.global_r.size());
  state.v = Vector::Zero(state.global_r.size());
  if (mode == Mode::DualUpload) state.global_s = base.stream_params(Stream::S);
  return state;
}

DualAdapterModel global_model(const DualAdapterModel& base, const ServerState& state) {
  DualAdapterModel model = base;
  model.set_stream_params(Stream::R, state.global_r);
  if (state.global_s.size() > 0) model.set_stream_params(Stream::S, state.global_s);
  return model;
}

RoundReport run_round(ServerState& state, std::vector<Client>& clients,
                      const DualAdapterModel& base, const RoundOpts& opts,
                      const Strategy& strategy, std::uint64_t seed, const StepHook* hook,
                      const PayloadHook* payload_hook) {
  if (clients.empty()) throw std::invalid_argument("run_round: no clients");
  if (opts.workers < 1) throw std::invalid_argument("run_round: workers must be >= 1");

  const int round = state.round;
  const std::uint64_t round_seed = mix_seed(seed, static_cast<std::uint64_t>(round));
  const Vector broadcast_r = state.global_r;

  std::vector<LocalResult> results(clients.size());
  std::vector<std::string> errors(clients.size());

  const auto run_client = [&](std::size_t i) {
    Client& client = clients[i];
    const std::uint64_t client_seed =
        mix_seed(round_seed, static_cast<std::uint64_t>(client.id));
    try {
      switch (opts.mode) {
        case Mode::BaselineRaw: {
          LocalOpts local = opts.rect;
          local.objective.kind = Objective::Kind::Raw;
          results[i] = local_update_single(base, broadcast_r, client.shard, local, round,
                                           client_seed, hook);
          break;
        }
        case Mode::FedSdSingle:
          results[i] = local_update_single(base, broadcast_r, client.shard, opts.rect, round,
                                           client_seed, hook);
          break;
        case Mode::FedSdrDual: {
          const Vector init =
              opts.reinit_smoothing_each_round ? Vector() : client.theta_s;
          results[i] = local_update_dual(base, broadcast_r, init, client.shard, opts.smooth,
                                         opts.rect, round, client_seed, false, hook);
          break;
        }
        case Mode::DualUpload:
          results[i] = local_update_dual(base, broadcast_r, state.global_s, client.shard,
                                         opts.smooth, opts.rect, round, client_seed, true,
                                         hook);
          break;
      }
    } catch (const std::exception& e) {
      errors[i] = "client " + std::to_string(client.id) + ": " + e.what();
    }
  };

  if (opts.workers == 1 || clients.size() == 1) {
    for (std::size_t i = 0; i < clients.size(); ++i) run_client(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    const int n_workers = std::min<int>(opts.workers, static_cast<int>(clients.size()));
    for (int w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < clients.size(); i = next.fetch_add(1)) {
          run_client(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (const std::string& err : errors) {
    if (!err.empty()) throw std::runtime_error(err);
  }

  // processing order is fixed by client id, never by execution order
  std::vector<std::size_t> by_id(clients.size());
  for (std::size_t i = 0; i < by_id.size(); ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return clients[a].id < clients[b].id; });

  // decode actual wire bytes; the payload is the only thing the server sees
  std::vector<DecodedUpdate> decoded;
  decoded.reserve(results.size());
  for (const std::size_t i : by_id) {
    const LocalResult& r = results[i];
    if (payload_hook != nullptr && *payload_hook) {
      (*payload_hook)(r.update.client_id, r.update.payload);
    }
    DecodedUpdate u = decode_client_payload(r.update.payload, base);
    if (u.round != round) {
      throw std::runtime_error("client " + std::to_string(u.client_id) +
                               ": payload round mismatch");
    }
    decoded.push_back(std::move(u));
  }
  aggregate(state, std::move(decoded), strategy);

  // persist the client-local smoothing stream
  if (opts.mode == Mode::FedSdrDual) {
    for (std::size_t i = 0; i < clients.size(); ++i) {
      if (opts.reinit_smoothing_each_round) {
        clients[i].theta_s.resize(0);
      } else {
        clients[i].theta_s = results[i].theta_s;
      }
    }
  }

  RoundReport report;
  report.round = round;
  double weighted = 0.0;
  long total_n = 0;
  for (const std::size_t i : by_id) {
    const LocalResult& r = results[i];
    RoundClientStats cs;
    cs.client_id = r.update.client_id;
    cs.n_k = r.update.n_k;
    cs.stage1_nll = r.update.stage1_epoch_nll.empty() ? 0.0 : r.update.stage1_epoch_nll.back();
    cs.stage2_nll = r.update.stage2_epoch_nll.empty() ? 0.0 : r.update.stage2_epoch_nll.back();
    cs.payload_bytes = r.update.payload.size();
    report.clients.push_back(cs);
    weighted += static_cast<double>(cs.n_k) * cs.stage2_nll;
    total_n += cs.n_k;
  }
  report.weighted_nll = weighted / static_cast<double>(total_n);

  std::vector<Sample> heldout;
  for (const std::size_t i : by_id) {
    heldout.insert(heldout.end(), clients[i].heldout.begin(), clients[i].heldout.end());
  }
  if (!heldout.empty()) {
    const DualAdapterModel gm = global_model(base, state);
    const HeldoutEval ev = eval_heldout(gm, heldout);
    report.heldout_nll = ev.nll;
    report.heldout_acc = ev.accuracy;
  }
  return report;
}

}  // namespace fedsdr

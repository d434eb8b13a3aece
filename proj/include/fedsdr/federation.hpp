#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsdr/data.hpp"
#include "fedsdr/metrics.hpp"
#include "fedsdr/model.hpp"
#include "fedsdr/train.hpp"

namespace fedsdr {

enum class Mode { BaselineRaw, FedSdSingle, FedSdrDual, DualUpload };
Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

struct Objective {
  enum class Kind { Raw, Distilled, Mixture };
  Kind kind = Kind::Distilled;
  double mixture_ratio = 0.0;  // fraction supervised by raw responses
};

struct LocalOpts {
  int epochs = 3;
  int batch_size = 8;
  double lr = 3e-4;
  double prox_mu = 0.0;
  Objective objective;
};

struct Strategy {
  enum class Kind { FedAvg, FedAvgM, FedProx, FedAdam, FedYogi, FedAdagrad };
  Kind kind = Kind::FedAvg;
  double beta = 0.9;  // FedAvgM server momentum
  double mu = 0.0;    // FedProx proximal weight (applied client-side)
  // adaptive family
  double eta = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double tau = 1e-3;

  void validate() const;
};
Strategy::Kind strategy_kind_from_string(const std::string& s);
std::string strategy_kind_to_string(Strategy::Kind k);

struct ServerState {
  Vector global_r;      // flattened rectification adapter
  Vector momentum_buf;  // FedAvgM
  Vector m, v;          // adaptive moments
  Vector global_s;      // populated only in dual-upload mode
  int round = 0;
};

// Client -> server wire format: header (client_id u16 | n_k u32 | round u16,
// little-endian) followed by one adapter payload per uploaded stream.
struct PayloadHeader {
  std::uint16_t client_id = 0;
  std::uint32_t n_k = 0;
  std::uint16_t round = 0;
};

std::vector<std::uint8_t> encode_client_payload(const PayloadHeader& header,
                                                std::span<const std::uint8_t> adapter_r,
                                                std::span<const std::uint8_t> adapter_s = {});

struct DecodedUpdate {
  int client_id = 0;
  long n_k = 0;
  int round = 0;
  Vector delta_r;
  Vector delta_s;  // empty unless the payload carried an S stream
};

DecodedUpdate decode_client_payload(std::span<const std::uint8_t> bytes,
                                    const DualAdapterModel& shape_ref);

struct ClientUpdate {
  int client_id = 0;
  long n_k = 0;
  std::vector<std::uint8_t> payload;
  std::vector<double> stage1_epoch_nll;  // empty for single-stream modes
  std::vector<double> stage2_epoch_nll;
};

// Weighted delta aggregation followed by the strategy's server step
// (updates are sorted by client_id internally; t advances by one).
void aggregate(ServerState& state, std::vector<DecodedUpdate> updates,
               const Strategy& strategy);

struct LocalResult {
  ClientUpdate update;
  Vector theta_s;  // post-stage-1 smoothing stream, persisted by the caller
};

// Single-stream local update (FedSD / baselines): only the rectification
// stream trains, the smoothing stream stays at zero.
LocalResult local_update_single(const DualAdapterModel& base, const Vector& global_r,
                                const ClientShard& shard, const LocalOpts& opts, int round,
                                std::uint64_t seed, const StepHook* hook = nullptr);

// FedSDR alternating update: stage 1 trains S on distilled data, stage 2
// trains R on raw data with S frozen at its stage-1 value. Only delta_r is
// uploaded unless upload_s is set (the Dual Upload baseline).
LocalResult local_update_dual(const DualAdapterModel& base, const Vector& global_r,
                              const Vector& theta_s_init, const ClientShard& shard,
                              const LocalOpts& opts_s, const LocalOpts& opts_r, int round,
                              std::uint64_t seed, bool upload_s = false,
                              const StepHook* hook = nullptr);

struct Client {
  int id = 0;
  ClientShard shard;
  std::vector<Sample> heldout;
  Vector theta_s;  // empty until the first dual-mode round (treated as zeros)
};

struct RoundOpts {
  Mode mode = Mode::FedSdrDual;
  LocalOpts smooth;  // stage 1 (dual modes)
  LocalOpts rect;    // stage 2 / single-stream opts
  bool reinit_smoothing_each_round = false;
  int workers = 1;
};

struct RoundClientStats {
  int client_id = 0;
  long n_k = 0;
  double stage1_nll = 0.0;  // NaN-free: 0 when the stage did not run
  double stage2_nll = 0.0;
  std::size_t payload_bytes = 0;
};

struct RoundReport {
  int round = 0;
  std::vector<RoundClientStats> clients;
  double weighted_nll = 0.0;  // n_k-weighted mean of the final stage's last epoch
  double heldout_nll = 0.0;
  double heldout_acc = 0.0;
};

// observer over the exact bytes each client uploads
using PayloadHook = std::function<void(int client_id, std::span<const std::uint8_t> payload)>;

// One communication round: broadcast, local updates (optionally on a worker
// pool whose size never changes the result), selective aggregation, report.
RoundReport run_round(ServerState& state, std::vector<Client>& clients,
                      const DualAdapterModel& base, const RoundOpts& opts,
                      const Strategy& strategy, std::uint64_t seed,
                      const StepHook* hook = nullptr,
                      const PayloadHook* payload_hook = nullptr);

ServerState make_server_state(const DualAdapterModel& base, Mode mode);

// global model induced by the server state (theta_s zero except dual-upload)
DualAdapterModel global_model(const DualAdapterModel& base, const ServerState& state);

}  // namespace fedsdr

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsdr/core_math.hpp"
#include "fedsdr/rng.hpp"
#include "fedsdr/types.hpp"

namespace fedsdr {

struct BackboneConfig {
  int vocab_size = 32;
  int context_len = 8;
  int embed_dim = 16;
  int hidden_dim = 32;

  int input_dim() const { return context_len * embed_dim; }
  void validate() const;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  double init_sigma = 0.02;  // Gaussian scale for A; B always starts at zero
  void validate() const;
};

enum class Stream : std::uint8_t { R = 0, S = 1 };
enum class Trainable { None, ROnly, SOnly, Both };

bool stream_trainable(Trainable mask, Stream s);
const char* stream_name(Stream s);

// One low-rank bypass attached to a linear layer: delta = (alpha/r) * B * A.
struct AdapterPair {
  Matrix a;  // r x d_in
  Matrix b;  // d_out x r, zero-initialized so the bypass starts exactly at zero
  int rank = 8;
  double alpha = 16.0;

  double scale() const { return alpha / static_cast<double>(rank); }
};

struct GenerationConfig {
  int max_new_tokens = 8;
  double temperature = 1.0;  // 0 means greedy argmax (ties -> lowest token id)
  std::uint64_t seed = 0;
  int teacher_forcing_prefix = 0;  // first p emitted tokens copied from the reference
};

// adapted layers: the hidden and the output projection
inline constexpr int kHiddenLayer = 0;
inline constexpr int kOutputLayer = 1;
inline constexpr int kNumAdaptedLayers = 2;

// one next-token prediction: fixed-width context (left-padded with 0) -> target
struct Position {
  Tokens context;
  TokenId target = 0;
};

// Expands a (c, x, y) triple into one Position per response token; each
// response token is predicted from the preceding tokens of [c] + x + y.
void expand_positions(TokenId c, const Tokens& x, const Tokens& y, int context_len,
                      std::vector<Position>& out);

// Frozen two-layer MLP next-token predictor with two parallel LoRA streams
// (R = rectification, S = smoothing) on the hidden and output projections.
//
//   x  = concat(embed[ctx_0..ctx_L-1])
//   z1 = W_hidden x + (a/r) B_r A_r x + (a/r) B_s A_s x
//   a1 = tanh(z1)
//   z2 = W_out a1 + (a/r) B_r A_r a1 + (a/r) B_s A_s a1
//
// Both streams always participate in the forward pass; the trainable mask
// only controls which gradient buffers get filled.
class DualAdapterModel {
 public:
  DualAdapterModel(const BackboneConfig& cfg, const LoraConfig& lora, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const LoraConfig& lora_config() const { return lora_cfg_; }

  // -- backbone lifecycle ------------------------------------------------
  // The backbone starts mutable for pre-training and is frozen for good
  // before any federated use; pretrain_step throws once frozen.
  bool backbone_frozen() const { return frozen_; }
  void freeze_backbone() { frozen_ = true; }
  double pretrain_step(std::span<const Position> batch, double lr);

  // -- forward / backward ------------------------------------------------
  // h is d_in x n (columns are independent activations)
  Matrix dual_lora_forward(const Matrix& h, int layer) const;

  Vector logits(std::span<const TokenId> context) const;
  double forward_nll(std::span<const TokenId> context, TokenId target) const;
  // accumulates (sums) gradients for the trainable streams, returns the loss
  double forward_backward(std::span<const TokenId> context, TokenId target);
  void zero_grads();

  void set_trainable(Trainable mask);
  Trainable trainable() const { return trainable_; }

  // -- parameter access (flat order: L0.A, L0.B, L1.A, L1.B, row-major) ---
  int stream_param_count() const;
  Vector stream_params(Stream s) const;
  void set_stream_params(Stream s, const Vector& flat);
  Vector stream_grads(Stream s) const;

  const AdapterPair& adapter(Stream s, int layer) const;
  AdapterPair& adapter(Stream s, int layer);

  const Matrix& embedding() const { return embed_; }
  const Matrix& weight(int layer) const;
  // mutable views exist only while the backbone is still trainable
  Matrix& mutable_embedding();
  Matrix& mutable_weight(int layer);

  // -- generation ----------------------------------------------------------
  Tokens generate(std::span<const TokenId> prompt, const GenerationConfig& cfg,
                  std::span<const TokenId> forced_response = {}) const;
  Tokens generate(std::span<const TokenId> prompt, const GenerationConfig& cfg,
                  std::span<const TokenId> forced_response, Rng& rng) const;

  // exposed for gradient checking
  struct Grads {
    std::array<Matrix, kNumAdaptedLayers> a;
    std::array<Matrix, kNumAdaptedLayers> b;
  };
  const Grads& grads(Stream s) const { return grads_[static_cast<int>(s)]; }

 private:
  Vector embed_context(std::span<const TokenId> context) const;
  void check_tokens(std::span<const TokenId> tokens) const;

  BackboneConfig cfg_;
  LoraConfig lora_cfg_;
  Matrix embed_;                                   // V x E
  std::array<Matrix, kNumAdaptedLayers> w_;        // H x (L*E), V x H
  std::array<std::array<AdapterPair, kNumAdaptedLayers>, 2> adapters_;  // [stream][layer]
  std::array<Grads, 2> grads_;
  Trainable trainable_ = Trainable::ROnly;
  bool frozen_ = false;

  // backbone gradient buffers, live only until freeze_backbone()
  Matrix g_embed_;
  std::array<Matrix, kNumAdaptedLayers> g_w_;
};

// ---------------------------------------------------------------------------
// Adapter payload wire format (little-endian):
//   magic "FSDR" | version u16 | stream tag u8 ('R'/'S') | layer count u8
//   per layer: layer id u8 | r u16 | d_in u16 | d_out u16
//              A row-major f64[r*d_in] | B row-major f64[d_out*r]
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kPayloadVersion = 1;

struct AdapterLayer {
  std::uint8_t layer_id = 0;
  Matrix a;
  Matrix b;
};

struct AdapterPayload {
  Stream tag = Stream::R;
  std::vector<AdapterLayer> layers;
};

std::vector<std::uint8_t> encode_adapter_payload(Stream tag,
                                                 std::span<const AdapterLayer> layers);
// `consumed` (optional) receives the number of bytes read, so payloads can be
// concatenated. Throws std::runtime_error with the byte offset on corruption.
AdapterPayload decode_adapter_payload(std::span<const std::uint8_t> bytes,
                                      std::size_t* consumed = nullptr);

std::size_t adapter_payload_size(int layers, int rank, std::span<const int> d_in,
                                 std::span<const int> d_out);

std::vector<std::uint8_t> serialize_stream(const DualAdapterModel& model, Stream s);
// applies the payload to whichever stream it is tagged with
void deserialize_stream(DualAdapterModel& model, std::span<const std::uint8_t> bytes);

// conversions between the flat stream vector and per-layer tensors
std::vector<AdapterLayer> unflatten_stream(const DualAdapterModel& shape_ref, const Vector& flat);
Vector flatten_layers(std::span<const AdapterLayer> layers);

}  // namespace fedsdr

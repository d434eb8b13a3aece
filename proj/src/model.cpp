#include "fedsdr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fedsdr {

void BackboneConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("backbone.vocab_size must be >= 4");
  if (context_len < 1) throw ConfigError("backbone.context_len must be >= 1");
  if (embed_dim < 1) throw ConfigError("backbone.embed_dim must be >= 1");
  if (hidden_dim < 1) throw ConfigError("backbone.hidden_dim must be >= 1");
}

void LoraConfig::validate() const {
  if (rank < 1) throw ConfigError("lora.rank must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("lora.alpha must be > 0");
  if (!(init_sigma >= 0.0)) throw ConfigError("lora.init_sigma must be >= 0");
}

bool stream_trainable(Trainable mask, Stream s) {
  switch (mask) {
    case Trainable::None: return false;
    case Trainable::Both: return true;
    case Trainable::ROnly: return s == Stream::R;
    case Trainable::SOnly: return s == Stream::S;
  }
  return false;
}

const char* stream_name(Stream s) { return s == Stream::R ? "R" : "S"; }

void expand_positions(TokenId c, const Tokens& x, const Tokens& y, int context_len,
                      std::vector<Position>& out) {
  Tokens seq;
  seq.reserve(1 + x.size() + y.size());
  seq.push_back(c);
  seq.insert(seq.end(), x.begin(), x.end());
  const std::size_t prefix = seq.size();
  seq.insert(seq.end(), y.begin(), y.end());

  for (std::size_t j = 0; j < y.size(); ++j) {
    Position p;
    p.context.assign(static_cast<std::size_t>(context_len), 0);
    const std::size_t end = prefix + j;  // tokens before the prediction target
    const std::size_t take = std::min(end, static_cast<std::size_t>(context_len));
    std::copy(seq.begin() + static_cast<std::ptrdiff_t>(end - take),
              seq.begin() + static_cast<std::ptrdiff_t>(end),
              p.context.end() - static_cast<std::ptrdiff_t>(take));
    p.target = y[j];
    out.push_back(std::move(p));
  }
}

namespace {

int layer_in_dim(const BackboneConfig& cfg, int layer) {
  return layer == kHiddenLayer ? cfg.input_dim() : cfg.hidden_dim;
}

int layer_out_dim(const BackboneConfig& cfg, int layer) {
  return layer == kHiddenLayer ? cfg.hidden_dim : cfg.vocab_size;
}

void check_layer(int layer) {
  if (layer < 0 || layer >= kNumAdaptedLayers) {
    throw std::invalid_argument("adapted layer id out of range: " + std::to_string(layer));
  }
}

void append_row_major(const Matrix& m, Vector& out, Eigen::Index& at) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
}

void read_row_major(const Vector& flat, Eigen::Index& at, Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[at++];
}

}  // namespace

DualAdapterModel::DualAdapterModel(const BackboneConfig& cfg, const LoraConfig& lora,
                                   std::uint64_t seed)
    : cfg_(cfg), lora_cfg_(lora) {
  cfg_.validate();
  lora_cfg_.validate();

  Rng rng(seed);
  const int v = cfg_.vocab_size;
  const int e = cfg_.embed_dim;
  const int d = cfg_.input_dim();
  const int h = cfg_.hidden_dim;

  embed_ = Matrix::NullaryExpr(v, e, [&] { return rng.normal(0.0, 0.5); });
  w_[kHiddenLayer] =
      Matrix::NullaryExpr(h, d, [&] { return rng.normal(0.0, 1.0 / std::sqrt(double(d))); });
  w_[kOutputLayer] =
      Matrix::NullaryExpr(v, h, [&] { return rng.normal(0.0, 1.0 / std::sqrt(double(h))); });

  for (int s = 0; s < 2; ++s) {
    for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
      AdapterPair& ap = adapters_[s][layer];
      ap.rank = lora_cfg_.rank;
      ap.alpha = lora_cfg_.alpha;
      const int din = layer_in_dim(cfg_, layer);
      const int dout = layer_out_dim(cfg_, layer);
      ap.a = Matrix::NullaryExpr(lora_cfg_.rank, din,
                                 [&] { return rng.normal(0.0, lora_cfg_.init_sigma); });
      ap.b = Matrix::Zero(dout, lora_cfg_.rank);
      grads_[s].a[layer] = Matrix::Zero(lora_cfg_.rank, din);
      grads_[s].b[layer] = Matrix::Zero(dout, lora_cfg_.rank);
    }
  }

  g_embed_ = Matrix::Zero(v, e);
  g_w_[kHiddenLayer] = Matrix::Zero(h, d);
  g_w_[kOutputLayer] = Matrix::Zero(v, h);
}

const Matrix& DualAdapterModel::weight(int layer) const {
  check_layer(layer);
  return w_[layer];
}

Matrix& DualAdapterModel::mutable_embedding() {
  if (frozen_) throw std::logic_error("backbone is frozen");
  return embed_;
}

Matrix& DualAdapterModel::mutable_weight(int layer) {
  check_layer(layer);
  if (frozen_) throw std::logic_error("backbone is frozen");
  return w_[layer];
}

const AdapterPair& DualAdapterModel::adapter(Stream s, int layer) const {
  check_layer(layer);
  return adapters_[static_cast<int>(s)][layer];
}

AdapterPair& DualAdapterModel::adapter(Stream s, int layer) {
  check_layer(layer);
  return adapters_[static_cast<int>(s)][layer];
}

Matrix DualAdapterModel::dual_lora_forward(const Matrix& h, int layer) const {
  check_layer(layer);
  if (h.rows() != layer_in_dim(cfg_, layer)) {
    throw std::invalid_argument(
        "dual_lora_forward: layer " + std::to_string(layer) + " expects " +
        std::to_string(layer_in_dim(cfg_, layer)) + " rows, got " + std::to_string(h.rows()) +
        "x" + std::to_string(h.cols()));
  }
  const AdapterPair& r = adapters_[0][layer];
  const AdapterPair& s = adapters_[1][layer];
  return w_[layer] * h + r.scale() * (r.b * (r.a * h)) + s.scale() * (s.b * (s.a * h));
}

void DualAdapterModel::check_tokens(std::span<const TokenId> tokens) const {
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) + " out of range [0, " +
                              std::to_string(cfg_.vocab_size) + ")");
    }
  }
}

Vector DualAdapterModel::embed_context(std::span<const TokenId> context) const {
  if (static_cast<int>(context.size()) != cfg_.context_len) {
    throw std::invalid_argument("context length " + std::to_string(context.size()) +
                                " != context_len " + std::to_string(cfg_.context_len));
  }
  check_tokens(context);
  Vector x(cfg_.input_dim());
  for (int i = 0; i < cfg_.context_len; ++i) {
    x.segment(i * cfg_.embed_dim, cfg_.embed_dim) = embed_.row(context[i]).transpose();
  }
  return x;
}

Vector DualAdapterModel::logits(std::span<const TokenId> context) const {
  const Vector x = embed_context(context);
  const Vector a1 = dual_lora_forward(x, kHiddenLayer).array().tanh();
  return dual_lora_forward(a1, kOutputLayer);
}

double DualAdapterModel::forward_nll(std::span<const TokenId> context, TokenId target) const {
  return softmax_cross_entropy(logits(context), target).loss;
}

double DualAdapterModel::forward_backward(std::span<const TokenId> context, TokenId target) {
  const Vector x = embed_context(context);
  const Vector z1 = dual_lora_forward(x, kHiddenLayer);
  const Vector a1 = z1.array().tanh();
  const Vector z2 = dual_lora_forward(a1, kOutputLayer);
  const CrossEntropy ce = softmax_cross_entropy(z2, target);
  const Vector dz2 = ce.grad_logits;

  const auto adapter_grads = [&](Stream stream, const Vector& dz, const Vector& input,
                                 int layer) {
    AdapterPair& ap = adapters_[static_cast<int>(stream)][layer];
    Grads& g = grads_[static_cast<int>(stream)];
    g.b[layer].noalias() += ap.scale() * dz * (ap.a * input).transpose();
    g.a[layer].noalias() += ap.scale() * (ap.b.transpose() * dz) * input.transpose();
  };

  for (Stream s : {Stream::R, Stream::S}) {
    if (stream_trainable(trainable_, s)) adapter_grads(s, dz2, a1, kOutputLayer);
  }

  // activation gradient picks up every stream, trainable or not
  Vector da1 = w_[kOutputLayer].transpose() * dz2;
  for (const auto& row : adapters_) {
    const AdapterPair& ap = row[kOutputLayer];
    da1.noalias() += ap.scale() * (ap.a.transpose() * (ap.b.transpose() * dz2));
  }
  const Vector dz1 = da1.cwiseProduct((1.0 - a1.array().square()).matrix());

  for (Stream s : {Stream::R, Stream::S}) {
    if (stream_trainable(trainable_, s)) adapter_grads(s, dz1, x, kHiddenLayer);
  }

  if (!frozen_) {
    g_w_[kOutputLayer].noalias() += dz2 * a1.transpose();
    g_w_[kHiddenLayer].noalias() += dz1 * x.transpose();
    Vector dx = w_[kHiddenLayer].transpose() * dz1;
    for (const auto& row : adapters_) {
      const AdapterPair& ap = row[kHiddenLayer];
      dx.noalias() += ap.scale() * (ap.a.transpose() * (ap.b.transpose() * dz1));
    }
    for (int i = 0; i < cfg_.context_len; ++i) {
      g_embed_.row(context[i]) += dx.segment(i * cfg_.embed_dim, cfg_.embed_dim).transpose();
    }
  }
  return ce.loss;
}

void DualAdapterModel::zero_grads() {
  for (auto& g : grads_) {
    for (auto& m : g.a) m.setZero();
    for (auto& m : g.b) m.setZero();
  }
}

void DualAdapterModel::set_trainable(Trainable mask) {
  trainable_ = mask;
  for (Stream s : {Stream::R, Stream::S}) {
    if (!stream_trainable(mask, s)) {
      Grads& g = grads_[static_cast<int>(s)];
      for (auto& m : g.a) m.setZero();
      for (auto& m : g.b) m.setZero();
    }
  }
}

double DualAdapterModel::pretrain_step(std::span<const Position> batch, double lr) {
  if (frozen_) throw std::logic_error("pretrain_step called on a frozen backbone");
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  const Trainable saved = trainable_;
  trainable_ = Trainable::None;
  g_embed_.setZero();
  for (auto& g : g_w_) g.setZero();

  double loss = 0.0;
  for (const Position& p : batch) loss += forward_backward(p.context, p.target);
  const double inv = 1.0 / static_cast<double>(batch.size());
  embed_ -= (lr * inv) * g_embed_;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) w_[layer] -= (lr * inv) * g_w_[layer];

  trainable_ = saved;
  return loss * inv;
}

int DualAdapterModel::stream_param_count() const {
  int n = 0;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    n += lora_cfg_.rank * (layer_in_dim(cfg_, layer) + layer_out_dim(cfg_, layer));
  }
  return n;
}

Vector DualAdapterModel::stream_params(Stream s) const {
  Vector flat(stream_param_count());
  Eigen::Index at = 0;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    const AdapterPair& ap = adapters_[static_cast<int>(s)][layer];
    append_row_major(ap.a, flat, at);
    append_row_major(ap.b, flat, at);
  }
  return flat;
}

void DualAdapterModel::set_stream_params(Stream s, const Vector& flat) {
  if (flat.size() != stream_param_count()) {
    throw std::invalid_argument("set_stream_params: expected " +
                                std::to_string(stream_param_count()) + " values, got " +
                                std::to_string(flat.size()));
  }
  Eigen::Index at = 0;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    AdapterPair& ap = adapters_[static_cast<int>(s)][layer];
    read_row_major(flat, at, ap.a);
    read_row_major(flat, at, ap.b);
  }
}

Vector DualAdapterModel::stream_grads(Stream s) const {
  Vector flat(stream_param_count());
  Eigen::Index at = 0;
  const Grads& g = grads_[static_cast<int>(s)];
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    append_row_major(g.a[layer], flat, at);
    append_row_major(g.b[layer], flat, at);
  }
  return flat;
}

Tokens DualAdapterModel::generate(std::span<const TokenId> prompt, const GenerationConfig& cfg,
                                  std::span<const TokenId> forced_response) const {
  Rng rng(cfg.seed);
  return generate(prompt, cfg, forced_response, rng);
}

Tokens DualAdapterModel::generate(std::span<const TokenId> prompt, const GenerationConfig& cfg,
                                  std::span<const TokenId> forced_response, Rng& rng) const {
  if (prompt.empty()) throw std::invalid_argument("generate: prompt must be nonempty");
  if (cfg.temperature < 0.0) throw std::invalid_argument("generate: temperature must be >= 0");
  if (cfg.teacher_forcing_prefix > static_cast<int>(forced_response.size())) {
    throw std::invalid_argument("generate: teacher_forcing_prefix exceeds reference length");
  }
  check_tokens(prompt);

  const int l = cfg_.context_len;
  Tokens seq(prompt.begin(), prompt.end());
  Tokens out;
  out.reserve(static_cast<std::size_t>(std::max(cfg.max_new_tokens, 0)));

  Tokens ctx(static_cast<std::size_t>(l), 0);
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    std::fill(ctx.begin(), ctx.end(), 0);
    const std::size_t take = std::min(seq.size(), static_cast<std::size_t>(l));
    std::copy(seq.end() - static_cast<std::ptrdiff_t>(take), seq.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(take));

    TokenId tok = 0;
    if (step < cfg.teacher_forcing_prefix) {
      tok = forced_response[static_cast<std::size_t>(step)];
    } else {
      const Vector z = logits(ctx);
      if (cfg.temperature == 0.0) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < z.size(); ++i) {
          if (z[i] > z[best]) best = i;  // strict '>' keeps the lowest id on ties
        }
        tok = static_cast<TokenId>(best);
      } else {
        const Vector scaled = z / cfg.temperature;
        const Vector shifted = (scaled.array() - scaled.maxCoeff()).exp();
        tok = static_cast<TokenId>(rng.categorical(shifted));
      }
    }
    seq.push_back(tok);
    out.push_back(tok);
  }
  return out;
}

// --------------------------------------------------------------------------
// payload codec
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'S', 'D', 'R'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t at = 0;

  void need(std::size_t n, const char* what) const {
    if (at + n > bytes.size()) {
      throw std::runtime_error(std::string("adapter payload: truncated reading ") + what +
                               " at offset " + std::to_string(at));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[at++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint16_t>(bytes[at]) | static_cast<std::uint16_t>(bytes[at + 1]) << 8;
    at += 2;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    at += 8;
    return std::bit_cast<double>(bits);
  }
};

std::uint8_t stream_tag_byte(Stream s) { return s == Stream::R ? 'R' : 'S'; }

}  // namespace

std::vector<std::uint8_t> encode_adapter_payload(Stream tag,
                                                 std::span<const AdapterLayer> layers) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kPayloadVersion);
  put_u8(out, stream_tag_byte(tag));
  put_u8(out, static_cast<std::uint8_t>(layers.size()));
  for (const AdapterLayer& layer : layers) {
    put_u8(out, layer.layer_id);
    put_u16(out, static_cast<std::uint16_t>(layer.a.rows()));
    put_u16(out, static_cast<std::uint16_t>(layer.a.cols()));
    put_u16(out, static_cast<std::uint16_t>(layer.b.rows()));
    for (Eigen::Index r = 0; r < layer.a.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.a.cols(); ++c) put_f64(out, layer.a(r, c));
    for (Eigen::Index r = 0; r < layer.b.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.b.cols(); ++c) put_f64(out, layer.b(r, c));
  }
  return out;
}

AdapterPayload decode_adapter_payload(std::span<const std::uint8_t> bytes,
                                      std::size_t* consumed) {
  Reader rd{bytes};
  rd.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("adapter payload: bad magic at offset 0");
  }
  rd.at = 4;
  const std::uint16_t version = rd.u16("version");
  if (version != kPayloadVersion) {
    throw std::runtime_error("adapter payload: unsupported version " + std::to_string(version) +
                             " at offset 4");
  }
  const std::uint8_t tag = rd.u8("stream tag");
  AdapterPayload payload;
  if (tag == 'R') {
    payload.tag = Stream::R;
  } else if (tag == 'S') {
    payload.tag = Stream::S;
  } else {
    throw std::runtime_error("adapter payload: unknown stream tag " + std::to_string(tag) +
                             " at offset 6");
  }
  const std::uint8_t count = rd.u8("layer count");
  for (int i = 0; i < count; ++i) {
    AdapterLayer layer;
    layer.layer_id = rd.u8("layer id");
    const int r = rd.u16("rank");
    const int din = rd.u16("d_in");
    const int dout = rd.u16("d_out");
    layer.a.resize(r, din);
    layer.b.resize(dout, r);
    for (Eigen::Index rr = 0; rr < layer.a.rows(); ++rr)
      for (Eigen::Index cc = 0; cc < layer.a.cols(); ++cc) layer.a(rr, cc) = rd.f64("A data");
    for (Eigen::Index rr = 0; rr < layer.b.rows(); ++rr)
      for (Eigen::Index cc = 0; cc < layer.b.cols(); ++cc) layer.b(rr, cc) = rd.f64("B data");
    payload.layers.push_back(std::move(layer));
  }
  if (consumed != nullptr) *consumed = rd.at;
  return payload;
}

std::size_t adapter_payload_size(int layers, int rank, std::span<const int> d_in,
                                 std::span<const int> d_out) {
  std::size_t n = 4 + 2 + 1 + 1;
  for (int i = 0; i < layers; ++i) {
    n += 1 + 2 + 2 + 2;
    n += 8 * static_cast<std::size_t>(rank) *
         (static_cast<std::size_t>(d_in[i]) + static_cast<std::size_t>(d_out[i]));
  }
  return n;
}

std::vector<std::uint8_t> serialize_stream(const DualAdapterModel& model, Stream s) {
  std::vector<AdapterLayer> layers;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    const AdapterPair& ap = model.adapter(s, layer);
    layers.push_back({static_cast<std::uint8_t>(layer), ap.a, ap.b});
  }
  return encode_adapter_payload(s, layers);
}

void deserialize_stream(DualAdapterModel& model, std::span<const std::uint8_t> bytes) {
  const AdapterPayload payload = decode_adapter_payload(bytes);
  for (const AdapterLayer& layer : payload.layers) {
    if (layer.layer_id >= kNumAdaptedLayers) {
      throw std::runtime_error("adapter payload: unknown layer id " +
                               std::to_string(layer.layer_id));
    }
    AdapterPair& ap = model.adapter(payload.tag, layer.layer_id);
    if (layer.a.rows() != ap.a.rows() || layer.a.cols() != ap.a.cols() ||
        layer.b.rows() != ap.b.rows() || layer.b.cols() != ap.b.cols()) {
      throw std::runtime_error("adapter payload: layer " + std::to_string(layer.layer_id) +
                               " shape does not match the model");
    }
    ap.a = layer.a;
    ap.b = layer.b;
  }
}

std::vector<AdapterLayer> unflatten_stream(const DualAdapterModel& shape_ref, const Vector& flat) {
  if (flat.size() != shape_ref.stream_param_count()) {
    throw std::invalid_argument("unflatten_stream: expected " +
                                std::to_string(shape_ref.stream_param_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  std::vector<AdapterLayer> layers;
  Eigen::Index at = 0;
  for (int layer = 0; layer < kNumAdaptedLayers; ++layer) {
    const AdapterPair& ap = shape_ref.adapter(Stream::R, layer);
    AdapterLayer out;
    out.layer_id = static_cast<std::uint8_t>(layer);
    out.a.resize(ap.a.rows(), ap.a.cols());
    out.b.resize(ap.b.rows(), ap.b.cols());
    read_row_major(flat, at, out.a);
    read_row_major(flat, at, out.b);
    layers.push_back(std::move(out));
  }
  return layers;
}

Vector flatten_layers(std::span<const AdapterLayer> layers) {
  Eigen::Index n = 0;
  for (const AdapterLayer& l : layers) n += l.a.size() + l.b.size();
  Vector flat(n);
  Eigen::Index at = 0;
  for (const AdapterLayer& l : layers) {
    append_row_major(l.a, flat, at);
    append_row_major(l.b, flat, at);
  }
  return flat;
}

}  // namespace fedsdr

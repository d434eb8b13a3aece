#include "fedsdr/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "fedsdr/metrics.hpp"
#include "json.hpp"

namespace fedsdr {

using nlohmann::json;

namespace {

// seed-derivation stream tags (run seed -> per-stage deterministic streams)
constexpr std::uint64_t kSeedDomains = 0x01;
constexpr std::uint64_t kSeedDataset = 0x02;
constexpr std::uint64_t kSeedPartition = 0x03;
constexpr std::uint64_t kSeedPretrain = 0x04;
constexpr std::uint64_t kSeedDistill = 0x05;
constexpr std::uint64_t kSeedRounds = 0x06;

void require_keys(const json& j, const std::string& path,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.find(key) == allowed.end()) {
      throw ConfigError(path + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

void read_local_opts(const json& j, const std::string& path, LocalOpts& out) {
  require_keys(j, path, {"epochs", "batch_size", "lr", "prox_mu"});
  read_field(j, path, "epochs", out.epochs);
  read_field(j, path, "batch_size", out.batch_size);
  read_field(j, path, "lr", out.lr);
  read_field(j, path, "prox_mu", out.prox_mu);
}

json local_opts_json(const LocalOpts& o) {
  return json{{"epochs", o.epochs},
              {"batch_size", o.batch_size},
              {"lr", o.lr},
              {"prox_mu", o.prox_mu}};
}

}  // namespace

void ExperimentConfig::validate() const {
  backbone.validate();
  lora.validate();
  partition.validate();
  if (data.num_domains < 2) throw ConfigError("data.num_domains must be >= 2");
  if (data.prompt_len < 0) throw ConfigError("data.prompt_len must be >= 0");
  if (data.response_len < 1) throw ConfigError("data.response_len must be >= 1");
  if (!(data.block_mass >= 0.0 && data.block_mass <= 1.0)) {
    throw ConfigError("data.block_mass must lie in [0, 1]");
  }
  if (!(data.filler_boost >= 0.0 && data.filler_boost <= 1.0)) {
    throw ConfigError("data.filler_boost must lie in [0, 1]");
  }
  if (data.heldout_per_client < 0) throw ConfigError("data.heldout_per_client must be >= 0");
  if (data.heldout_per_client >= partition.samples_per_client) {
    throw ConfigError("data.heldout_per_client must be < partition.samples_per_client");
  }
  if (pretrain.steps < 0) throw ConfigError("pretrain.steps must be >= 0");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (pretrain.corpus_per_domain < 1) throw ConfigError("pretrain.corpus_per_domain must be >= 1");
  if (!(distill.temperature >= 0.0)) throw ConfigError("distill.temperature must be >= 0");
  if (!(distill.length_factor > 0.0)) throw ConfigError("distill.length_factor must be > 0");
  if (distill.teacher_forcing_prefix < 0) {
    throw ConfigError("distill.teacher_forcing_prefix must be >= 0");
  }
  for (const LocalOpts* o : {&local_smooth, &local}) {
    if (o->epochs < 0) throw ConfigError("local epochs must be >= 0");
    if (o->batch_size < 1) throw ConfigError("local batch_size must be >= 1");
    if (!(o->lr > 0.0)) throw ConfigError("local lr must be > 0");
    if (!(o->prox_mu >= 0.0)) throw ConfigError("local prox_mu must be >= 0");
  }
  strategy.validate();
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (!(mixture_ratio >= 0.0 && mixture_ratio <= 1.0)) {
    throw ConfigError("mixture_ratio must lie in [0, 1]");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  require_keys(j, "config",
               {"backbone", "lora", "data", "partition", "pretrain", "distill",
                "local_smooth", "local", "strategy", "mode", "rounds", "seeds",
                "mixture_ratio", "teacher_refresh", "smoothing_lifecycle", "workers",
                "out_dir"});

  if (j.contains("backbone")) {
    const json& b = j["backbone"];
    require_keys(b, "config.backbone", {"vocab_size", "context_len", "embed_dim", "hidden_dim"});
    read_field(b, "config.backbone", "vocab_size", cfg.backbone.vocab_size);
    read_field(b, "config.backbone", "context_len", cfg.backbone.context_len);
    read_field(b, "config.backbone", "embed_dim", cfg.backbone.embed_dim);
    read_field(b, "config.backbone", "hidden_dim", cfg.backbone.hidden_dim);
  }
  if (j.contains("lora")) {
    const json& b = j["lora"];
    require_keys(b, "config.lora", {"rank", "alpha", "init_sigma"});
    read_field(b, "config.lora", "rank", cfg.lora.rank);
    read_field(b, "config.lora", "alpha", cfg.lora.alpha);
    read_field(b, "config.lora", "init_sigma", cfg.lora.init_sigma);
  }
  if (j.contains("data")) {
    const json& b = j["data"];
    require_keys(b, "config.data",
                 {"num_domains", "prompt_len", "response_len", "block_mass", "filler_boost",
                  "heldout_per_client"});
    read_field(b, "config.data", "num_domains", cfg.data.num_domains);
    read_field(b, "config.data", "prompt_len", cfg.data.prompt_len);
    read_field(b, "config.data", "response_len", cfg.data.response_len);
    read_field(b, "config.data", "block_mass", cfg.data.block_mass);
    read_field(b, "config.data", "filler_boost", cfg.data.filler_boost);
    read_field(b, "config.data", "heldout_per_client", cfg.data.heldout_per_client);
  }
  if (j.contains("partition")) {
    const json& b = j["partition"];
    require_keys(b, "config.partition",
                 {"num_clients", "dirichlet_alpha", "samples_per_client"});
    read_field(b, "config.partition", "num_clients", cfg.partition.num_clients);
    read_field(b, "config.partition", "dirichlet_alpha", cfg.partition.dirichlet_alpha);
    read_field(b, "config.partition", "samples_per_client", cfg.partition.samples_per_client);
  }
  if (j.contains("pretrain")) {
    const json& b = j["pretrain"];
    require_keys(b, "config.pretrain", {"steps", "batch_size", "lr", "corpus_per_domain"});
    read_field(b, "config.pretrain", "steps", cfg.pretrain.steps);
    read_field(b, "config.pretrain", "batch_size", cfg.pretrain.batch_size);
    read_field(b, "config.pretrain", "lr", cfg.pretrain.lr);
    read_field(b, "config.pretrain", "corpus_per_domain", cfg.pretrain.corpus_per_domain);
  }
  if (j.contains("distill")) {
    const json& b = j["distill"];
    require_keys(b, "config.distill", {"temperature", "length_factor", "teacher_forcing_prefix"});
    read_field(b, "config.distill", "temperature", cfg.distill.temperature);
    read_field(b, "config.distill", "length_factor", cfg.distill.length_factor);
    read_field(b, "config.distill", "teacher_forcing_prefix", cfg.distill.teacher_forcing_prefix);
  }
  if (j.contains("local_smooth")) read_local_opts(j["local_smooth"], "config.local_smooth", cfg.local_smooth);
  if (j.contains("local")) read_local_opts(j["local"], "config.local", cfg.local);
  if (j.contains("strategy")) {
    const json& b = j["strategy"];
    require_keys(b, "config.strategy", {"name", "beta", "mu", "eta", "beta1", "beta2", "tau"});
    std::string name = strategy_kind_to_string(cfg.strategy.kind);
    read_field(b, "config.strategy", "name", name);
    cfg.strategy.kind = strategy_kind_from_string(name);
    read_field(b, "config.strategy", "beta", cfg.strategy.beta);
    read_field(b, "config.strategy", "mu", cfg.strategy.mu);
    read_field(b, "config.strategy", "eta", cfg.strategy.eta);
    read_field(b, "config.strategy", "beta1", cfg.strategy.beta1);
    read_field(b, "config.strategy", "beta2", cfg.strategy.beta2);
    read_field(b, "config.strategy", "tau", cfg.strategy.tau);
  }
  if (j.contains("mode")) {
    std::string mode;
    read_field(j, "config", "mode", mode);
    cfg.mode = mode_from_string(mode);
  }
  read_field(j, "config", "rounds", cfg.rounds);
  read_field(j, "config", "seeds", cfg.seeds);
  read_field(j, "config", "mixture_ratio", cfg.mixture_ratio);
  if (j.contains("teacher_refresh")) {
    std::string s;
    read_field(j, "config", "teacher_refresh", s);
    if (s == "once") {
      cfg.teacher_refresh = TeacherRefresh::Once;
    } else if (s == "per-round") {
      cfg.teacher_refresh = TeacherRefresh::PerRound;
    } else {
      throw ConfigError("config.teacher_refresh: expected 'once' or 'per-round', got '" + s + "'");
    }
  }
  if (j.contains("smoothing_lifecycle")) {
    std::string s;
    read_field(j, "config", "smoothing_lifecycle", s);
    if (s == "persist") {
      cfg.smoothing_lifecycle = SmoothingLifecycle::Persist;
    } else if (s == "reinit") {
      cfg.smoothing_lifecycle = SmoothingLifecycle::Reinit;
    } else {
      throw ConfigError("config.smoothing_lifecycle: expected 'persist' or 'reinit', got '" +
                        s + "'");
    }
  }
  read_field(j, "config", "workers", cfg.workers);
  read_field(j, "config", "out_dir", cfg.out_dir);

  // fedsd-single trains on a raw/distilled mixture when mixture_ratio > 0
  cfg.local.objective.kind =
      cfg.mixture_ratio > 0.0 ? Objective::Kind::Mixture : Objective::Kind::Distilled;
  cfg.local.objective.mixture_ratio = cfg.mixture_ratio;
  cfg.local_smooth.objective.kind = Objective::Kind::Distilled;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json_text(text);
}

namespace {

json config_json(const ExperimentConfig& cfg) {
  json j;
  j["backbone"] = {{"vocab_size", cfg.backbone.vocab_size},
                   {"context_len", cfg.backbone.context_len},
                   {"embed_dim", cfg.backbone.embed_dim},
                   {"hidden_dim", cfg.backbone.hidden_dim}};
  j["lora"] = {{"rank", cfg.lora.rank},
               {"alpha", cfg.lora.alpha},
               {"init_sigma", cfg.lora.init_sigma}};
  j["data"] = {{"num_domains", cfg.data.num_domains},
               {"prompt_len", cfg.data.prompt_len},
               {"response_len", cfg.data.response_len},
               {"block_mass", cfg.data.block_mass},
               {"filler_boost", cfg.data.filler_boost},
               {"heldout_per_client", cfg.data.heldout_per_client}};
  j["partition"] = {{"num_clients", cfg.partition.num_clients},
                    {"dirichlet_alpha", cfg.partition.dirichlet_alpha},
                    {"samples_per_client", cfg.partition.samples_per_client}};
  j["pretrain"] = {{"steps", cfg.pretrain.steps},
                   {"batch_size", cfg.pretrain.batch_size},
                   {"lr", cfg.pretrain.lr},
                   {"corpus_per_domain", cfg.pretrain.corpus_per_domain}};
  j["distill"] = {{"temperature", cfg.distill.temperature},
                  {"length_factor", cfg.distill.length_factor},
                  {"teacher_forcing_prefix", cfg.distill.teacher_forcing_prefix}};
  j["local_smooth"] = local_opts_json(cfg.local_smooth);
  j["local"] = local_opts_json(cfg.local);
  j["strategy"] = {{"name", strategy_kind_to_string(cfg.strategy.kind)},
                   {"beta", cfg.strategy.beta},
                   {"mu", cfg.strategy.mu},
                   {"eta", cfg.strategy.eta},
                   {"beta1", cfg.strategy.beta1},
                   {"beta2", cfg.strategy.beta2},
                   {"tau", cfg.strategy.tau}};
  j["mode"] = mode_to_string(cfg.mode);
  j["rounds"] = cfg.rounds;
  j["seeds"] = cfg.seeds;
  j["mixture_ratio"] = cfg.mixture_ratio;
  j["teacher_refresh"] = cfg.teacher_refresh == TeacherRefresh::Once ? "once" : "per-round";
  j["smoothing_lifecycle"] =
      cfg.smoothing_lifecycle == SmoothingLifecycle::Persist ? "persist" : "reinit";
  j["workers"] = cfg.workers;
  j["out_dir"] = cfg.out_dir;
  return j;
}

}  // namespace

std::string ExperimentConfig::canonical_json() const {
  // nlohmann::json keeps object keys sorted, so dump() is canonical; the
  // out_dir does not participate in the hash (same experiment, any directory)
  json j = config_json(*this);
  j.erase("out_dir");
  j.erase("workers");  // worker count must never affect results
  return j.dump();
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(canonical_json()); }

std::string config_to_json_text(const ExperimentConfig& cfg, int indent) {
  return config_json(cfg).dump(indent) + "\n";
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

std::vector<DomainSpec> experiment_domains(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  return build_domains(cfg.data.num_domains, cfg.backbone.vocab_size,
                       mix_seed(run_seed, kSeedDomains), cfg.data.block_mass,
                       cfg.data.filler_boost);
}

ExperimentData build_data(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  ExperimentData out;
  out.domains = experiment_domains(cfg, run_seed);

  const long total = static_cast<long>(cfg.partition.num_clients) *
                     cfg.partition.samples_per_client;
  const int per_domain =
      static_cast<int>((total + cfg.data.num_domains - 1) / cfg.data.num_domains);
  const auto by_domain = sample_dataset(out.domains, per_domain, cfg.data.prompt_len,
                                        cfg.data.response_len, mix_seed(run_seed, kSeedDataset));

  PartitionSpec part = cfg.partition;
  part.seed = mix_seed(run_seed, kSeedPartition);
  auto shards = dirichlet_partition(by_domain, part);

  for (auto& shard : shards) {
    Client client;
    client.id = shard.client_id;
    // the tail of each shard becomes that client's held-out set
    const long keep = std::max<long>(1, shard.n_k() - cfg.data.heldout_per_client);
    client.heldout.assign(shard.raw.begin() + keep, shard.raw.end());
    shard.raw.resize(static_cast<std::size_t>(keep));
    client.shard = std::move(shard);
    out.clients.push_back(std::move(client));
  }
  return out;
}

DualAdapterModel build_teacher(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  const auto domains = experiment_domains(cfg, run_seed);
  PretrainConfig pre = cfg.pretrain;
  pre.prompt_len = cfg.data.prompt_len;
  pre.response_len = cfg.data.response_len;
  pre.seed = mix_seed(run_seed, kSeedPretrain);
  return make_pretrained_model(cfg.backbone, cfg.lora, domains, pre);
}

void distill_clients(const ExperimentConfig& cfg, const DualAdapterModel& teacher,
                     std::vector<Client>& clients, std::uint64_t run_seed) {
  GenerationConfig gen;
  gen.temperature = cfg.distill.temperature;
  gen.teacher_forcing_prefix = cfg.distill.teacher_forcing_prefix;
  gen.seed = mix_seed(run_seed, kSeedDistill);
  for (Client& client : clients) {
    distill_shard(teacher, client.shard, gen, cfg.distill.length_factor);
  }
}

namespace {

bool mode_needs_distilled(const ExperimentConfig& cfg) {
  return cfg.mode != Mode::BaselineRaw;
}

}  // namespace

TrainOutput train_clients(const ExperimentConfig& cfg, const DualAdapterModel& base,
                          std::vector<Client>& clients, std::uint64_t run_seed,
                          const CheckpointSink* checkpoint_sink,
                          const ReportSink* report_sink) {
  RoundOpts opts;
  opts.mode = cfg.mode;
  opts.smooth = cfg.local_smooth;
  opts.rect = cfg.local;
  if (cfg.mode == Mode::FedSdSingle) {
    opts.rect.objective.kind =
        cfg.mixture_ratio > 0.0 ? Objective::Kind::Mixture : Objective::Kind::Distilled;
    opts.rect.objective.mixture_ratio = cfg.mixture_ratio;
  }
  // FedProx's proximal weight acts client-side; the server step is FedAvg
  if (cfg.strategy.kind == Strategy::Kind::FedProx && cfg.strategy.mu > 0.0) {
    opts.rect.prox_mu = cfg.strategy.mu;
  }
  opts.reinit_smoothing_each_round = cfg.smoothing_lifecycle == SmoothingLifecycle::Reinit;
  opts.workers = cfg.workers;

  TrainOutput out;
  out.state = make_server_state(base, cfg.mode);
  const std::uint64_t rounds_seed = mix_seed(run_seed, kSeedRounds);

  for (int t = 0; t < cfg.rounds; ++t) {
    if (cfg.teacher_refresh == TeacherRefresh::PerRound && mode_needs_distilled(cfg) && t > 0) {
      // explicit re-refinery with the current global model as teacher
      const DualAdapterModel refreshed = global_model(base, out.state);
      GenerationConfig gen;
      gen.temperature = cfg.distill.temperature;
      gen.teacher_forcing_prefix = cfg.distill.teacher_forcing_prefix;
      gen.seed = mix_seed(mix_seed(run_seed, kSeedDistill), static_cast<std::uint64_t>(t));
      for (Client& client : clients) {
        client.shard.distilled.clear();
        distill_shard(refreshed, client.shard, gen, cfg.distill.length_factor);
      }
    }
    RoundReport report = run_round(out.state, clients, base, opts, cfg.strategy, rounds_seed);
    if (checkpoint_sink != nullptr && *checkpoint_sink) {
      (*checkpoint_sink)(report.round, out.state);
    }
    if (report_sink != nullptr && *report_sink) (*report_sink)(report);
    out.reports.push_back(std::move(report));
  }
  return out;
}

// ---------------------------------------------------------------------------
// corpus files
// ---------------------------------------------------------------------------

void write_corpus(const std::filesystem::path& path, const std::vector<Client>& clients,
                  bool heldout_rows) {
  std::string text;
  for (const Client& client : clients) {
    const auto emit = [&](const Sample& raw, const Sample* distilled) {
      json row;
      row["client_id"] = client.id;
      row["domain"] = raw.c;
      row["c"] = raw.c;
      row["x"] = raw.x;
      row["y"] = raw.y;
      if (distilled != nullptr) {
        row["y_distilled"] = distilled->y;
      } else {
        row["y_distilled"] = nullptr;
      }
      text += row.dump();
      text += '\n';
    };
    if (heldout_rows) {
      for (const Sample& s : client.heldout) emit(s, nullptr);
    } else {
      const bool has_distilled = client.shard.distilled.size() == client.shard.raw.size() &&
                                 !client.shard.distilled.empty();
      for (std::size_t i = 0; i < client.shard.raw.size(); ++i) {
        emit(client.shard.raw[i], has_distilled ? &client.shard.distilled[i] : nullptr);
      }
    }
  }
  atomic_write(path, text);
}

namespace {

Sample sample_from_row(const json& row, bool distilled) {
  Sample s;
  s.c = row.at("c").get<TokenId>();
  s.x = row.at("x").get<Tokens>();
  s.y = distilled ? row.at("y_distilled").get<Tokens>() : row.at("y").get<Tokens>();
  return s;
}

}  // namespace

std::vector<Client> read_corpus(const std::filesystem::path& path, bool heldout_rows) {
  const std::string text = read_text_file(path);
  std::vector<Client> clients;
  std::map<int, std::size_t> index;

  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const int cid = row.at("client_id").get<int>();
      if (index.find(cid) == index.end()) {
        index[cid] = clients.size();
        Client c;
        c.id = cid;
        c.shard.client_id = cid;
        clients.push_back(std::move(c));
      }
      Client& client = clients[index[cid]];
      if (heldout_rows) {
        client.heldout.push_back(sample_from_row(row, false));
      } else {
        client.shard.raw.push_back(sample_from_row(row, false));
        if (!row.at("y_distilled").is_null()) {
          client.shard.distilled.push_back(sample_from_row(row, true));
        }
      }
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const Client& c : clients) {
    if (!heldout_rows && !c.shard.distilled.empty() &&
        c.shard.distilled.size() != c.shard.raw.size()) {
      throw std::runtime_error(path.string() + ": client " + std::to_string(c.id) +
                               " has a partial distilled corpus");
    }
  }
  std::sort(clients.begin(), clients.end(),
            [](const Client& a, const Client& b) { return a.id < b.id; });
  return clients;
}

void read_heldout_into(const std::filesystem::path& path, std::vector<Client>& clients) {
  const std::vector<Client> held = read_corpus(path, true);
  for (const Client& h : held) {
    const auto it = std::find_if(clients.begin(), clients.end(),
                                 [&](const Client& c) { return c.id == h.id; });
    if (it == clients.end()) {
      throw std::runtime_error(path.string() + ": held-out rows for unknown client " +
                               std::to_string(h.id));
    }
    it->heldout = h.heldout;
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'S', 'D', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_vector(std::vector<std::uint8_t>& out, const Vector& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    put_u64(out, bits);
  }
}

struct CheckpointReader {
  std::span<const std::uint8_t> bytes;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated at offset " + std::to_string(at));
    }
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes[at] | bytes[at + 1] << 8);
    at += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    at += 8;
    return v;
  }
  Vector vec() {
    const std::uint32_t n = u32();
    Vector v(static_cast<Eigen::Index>(n));
    for (std::uint32_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(u64());
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ServerState& state,
                                            std::uint64_t config_hash) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  out.push_back(static_cast<std::uint8_t>(kCheckpointVersion & 0xff));
  out.push_back(static_cast<std::uint8_t>(kCheckpointVersion >> 8));
  put_u64(out, config_hash);
  put_u32(out, static_cast<std::uint32_t>(state.round));
  put_vector(out, state.global_r);
  put_vector(out, state.momentum_buf);
  put_vector(out, state.m);
  put_vector(out, state.v);
  put_vector(out, state.global_s);
  return out;
}

ServerState decode_checkpoint(std::span<const std::uint8_t> bytes, std::uint64_t expect_hash) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  CheckpointReader rd{bytes, 4};
  const std::uint16_t version = rd.u16();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t hash = rd.u64();
  if (hash != expect_hash) {
    throw std::runtime_error("checkpoint: config hash mismatch (checkpoint " + hex64(hash) +
                             ", config " + hex64(expect_hash) + ")");
  }
  ServerState state;
  state.round = static_cast<int>(rd.u32());
  state.global_r = rd.vec();
  state.momentum_buf = rd.vec();
  state.m = rd.vec();
  state.v = rd.vec();
  state.global_s = rd.vec();
  if (rd.at != bytes.size()) {
    throw std::runtime_error("checkpoint: trailing bytes at offset " + std::to_string(rd.at));
  }
  return state;
}

std::string round_report_json(const RoundReport& report, std::uint64_t run_seed,
                              const std::string& config_hash_hex) {
  json j;
  j["round"] = report.round;
  j["weighted_nll"] = report.weighted_nll;
  j["heldout_nll"] = report.heldout_nll;
  j["heldout_acc"] = report.heldout_acc;
  j["seed"] = run_seed;
  j["config_hash"] = config_hash_hex;
  json clients = json::array();
  for (const RoundClientStats& c : report.clients) {
    clients.push_back({{"client_id", c.client_id},
                       {"n_k", c.n_k},
                       {"stage1_nll", c.stage1_nll},
                       {"stage2_nll", c.stage2_nll},
                       {"payload_bytes", c.payload_bytes}});
  }
  j["clients"] = std::move(clients);
  return j.dump();
}

}  // namespace fedsdr

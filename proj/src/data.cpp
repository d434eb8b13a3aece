#include "fedsdr/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fedsdr {

std::pair<TokenId, TokenId> filler_tokens(int vocab_size) {
  if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
  return {static_cast<TokenId>(vocab_size - 2), static_cast<TokenId>(vocab_size - 1)};
}

std::vector<DomainSpec> build_domains(int num_domains, int vocab_size, std::uint64_t seed,
                                      double block_mass, double filler_boost) {
  if (num_domains < 1) throw ConfigError("build_domains: need at least 1 domain");
  if (vocab_size < 4) throw ConfigError("build_domains: vocab_size must be >= 4");
  if (vocab_size < 2 * num_domains) {
    throw ConfigError("build_domains: vocab " + std::to_string(vocab_size) +
                      " too small for " + std::to_string(num_domains) +
                      " domains (blocks need >= 2 tokens)");
  }
  if (!(block_mass >= 0.0 && block_mass <= 1.0)) {
    throw ConfigError("build_domains: block_mass must lie in [0, 1]");
  }
  if (!(filler_boost >= 0.0 && filler_boost <= 1.0)) {
    throw ConfigError("build_domains: filler_boost must lie in [0, 1]");
  }

  // preferred blocks tile the non-filler tokens
  const int usable = vocab_size - 2;
  const int base = usable / num_domains;
  const int extra = usable % num_domains;

  std::vector<DomainSpec> domains;
  int cursor = 0;
  for (int d = 0; d < num_domains; ++d) {
    const int block_len = base + (d < extra ? 1 : 0);
    const int block_begin = cursor;
    cursor += block_len;

    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d)));
    DomainSpec spec;
    spec.domain_id = d;
    spec.filler_boost = filler_boost;
    spec.name = "domain" + std::to_string(d);
    spec.transition = Matrix::Zero(vocab_size, vocab_size);

    for (int row = 0; row < vocab_size; ++row) {
      Vector in_block = Vector::Zero(vocab_size);
      Vector out_block = Vector::Zero(vocab_size);
      double in_total = 0.0;
      double out_total = 0.0;
      for (int col = 0; col < vocab_size; ++col) {
        const double w = 0.05 + rng.u01();  // bounded away from 0: full support
        if (col >= block_begin && col < block_begin + block_len) {
          in_block[col] = w;
          in_total += w;
        } else {
          out_block[col] = w;
          out_total += w;
        }
      }
      Vector r = Vector::Zero(vocab_size);
      if (in_total > 0.0) r += (block_mass / in_total) * in_block;
      if (out_total > 0.0) r += ((1.0 - block_mass) / out_total) * out_block;
      r /= r.sum();  // renormalize so each row sums to 1 exactly
      spec.transition.row(row) = r.transpose();
    }
    domains.push_back(std::move(spec));
  }
  return domains;
}

Matrix boosted_transition(const DomainSpec& domain) {
  const int v = static_cast<int>(domain.transition.rows());
  const auto [f0, f1] = filler_tokens(v);
  Matrix boosted = (1.0 - domain.filler_boost) * domain.transition;
  boosted.col(f0).array() += domain.filler_boost / 2.0;
  boosted.col(f1).array() += domain.filler_boost / 2.0;
  return boosted;
}

Tokens walk_chain(const Matrix& transition, TokenId start, int length, Rng& rng) {
  if (start < 0 || start >= transition.rows()) {
    throw std::out_of_range("walk_chain: start state out of range");
  }
  Tokens out;
  out.reserve(static_cast<std::size_t>(length));
  TokenId state = start;
  for (int i = 0; i < length; ++i) {
    state = static_cast<TokenId>(rng.categorical(transition.row(state).transpose()));
    out.push_back(state);
  }
  return out;
}

Vector stationary_distribution(const Matrix& transition) {
  const Eigen::Index v = transition.rows();
  Vector pi = Vector::Constant(v, 1.0 / static_cast<double>(v));
  for (int iter = 0; iter < 10000; ++iter) {
    Vector next = transition.transpose() * pi;
    next /= next.sum();
    const double delta = (next - pi).cwiseAbs().maxCoeff();
    pi = next;
    if (delta < 1e-13) break;
  }
  return pi;
}

void PartitionSpec::validate() const {
  if (num_clients < 1) throw ConfigError("partition.num_clients must be >= 1");
  if (!(dirichlet_alpha > 0.0)) throw ConfigError("partition.dirichlet_alpha must be > 0");
  if (samples_per_client < 1) throw ConfigError("partition.samples_per_client must be >= 1");
}

std::vector<std::vector<Sample>> sample_dataset(const std::vector<DomainSpec>& domains,
                                                int per_domain, int prompt_len,
                                                int response_len, std::uint64_t seed) {
  if (per_domain < 1) throw ConfigError("sample_dataset: per_domain must be >= 1");
  if (prompt_len < 0 || response_len < 1) {
    throw ConfigError("sample_dataset: prompt_len must be >= 0 and response_len >= 1");
  }

  std::vector<std::vector<Sample>> by_domain;
  for (const DomainSpec& d : domains) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d.domain_id)));
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(per_domain));
    for (int i = 0; i < per_domain; ++i) {
      const Tokens walk = walk_chain(d.transition, d.tag(), prompt_len + response_len, rng);
      Sample s;
      s.c = d.tag();
      s.x.assign(walk.begin(), walk.begin() + prompt_len);
      s.y.assign(walk.begin() + prompt_len, walk.end());
      samples.push_back(std::move(s));
    }
    by_domain.push_back(std::move(samples));
  }
  return by_domain;
}

namespace {

// Floor + largest remainder, capped by the remaining pool per domain. When
// the uncapped allocation fits it is reproduced exactly; otherwise the
// overflow moves deterministically to the domains with spare capacity.
std::vector<int> apportion_capped(const std::vector<double>& proportions, int total,
                                  const std::vector<int>& capacity) {
  const int t = static_cast<int>(proportions.size());
  std::vector<int> counts(t);
  int assigned = 0;
  for (int d = 0; d < t; ++d) {
    const double want = proportions[d] * total;
    counts[d] = std::min(static_cast<int>(std::floor(want)), capacity[d]);
    assigned += counts[d];
  }
  while (assigned < total) {
    int best = -1;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < t; ++d) {
      if (counts[d] >= capacity[d]) continue;
      const double deficit = proportions[d] * total - counts[d];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = d;
      }
    }
    if (best < 0) {
      throw std::runtime_error("dirichlet_partition: infeasible, pools exhausted");
    }
    counts[best] += 1;
    ++assigned;
  }
  return counts;
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(const std::vector<std::vector<Sample>>& by_domain,
                                             const PartitionSpec& spec) {
  spec.validate();
  const int t = static_cast<int>(by_domain.size());
  if (t < 1) throw ConfigError("dirichlet_partition: no domains");

  long available = 0;
  std::vector<int> remaining(t);
  for (int d = 0; d < t; ++d) {
    remaining[d] = static_cast<int>(by_domain[d].size());
    available += remaining[d];
  }
  const long needed = static_cast<long>(spec.num_clients) * spec.samples_per_client;
  if (available < needed) {
    throw std::runtime_error("dirichlet_partition: infeasible, " + std::to_string(available) +
                             " samples available but " + std::to_string(needed) + " needed");
  }

  Rng rng(spec.seed);
  std::vector<int> next_index(t, 0);  // pool cursor per domain
  std::vector<ClientShard> shards;

  const auto take = [&](int client_id, std::vector<int> counts) {
    ClientShard shard;
    shard.client_id = client_id;
    long total = 0;
    for (int d = 0; d < t; ++d) {
      for (int i = 0; i < counts[d]; ++i) {
        shard.raw.push_back(by_domain[d][next_index[d]++]);
      }
      remaining[d] -= counts[d];
      total += counts[d];
    }
    shard.domain_mix = Vector::Zero(t);
    for (int d = 0; d < t; ++d) {
      shard.domain_mix[d] = static_cast<double>(counts[d]) / static_cast<double>(total);
    }
    shards.push_back(std::move(shard));
  };

  for (int k = 0; k + 1 < spec.num_clients; ++k) {
    // proportions drawn over the domains that still have samples left
    std::vector<double> p(static_cast<std::size_t>(t), 0.0);
    double total_gamma = 0.0;
    for (int d = 0; d < t; ++d) {
      if (remaining[d] > 0) {
        p[d] = rng.gamma(spec.dirichlet_alpha);
        total_gamma += p[d];
      }
    }
    for (double& v : p) v /= total_gamma;
    take(k, apportion_capped(p, spec.samples_per_client, remaining));
  }
  // the last client absorbs whatever is left so shards partition the dataset
  take(spec.num_clients - 1, remaining);
  if (shards.back().raw.empty()) {
    throw std::runtime_error("dirichlet_partition: last client received no samples");
  }
  return shards;
}

void distill_shard(const DualAdapterModel& teacher, ClientShard& shard,
                   const GenerationConfig& gen, double length_factor) {
  if (!shard.distilled.empty()) {
    throw std::runtime_error("distill_shard: refinery already run for client " +
                             std::to_string(shard.client_id));
  }
  if (!(length_factor > 0.0)) throw ConfigError("distill_shard: length_factor must be > 0");

  Rng rng(mix_seed(gen.seed, static_cast<std::uint64_t>(shard.client_id)));
  shard.distilled.reserve(shard.raw.size());
  for (const Sample& s : shard.raw) {
    Tokens prompt;
    prompt.reserve(1 + s.x.size());
    prompt.push_back(s.c);
    prompt.insert(prompt.end(), s.x.begin(), s.x.end());

    GenerationConfig cfg = gen;
    cfg.max_new_tokens =
        static_cast<int>(std::llround(static_cast<double>(s.y.size()) * length_factor));
    cfg.teacher_forcing_prefix =
        std::min(cfg.teacher_forcing_prefix, static_cast<int>(s.y.size()));

    Sample d;
    d.c = s.c;
    d.x = s.x;
    d.y = teacher.generate(prompt, cfg, s.y, rng);
    shard.distilled.push_back(std::move(d));
  }
}

DualAdapterModel make_pretrained_model(const BackboneConfig& cfg, const LoraConfig& lora,
                                       const std::vector<DomainSpec>& domains,
                                       const PretrainConfig& pre) {
  if (domains.empty()) throw ConfigError("make_pretrained_model: no domains");
  if (pre.steps < 0 || pre.batch_size < 1 || pre.corpus_per_domain < 1) {
    throw ConfigError("make_pretrained_model: bad pretrain configuration");
  }

  DualAdapterModel model(cfg, lora, mix_seed(pre.seed, 0x6d6f64656cULL));  // "model"

  // balanced position pool over the filler-boosted chains
  std::vector<Position> pool;
  for (const DomainSpec& d : domains) {
    const Matrix boosted = boosted_transition(d);
    Rng rng(mix_seed(pre.seed, 0x636f72707573ULL + static_cast<std::uint64_t>(d.domain_id)));
    for (int i = 0; i < pre.corpus_per_domain; ++i) {
      const Tokens walk =
          walk_chain(boosted, d.tag(), pre.prompt_len + pre.response_len, rng);
      Tokens x(walk.begin(), walk.begin() + pre.prompt_len);
      Tokens y(walk.begin() + pre.prompt_len, walk.end());
      expand_positions(d.tag(), x, y, cfg.context_len, pool);
    }
  }

  Rng step_rng(mix_seed(pre.seed, 0x737465707320ULL));
  std::vector<Position> batch(static_cast<std::size_t>(pre.batch_size));
  for (int step = 0; step < pre.steps; ++step) {
    for (auto& p : batch) p = pool[static_cast<std::size_t>(step_rng.uniform_int(
        static_cast<int>(pool.size())))];
    model.pretrain_step(batch, pre.lr);
  }
  model.freeze_backbone();
  return model;
}

}  // namespace fedsdr

#pragma once

#include <string>
#include <vector>

#include "fedsdr/model.hpp"
#include "fedsdr/rng.hpp"
#include "fedsdr/types.hpp"

namespace fedsdr {

// Synthetic analog of one task domain: a Markov chain over the vocabulary
// that concentrates most of each row's mass on the domain's own token block.
struct DomainSpec {
  int domain_id = 0;
  Matrix transition;          // V x V, row-stochastic
  double filler_boost = 0.0;  // extra mass moved onto the filler tokens in the
                              // backbone pre-training variant of this chain
  std::string name;

  TokenId tag() const { return static_cast<TokenId>(domain_id); }
};

// The two highest token ids act as non-informative filler tokens.
std::pair<TokenId, TokenId> filler_tokens(int vocab_size);

// Disjoint preferred blocks over the non-filler tokens; each transition row
// puts `block_mass` on the domain's own block and spreads the rest outside.
std::vector<DomainSpec> build_domains(int num_domains, int vocab_size, std::uint64_t seed,
                                      double block_mass = 0.7, double filler_boost = 0.1);

// The chain used for backbone pre-training: filler_boost mass shifted onto
// the filler tokens (the raw chain stays untouched for client data).
Matrix boosted_transition(const DomainSpec& domain);

Tokens walk_chain(const Matrix& transition, TokenId start, int length, Rng& rng);

// pi = pi * P (power iteration)
Vector stationary_distribution(const Matrix& transition);

struct Sample {
  TokenId c = 0;  // domain tag token
  Tokens x;       // prompt
  Tokens y;       // response
};

struct ClientShard {
  int client_id = 0;
  std::vector<Sample> raw;
  std::vector<Sample> distilled;  // empty until the refinery has run
  Vector domain_mix;

  long n_k() const { return static_cast<long>(raw.size()); }
};

struct PartitionSpec {
  int num_clients = 8;
  double dirichlet_alpha = 0.1;
  int samples_per_client = 40;
  std::uint64_t seed = 0;
  void validate() const;
};

std::vector<std::vector<Sample>> sample_dataset(const std::vector<DomainSpec>& domains,
                                                int per_domain, int prompt_len,
                                                int response_len, std::uint64_t seed);

// Label-skew partition: each client's domain proportions are drawn from
// Dirichlet(alpha, ..., alpha) and samples are assigned without replacement.
// Every sample ends up in exactly one shard (the last client absorbs the
// remainder so the union of shards is the whole dataset). Infeasible draws
// are redrawn up to 100 times before giving up.
std::vector<ClientShard> dirichlet_partition(const std::vector<std::vector<Sample>>& by_domain,
                                             const PartitionSpec& spec);

// Module-1 refinery: regenerate every response with the shared teacher.
// One-shot per shard; max_new_tokens is |y| * length_factor per sample and
// the per-shard RNG stream is mix_seed(gen.seed, client_id).
void distill_shard(const DualAdapterModel& teacher, ClientShard& shard,
                   const GenerationConfig& gen, double length_factor = 1.25);

struct PretrainConfig {
  int steps = 500;
  int batch_size = 32;
  double lr = 0.5;
  int corpus_per_domain = 100;
  int prompt_len = 4;
  int response_len = 8;
  std::uint64_t seed = 0;
};

// Builds the frozen teacher-ready model: seeded init, `steps` SGD steps on a
// balanced filler-boosted mixture of all domains, then freeze.
DualAdapterModel make_pretrained_model(const BackboneConfig& cfg, const LoraConfig& lora,
                                       const std::vector<DomainSpec>& domains,
                                       const PretrainConfig& pre);

}  // namespace fedsdr

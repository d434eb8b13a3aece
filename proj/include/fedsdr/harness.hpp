#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fedsdr/data.hpp"
#include "fedsdr/federation.hpp"
#include "fedsdr/io.hpp"
#include "fedsdr/model.hpp"

namespace fedsdr {

enum class TeacherRefresh { Once, PerRound };
enum class SmoothingLifecycle { Persist, Reinit };

struct DataConfig {
  int num_domains = 5;
  int prompt_len = 4;
  int response_len = 8;
  double block_mass = 0.7;
  double filler_boost = 0.1;
  int heldout_per_client = 8;
};

struct DistillConfig {
  double temperature = 1.0;
  double length_factor = 1.25;
  int teacher_forcing_prefix = 0;
};

struct ExperimentConfig {
  BackboneConfig backbone;
  LoraConfig lora;
  DataConfig data;
  PartitionSpec partition;  // seed field is derived from the run seed, not configured
  PretrainConfig pretrain;
  DistillConfig distill;
  LocalOpts local_smooth;  // stage 1 of fedsdr-dual
  LocalOpts local;         // stage 2 / single-stream training
  Strategy strategy;
  Mode mode = Mode::FedSdrDual;
  int rounds = 20;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double mixture_ratio = 0.0;  // fraction of raw supervision in fedsd-single
  TeacherRefresh teacher_refresh = TeacherRefresh::Once;
  SmoothingLifecycle smoothing_lifecycle = SmoothingLifecycle::Persist;
  int workers = 1;
  std::string out_dir;

  void validate() const;
  std::string canonical_json() const;
  std::uint64_t config_hash() const;
  std::string config_hash_hex() const { return hex64(config_hash()); }
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json_text(const ExperimentConfig& cfg, int indent = 2);

// ---------------------------------------------------------------------------
// in-memory pipeline (the CLI persists the artifacts between stages)
// ---------------------------------------------------------------------------

struct ExperimentData {
  std::vector<DomainSpec> domains;
  std::vector<Client> clients;
};

ExperimentData build_data(const ExperimentConfig& cfg, std::uint64_t run_seed);
std::vector<DomainSpec> experiment_domains(const ExperimentConfig& cfg, std::uint64_t run_seed);
DualAdapterModel build_teacher(const ExperimentConfig& cfg, std::uint64_t run_seed);
void distill_clients(const ExperimentConfig& cfg, const DualAdapterModel& teacher,
                     std::vector<Client>& clients, std::uint64_t run_seed);

struct TrainOutput {
  ServerState state;
  std::vector<RoundReport> reports;
};

using CheckpointSink = std::function<void(int round, const ServerState& state)>;
using ReportSink = std::function<void(const RoundReport& report)>;

TrainOutput train_clients(const ExperimentConfig& cfg, const DualAdapterModel& base,
                          std::vector<Client>& clients, std::uint64_t run_seed,
                          const CheckpointSink* checkpoint_sink = nullptr,
                          const ReportSink* report_sink = nullptr);

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------

struct RunArtifacts {
  std::vector<std::filesystem::path> files;
};

// corpus files: one JSON object per sample with fields
// client_id, domain, c, x, y, y_distilled (array or null)
void write_corpus(const std::filesystem::path& path, const std::vector<Client>& clients,
                  bool heldout_rows);
// fills shards (and heldout when `heldout_rows`) of a fresh client list
std::vector<Client> read_corpus(const std::filesystem::path& path, bool heldout_rows);
void read_heldout_into(const std::filesystem::path& path, std::vector<Client>& clients);

std::vector<std::uint8_t> encode_checkpoint(const ServerState& state, std::uint64_t config_hash);
ServerState decode_checkpoint(std::span<const std::uint8_t> bytes, std::uint64_t expect_hash);

std::string round_report_json(const RoundReport& report, std::uint64_t run_seed,
                              const std::string& config_hash_hex);

// ---------------------------------------------------------------------------
// CLI commands; all throw ConfigError for validation problems
// ---------------------------------------------------------------------------

RunArtifacts cmd_partition(const ExperimentConfig& cfg, std::uint64_t run_seed,
                           const std::filesystem::path& out);
RunArtifacts cmd_distill(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const std::filesystem::path& out);
RunArtifacts cmd_train(const ExperimentConfig& cfg, std::uint64_t run_seed,
                       const std::filesystem::path& out);
RunArtifacts cmd_eval(const ExperimentConfig& cfg, std::uint64_t run_seed,
                      const std::filesystem::path& out,
                      const std::filesystem::path& checkpoint = {});
RunArtifacts cmd_metrics(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const std::filesystem::path& out);
RunArtifacts cmd_reproduce(const ExperimentConfig& cfg, const std::string& suite,
                           const std::filesystem::path& out);

}  // namespace fedsdr

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fedsdr/harness.hpp"
#include "fedsdr/metrics.hpp"

namespace fedsdr {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCorpusFile = "corpus.jsonl";
constexpr const char* kHeldoutFile = "heldout.jsonl";
constexpr const char* kDistilledFile = "corpus_distilled.jsonl";
constexpr const char* kRoundsFile = "rounds.jsonl";
constexpr const char* kFinalCheckpoint = "checkpoint_final.bin";
constexpr const char* kMetricsFile = "metrics.csv";
constexpr const char* kVerdictFile = "verdict.csv";
constexpr const char* kEvalFile = "eval.csv";

fs::path require_artifact(const fs::path& out, const char* name, const char* producer) {
  const fs::path p = out / name;
  if (!fs::exists(p)) {
    throw ConfigError("missing " + p.string() + "; run `fedsdr " + std::string(producer) +
                      "` first");
  }
  return p;
}

std::string checkpoint_name(int round) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_round_%03d.bin", round);
  return buf;
}

// metrics.csv rows: metric,scope_a,scope_b,value,seed,config_hash
struct MetricsCsv {
  std::string text = "metric,scope_a,scope_b,value,seed,config_hash\n";
  std::string seed;
  std::string hash;

  void row(const std::string& metric, const std::string& a, const std::string& b, double v) {
    text += metric + "," + a + "," + b + "," + format_double(v) + "," + seed + "," + hash + "\n";
  }
};

std::vector<CorpusStats> response_stats(const std::vector<Client>& clients, bool distilled,
                                        int vocab_size) {
  std::vector<CorpusStats> stats;
  for (const Client& c : clients) {
    std::vector<Tokens> docs;
    const auto& samples = distilled ? c.shard.distilled : c.shard.raw;
    for (const Sample& s : samples) docs.push_back(s.y);
    stats.push_back(corpus_stats(docs, vocab_size));
  }
  return stats;
}

std::vector<ClientShard> shards_of(const std::vector<Client>& clients) {
  std::vector<ClientShard> shards;
  for (const Client& c : clients) shards.push_back(c.shard);
  return shards;
}

}  // namespace

RunArtifacts cmd_partition(const ExperimentConfig& cfg, std::uint64_t run_seed,
                           const fs::path& out) {
  ExperimentData data = build_data(cfg, run_seed);
  RunArtifacts artifacts;
  const fs::path corpus = out / kCorpusFile;
  const fs::path heldout = out / kHeldoutFile;
  write_corpus(corpus, data.clients, false);
  write_corpus(heldout, data.clients, true);
  artifacts.files = {corpus, heldout};
  return artifacts;
}

RunArtifacts cmd_distill(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const fs::path& out) {
  const fs::path corpus = require_artifact(out, kCorpusFile, "partition");
  std::vector<Client> clients = read_corpus(corpus, false);
  const DualAdapterModel teacher = build_teacher(cfg, run_seed);
  distill_clients(cfg, teacher, clients, run_seed);

  RunArtifacts artifacts;
  const fs::path distilled = out / kDistilledFile;
  write_corpus(distilled, clients, false);
  artifacts.files = {distilled};
  return artifacts;
}

RunArtifacts cmd_train(const ExperimentConfig& cfg, std::uint64_t run_seed,
                       const fs::path& out) {
  const bool needs_distilled = cfg.mode != Mode::BaselineRaw;
  const fs::path corpus = needs_distilled
                              ? require_artifact(out, kDistilledFile, "distill")
                              : require_artifact(out, kCorpusFile, "partition");
  std::vector<Client> clients = read_corpus(corpus, false);
  if (fs::exists(out / kHeldoutFile)) read_heldout_into(out / kHeldoutFile, clients);

  const DualAdapterModel base = build_teacher(cfg, run_seed);
  const std::uint64_t hash = cfg.config_hash();
  const std::string hash_hex = cfg.config_hash_hex();

  RunArtifacts artifacts;
  const fs::path rounds_log = out / kRoundsFile;
  fs::remove(rounds_log);  // logs are per run; stale lines would break replay

  const CheckpointSink checkpoint_sink = [&](int round, const ServerState& state) {
    const fs::path p = out / checkpoint_name(round);
    atomic_write(p, encode_checkpoint(state, hash));
    artifacts.files.push_back(p);
  };
  const ReportSink report_sink = [&](const RoundReport& report) {
    append_line(rounds_log, round_report_json(report, run_seed, hash_hex));
  };

  TrainOutput result = train_clients(cfg, base, clients, run_seed, &checkpoint_sink,
                                     &report_sink);

  const fs::path final_ckpt = out / kFinalCheckpoint;
  atomic_write(final_ckpt, encode_checkpoint(result.state, hash));
  artifacts.files.push_back(final_ckpt);
  artifacts.files.push_back(rounds_log);
  return artifacts;
}

RunArtifacts cmd_eval(const ExperimentConfig& cfg, std::uint64_t run_seed, const fs::path& out,
                      const fs::path& checkpoint) {
  const fs::path ckpt_path =
      checkpoint.empty() ? require_artifact(out, kFinalCheckpoint, "train") : checkpoint;
  if (!fs::exists(ckpt_path)) {
    throw ConfigError("checkpoint " + ckpt_path.string() + " does not exist");
  }
  const fs::path heldout_path = require_artifact(out, kHeldoutFile, "partition");

  const ServerState state = decode_checkpoint(read_binary_file(ckpt_path), cfg.config_hash());
  const std::vector<Client> held = read_corpus(heldout_path, true);
  std::vector<Sample> samples;
  for (const Client& c : held) samples.insert(samples.end(), c.heldout.begin(), c.heldout.end());
  if (samples.empty()) throw ConfigError("held-out file contains no samples");

  const DualAdapterModel base = build_teacher(cfg, run_seed);
  const HeldoutEval ev = eval_heldout(global_model(base, state), samples);

  std::cout << "round=" << state.round << " heldout_nll=" << format_double(ev.nll)
            << " heldout_acc=" << format_double(ev.accuracy) << " positions=" << ev.positions
            << "\n";

  MetricsCsv csv;
  csv.seed = std::to_string(run_seed);
  csv.hash = cfg.config_hash_hex();
  csv.row("heldout_nll", "global", "round_" + std::to_string(state.round), ev.nll);
  csv.row("heldout_accuracy", "global", "round_" + std::to_string(state.round), ev.accuracy);

  RunArtifacts artifacts;
  const fs::path eval_csv = out / kEvalFile;
  atomic_write(eval_csv, csv.text);
  artifacts.files = {eval_csv};
  return artifacts;
}

RunArtifacts cmd_metrics(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const fs::path& out) {
  const fs::path corpus = require_artifact(out, kDistilledFile, "distill");
  const std::vector<Client> clients = read_corpus(corpus, false);
  for (const Client& c : clients) {
    if (c.shard.distilled.empty()) {
      throw ConfigError("client " + std::to_string(c.id) +
                        " has no distilled responses; run `fedsdr distill` first");
    }
  }

  const int v = cfg.backbone.vocab_size;
  const auto raw_stats = response_stats(clients, false, v);
  const auto dist_stats = response_stats(clients, true, v);

  MetricsCsv csv;
  csv.seed = std::to_string(run_seed);
  csv.hash = cfg.config_hash_hex();

  for (std::size_t i = 0; i < clients.size(); ++i) {
    for (std::size_t j = i + 1; j < clients.size(); ++j) {
      const std::string a = "client_" + std::to_string(clients[i].id);
      const std::string b = "client_" + std::to_string(clients[j].id);
      csv.row("js_divergence_raw", a, b, js_divergence(raw_stats[i], raw_stats[j]));
      csv.row("js_divergence_distilled", a, b, js_divergence(dist_stats[i], dist_stats[j]));
      csv.row("tfidf_cosine_raw", a, b, tfidf_cosine(raw_stats[i], raw_stats[j], raw_stats));
      csv.row("tfidf_cosine_distilled", a, b,
              tfidf_cosine(dist_stats[i], dist_stats[j], dist_stats));
    }
  }
  csv.row("mean_pairwise_js", "raw", "raw", mean_pairwise_js(raw_stats));
  csv.row("mean_pairwise_js", "distilled", "distilled", mean_pairwise_js(dist_stats));
  csv.row("mean_pairwise_tfidf_cosine", "raw", "raw", mean_pairwise_tfidf_cosine(raw_stats));
  csv.row("mean_pairwise_tfidf_cosine", "distilled", "distilled",
          mean_pairwise_tfidf_cosine(dist_stats));

  const auto domains = experiment_domains(cfg, run_seed);
  const ParadoxStats paradox = paradox_stats(shards_of(clients), domains);
  csv.row("halluc_rate", "distilled", "-", paradox.halluc_rate);
  csv.row("halluc_rate", "raw", "-", paradox.halluc_rate_raw);
  csv.row("mean_response_length", "raw", "-", paradox.mean_len_raw);
  csv.row("mean_response_length", "distilled", "-", paradox.mean_len_distilled);
  csv.row("filler_frequency", "raw", "-", paradox.filler_freq_raw);
  csv.row("filler_frequency", "distilled", "-", paradox.filler_freq_distilled);

  RunArtifacts artifacts;
  const fs::path metrics_csv = out / kMetricsFile;
  atomic_write(metrics_csv, csv.text);
  artifacts.files = {metrics_csv};
  return artifacts;
}

// ---------------------------------------------------------------------------
// reproduce suites
// ---------------------------------------------------------------------------

namespace {

// Desk-scale reproduction profile. The config defaults mirror the full-scale
// setup, whose per-step learning rate is far too small to move this tiny
// model at all; the suites pin fixture-scaled training steps and
// response-anchored distillation so the mechanisms under test are measurable.
ExperimentConfig reproduction_profile(ExperimentConfig cfg) {
  cfg.local.lr = 0.08;
  cfg.local_smooth.lr = 0.08;
  cfg.distill.teacher_forcing_prefix = 4;
  return cfg;
}

struct VerdictCsv {
  std::string text = "suite,criterion,expectation,measured,verdict,seeds,config_hash\n";
  std::string hash;

  void row(const std::string& suite, const std::string& criterion,
           const std::string& expectation, const std::string& measured, bool pass,
           const std::string& seeds) {
    text += suite + "," + criterion + "," + expectation + "," + measured + "," +
            (pass ? "pass" : "fail") + "," + seeds + "," + hash + "\n";
  }
};

int pass_threshold(int n_seeds) {
  // "in >= 4 of 5 seeds" generalized: ceil(0.8 * n)
  return (4 * n_seeds + 4) / 5;
}

std::string frac(int ok, int n) { return std::to_string(ok) + "/" + std::to_string(n); }

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void run_table1(const ExperimentConfig& cfg, VerdictCsv& csv) {
  const int n = static_cast<int>(cfg.seeds.size());
  int js_ok = 0;
  int cos_ok = 0;
  std::vector<double> js_raw_v, js_dist_v, cos_raw_v, cos_dist_v;

  for (const std::uint64_t seed : cfg.seeds) {
    ExperimentData data = build_data(cfg, seed);
    const DualAdapterModel teacher = build_teacher(cfg, seed);
    distill_clients(cfg, teacher, data.clients, seed);

    const auto raw_stats = response_stats(data.clients, false, cfg.backbone.vocab_size);
    const auto dist_stats = response_stats(data.clients, true, cfg.backbone.vocab_size);
    const double js_raw = mean_pairwise_js(raw_stats);
    const double js_dist = mean_pairwise_js(dist_stats);
    const double cos_raw = mean_pairwise_tfidf_cosine(raw_stats);
    const double cos_dist = mean_pairwise_tfidf_cosine(dist_stats);
    js_raw_v.push_back(js_raw);
    js_dist_v.push_back(js_dist);
    cos_raw_v.push_back(cos_raw);
    cos_dist_v.push_back(cos_dist);
    if (js_dist < js_raw) ++js_ok;
    if (cos_dist > cos_raw) ++cos_ok;

    csv.row("table1-direction", "js_divergence_seed" + std::to_string(seed), "raw>distilled",
            format_double(js_raw) + "->" + format_double(js_dist), js_dist < js_raw, "1");
    csv.row("table1-direction", "tfidf_cosine_seed" + std::to_string(seed), "distilled>raw",
            format_double(cos_raw) + "->" + format_double(cos_dist), cos_dist > cos_raw, "1");
  }
  csv.row("table1-direction", "js_divergence", "raw>distilled",
          format_double(mean_of(js_raw_v)) + "->" + format_double(mean_of(js_dist_v)),
          js_ok >= pass_threshold(n), frac(js_ok, n));
  csv.row("table1-direction", "tfidf_cosine", "distilled>raw",
          format_double(mean_of(cos_raw_v)) + "->" + format_double(mean_of(cos_dist_v)),
          cos_ok >= pass_threshold(n), frac(cos_ok, n));
}

struct TaskData {
  std::vector<TaskBatch> raw;
  std::vector<TaskBatch> distilled;
};

TaskData build_task_batches(const ExperimentConfig& cfg, const DualAdapterModel& teacher,
                            std::uint64_t seed) {
  const auto domains = experiment_domains(cfg, seed);
  const int per_domain = 30;
  const int train_count = 20;
  const auto by_domain = sample_dataset(domains, per_domain, cfg.data.prompt_len,
                                        cfg.data.response_len, mix_seed(seed, 0x5442ULL));

  GenerationConfig gen;
  gen.temperature = cfg.distill.temperature;
  gen.teacher_forcing_prefix = cfg.distill.teacher_forcing_prefix;
  gen.seed = mix_seed(seed, 0x5443ULL);

  TaskData tasks;
  const int l = cfg.backbone.context_len;
  for (const DomainSpec& d : domains) {
    ClientShard shard;
    shard.client_id = d.domain_id;
    shard.raw = by_domain[static_cast<std::size_t>(d.domain_id)];
    distill_shard(teacher, shard, gen, cfg.distill.length_factor);

    TaskBatch raw_task;
    TaskBatch dist_task;
    raw_task.label = d.name;
    dist_task.label = d.name;
    for (int i = 0; i < per_domain; ++i) {
      const Sample& r = shard.raw[static_cast<std::size_t>(i)];
      const Sample& t = shard.distilled[static_cast<std::size_t>(i)];
      auto& raw_dest = i < train_count ? raw_task.train : raw_task.eval;
      auto& dist_dest = i < train_count ? dist_task.train : dist_task.eval;
      expand_positions(r.c, r.x, r.y, l, raw_dest);
      expand_positions(t.c, t.x, t.y, l, dist_dest);
    }
    tasks.raw.push_back(std::move(raw_task));
    tasks.distilled.push_back(std::move(dist_task));
  }
  return tasks;
}

void run_table2(const ExperimentConfig& cfg, VerdictCsv& csv) {
  const int n = static_cast<int>(cfg.seeds.size());
  int gc_ok = 0;
  int lt_ok = 0;
  std::vector<double> gc_raw_v, gc_dist_v, lt_raw_v, lt_dist_v;

  for (const std::uint64_t seed : cfg.seeds) {
    const DualAdapterModel teacher = build_teacher(cfg, seed);
    const TaskData tasks = build_task_batches(cfg, teacher, seed);

    // Gradients are probed at a mid-training global model rather than at the
    // teacher itself: at the exact teacher, temperature-1 distilled targets
    // are samples of the measurement model's own conditional and the expected
    // gradient degenerates to zero. A few rounds of raw federated training
    // give the drifted state that Table 2's question is about.
    ExperimentConfig warm_cfg = cfg;
    warm_cfg.mode = Mode::BaselineRaw;
    warm_cfg.rounds = std::min(cfg.rounds, 10);
    ExperimentData warm = build_data(warm_cfg, seed);
    const TrainOutput warmup = train_clients(warm_cfg, teacher, warm.clients, seed);
    const DualAdapterModel probe_model = global_model(teacher, warmup.state);

    const double gc_raw = mean_off_diagonal(grad_cosine_matrix(probe_model, tasks.raw).values);
    const double gc_dist =
        mean_off_diagonal(grad_cosine_matrix(probe_model, tasks.distilled).values);

    SgdOpts probe;  // short, fixed probe; the diagnostic's own instrument
    probe.epochs = 1;
    probe.batch_size = 8;
    probe.lr = 0.01;
    const double lt_raw = mean_off_diagonal(
        loss_transfer_matrix(probe_model, tasks.raw, probe, mix_seed(seed, 0x5444ULL)).values);
    const double lt_dist = mean_off_diagonal(
        loss_transfer_matrix(probe_model, tasks.distilled, probe, mix_seed(seed, 0x5444ULL))
            .values);

    gc_raw_v.push_back(gc_raw);
    gc_dist_v.push_back(gc_dist);
    lt_raw_v.push_back(lt_raw);
    lt_dist_v.push_back(lt_dist);
    if (gc_dist > gc_raw) ++gc_ok;
    if (lt_dist <= lt_raw) ++lt_ok;

    csv.row("table2-direction", "grad_cosine_seed" + std::to_string(seed), "distilled>raw",
            format_double(gc_raw) + "->" + format_double(gc_dist), gc_dist > gc_raw, "1");
    csv.row("table2-direction", "loss_transfer_seed" + std::to_string(seed), "distilled<=raw",
            format_double(lt_raw) + "->" + format_double(lt_dist), lt_dist <= lt_raw, "1");
  }
  csv.row("table2-direction", "grad_cosine", "distilled>raw",
          format_double(mean_of(gc_raw_v)) + "->" + format_double(mean_of(gc_dist_v)),
          gc_ok >= pass_threshold(n), frac(gc_ok, n));
  csv.row("table2-direction", "loss_transfer", "distilled<=raw",
          format_double(mean_of(lt_raw_v)) + "->" + format_double(mean_of(lt_dist_v)),
          lt_ok >= pass_threshold(n), frac(lt_ok, n));
}

double final_heldout_nll(const ExperimentConfig& cfg, std::uint64_t seed) {
  ExperimentData data = build_data(cfg, seed);
  const DualAdapterModel teacher = build_teacher(cfg, seed);
  if (cfg.mode != Mode::BaselineRaw) distill_clients(cfg, teacher, data.clients, seed);
  const TrainOutput out = train_clients(cfg, teacher, data.clients, seed);
  if (out.reports.empty()) throw std::runtime_error("reproduce: rounds must be > 0");
  return out.reports.back().heldout_nll;
}

void run_hetero_sweep(const ExperimentConfig& cfg, VerdictCsv& csv) {
  const std::vector<double> alphas = {0.1, 0.5, 1.0};
  std::vector<double> gaps;

  for (const double alpha : alphas) {
    std::vector<double> gap_v;
    for (const std::uint64_t seed : cfg.seeds) {
      ExperimentConfig base_cfg = cfg;
      base_cfg.partition.dirichlet_alpha = alpha;
      base_cfg.mode = Mode::BaselineRaw;
      ExperimentConfig sd_cfg = base_cfg;
      sd_cfg.mode = Mode::FedSdSingle;

      const double nll_base = final_heldout_nll(base_cfg, seed);
      const double nll_sd = final_heldout_nll(sd_cfg, seed);
      gap_v.push_back(nll_base - nll_sd);
    }
    const double gap = mean_of(gap_v);
    gaps.push_back(gap);
    csv.row("hetero-sweep", "nll_improvement_alpha" + format_double(alpha),
            "fedsd_gap_over_baseline", format_double(gap), true,
            std::to_string(cfg.seeds.size()));
  }
  const bool monotone = gaps[0] >= gaps[1] && gaps[1] >= gaps[2];
  csv.row("hetero-sweep", "gap_trend", "monotone(0.1>=0.5>=1.0)",
          "0.1:" + format_double(gaps[0]) + " 0.5:" + format_double(gaps[1]) +
              " 1.0:" + format_double(gaps[2]),
          monotone, std::to_string(cfg.seeds.size()));
}

void run_fedsd_vs_baseline(const ExperimentConfig& cfg, VerdictCsv& csv) {
  const int n = static_cast<int>(cfg.seeds.size());
  int ok = 0;
  std::vector<double> gap_v;
  for (const std::uint64_t seed : cfg.seeds) {
    ExperimentConfig base_cfg = cfg;
    base_cfg.mode = Mode::BaselineRaw;
    ExperimentConfig sd_cfg = cfg;
    sd_cfg.mode = Mode::FedSdSingle;
    const double nll_base = final_heldout_nll(base_cfg, seed);
    const double nll_sd = final_heldout_nll(sd_cfg, seed);
    gap_v.push_back(nll_base - nll_sd);
    if (nll_sd < nll_base) ++ok;
    csv.row("fedsd-vs-baseline", "heldout_nll_seed" + std::to_string(seed), "fedsd<baseline",
            format_double(nll_base) + "->" + format_double(nll_sd), nll_sd < nll_base, "1");
  }
  // seed-averaged verdict; per-seed rows above carry the spread
  csv.row("fedsd-vs-baseline", "heldout_nll", "fedsd<baseline",
          "mean_gap=" + format_double(mean_of(gap_v)), mean_of(gap_v) > 0.0, frac(ok, n));
}

void run_paradox(const ExperimentConfig& cfg, VerdictCsv& csv) {
  const int n = static_cast<int>(cfg.seeds.size());
  int len_ok = 0;
  int filler_ok = 0;
  std::vector<double> len_ratio_v, filler_ratio_v, halluc_v;

  for (const std::uint64_t seed : cfg.seeds) {
    ExperimentData data = build_data(cfg, seed);
    const DualAdapterModel teacher = build_teacher(cfg, seed);
    distill_clients(cfg, teacher, data.clients, seed);
    const ParadoxStats stats = paradox_stats(shards_of(data.clients), data.domains);

    const double len_ratio = stats.mean_len_distilled / stats.mean_len_raw;
    const double filler_ratio =
        stats.filler_freq_raw > 0.0 ? stats.filler_freq_distilled / stats.filler_freq_raw
                                    : (stats.filler_freq_distilled > 0.0 ? HUGE_VAL : 1.0);
    len_ratio_v.push_back(len_ratio);
    filler_ratio_v.push_back(filler_ratio);
    halluc_v.push_back(stats.halluc_rate);
    if (len_ratio > 1.0) ++len_ok;
    if (stats.filler_freq_distilled > stats.filler_freq_raw) ++filler_ok;

    csv.row("paradox", "length_ratio_seed" + std::to_string(seed), "distilled>raw",
            format_double(len_ratio), len_ratio > 1.0, "1");
    csv.row("paradox", "filler_ratio_seed" + std::to_string(seed), "distilled>raw",
            format_double(filler_ratio), stats.filler_freq_distilled > stats.filler_freq_raw,
            "1");
    csv.row("paradox", "halluc_rate_seed" + std::to_string(seed), "reported",
            format_double(stats.halluc_rate) + " (raw " + format_double(stats.halluc_rate_raw) +
                ")",
            true, "1");
  }
  csv.row("paradox", "length_ratio", "distilled>raw", format_double(mean_of(len_ratio_v)),
          len_ok >= pass_threshold(n), frac(len_ok, n));
  csv.row("paradox", "filler_ratio", "distilled>raw", format_double(mean_of(filler_ratio_v)),
          filler_ok >= pass_threshold(n), frac(filler_ok, n));
}

}  // namespace

RunArtifacts cmd_reproduce(const ExperimentConfig& cfg, const std::string& suite,
                           const fs::path& out) {
  const ExperimentConfig scaled = reproduction_profile(cfg);
  VerdictCsv csv;
  csv.hash = scaled.config_hash_hex();

  bool known = false;
  if (suite == "table1-direction" || suite == "all") {
    run_table1(scaled, csv);
    known = true;
  }
  if (suite == "table2-direction" || suite == "all") {
    run_table2(scaled, csv);
    known = true;
  }
  if (suite == "hetero-sweep" || suite == "all") {
    run_hetero_sweep(scaled, csv);
    known = true;
  }
  if (suite == "fedsd-vs-baseline" || suite == "all") {
    run_fedsd_vs_baseline(scaled, csv);
    known = true;
  }
  if (suite == "paradox" || suite == "all") {
    run_paradox(scaled, csv);
    known = true;
  }
  if (!known) {
    throw ConfigError("unknown reproduce suite '" + suite +
                      "' (expected table1-direction, table2-direction, hetero-sweep, "
                      "fedsd-vs-baseline, paradox, or all)");
  }

  RunArtifacts artifacts;
  const fs::path verdict = out / kVerdictFile;
  atomic_write(verdict, csv.text);
  artifacts.files = {verdict};
  return artifacts;
}

}  // namespace fedsdr

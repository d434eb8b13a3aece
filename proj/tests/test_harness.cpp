#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "fedsdr/harness.hpp"
#include "fedsdr/metrics.hpp"
#include "test_util.hpp"

using namespace fedsdr;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "backbone": {"vocab_size": 16, "context_len": 4, "embed_dim": 5, "hidden_dim": 8},
  "lora": {"rank": 3, "alpha": 6.0},
  "data": {"num_domains": 3, "prompt_len": 2, "response_len": 5, "heldout_per_client": 2},
  "partition": {"num_clients": 3, "samples_per_client": 10, "dirichlet_alpha": 0.5},
  "pretrain": {"steps": 60, "batch_size": 16, "corpus_per_domain": 30},
  "local_smooth": {"epochs": 1, "batch_size": 4, "lr": 0.01},
  "local": {"epochs": 1, "batch_size": 4, "lr": 0.01},
  "rounds": 3,
  "seeds": [7]
})";

ExperimentConfig tiny_config() { return config_from_json_text(kTinyConfig); }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedsdr_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

void run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out) {
  cmd_partition(cfg, seed, out);
  cmd_distill(cfg, seed, out);
  cmd_train(cfg, seed, out);
  cmd_eval(cfg, seed, out);
  cmd_metrics(cfg, seed, out);
}

}  // namespace

TEST_CASE("empty config object yields the full default configuration") {
  const ExperimentConfig cfg = config_from_json_text("{}");
  CHECK(cfg.partition.num_clients == 8);
  CHECK(cfg.rounds == 20);
  CHECK(cfg.local.epochs == 3);
  CHECK(cfg.local.batch_size == 8);
  CHECK(cfg.local.lr == 3e-4);
  CHECK(cfg.lora.rank == 8);
  CHECK(cfg.lora.alpha == 16.0);
  CHECK(cfg.data.num_domains == 5);
  CHECK(cfg.backbone.vocab_size == 32);
  CHECK(cfg.partition.dirichlet_alpha == 0.1);
  CHECK(cfg.mode == Mode::FedSdrDual);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(cfg.teacher_refresh == TeacherRefresh::Once);
  CHECK(cfg.smoothing_lifecycle == SmoothingLifecycle::Persist);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"local": {"epohcs": 3}})"); }, "config.local"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"local": {"epohcs": 3}})"); }, "epohcs"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"rounnds": 3})"); }, "rounnds"));
}

TEST_CASE("invalid values are rejected with a named field") {
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"rounds": -1})"); }, "rounds"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"backbone": {"vocab_size": 2}})"); }, "vocab_size"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"mixture_ratio": 1.5})"); }, "mixture_ratio"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"mode": "sideways"})"); }, "sideways"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text("{nope"); }, "invalid JSON"));
  CHECK(throws_with_substring<ConfigError>(
      [] { config_from_json_text(R"({"local": {"epochs": "three"}})"); }, "config.local"));
}

TEST_CASE("config save/load round-trips with an identical hash") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy.kind = Strategy::Kind::FedAdam;
  cfg.mixture_ratio = 0.25;
  const std::string text = config_to_json_text(cfg);
  const ExperimentConfig back = config_from_json_text(text);
  CHECK(back.canonical_json() == cfg.canonical_json());
  CHECK(back.config_hash() == cfg.config_hash());

  // hash ignores out_dir and workers, but not substantive fields
  ExperimentConfig moved = cfg;
  moved.out_dir = "/elsewhere";
  moved.workers = 8;
  CHECK(moved.config_hash() == cfg.config_hash());
  ExperimentConfig different = cfg;
  different.rounds += 1;
  CHECK(different.config_hash() != cfg.config_hash());
}

TEST_CASE("corpus files round-trip through JSON lines") {
  const ExperimentConfig cfg = tiny_config();
  ExperimentData data = build_data(cfg, 7);
  const DualAdapterModel teacher = build_teacher(cfg, 7);
  distill_clients(cfg, teacher, data.clients, 7);

  const fs::path dir = fresh_dir("corpus_roundtrip");
  write_corpus(dir / "c.jsonl", data.clients, false);
  write_corpus(dir / "h.jsonl", data.clients, true);

  std::vector<Client> back = read_corpus(dir / "c.jsonl", false);
  read_heldout_into(dir / "h.jsonl", back);
  REQUIRE(back.size() == data.clients.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    const Client& a = data.clients[i];
    const Client& b = back[i];
    CHECK(a.id == b.id);
    REQUIRE(a.shard.raw.size() == b.shard.raw.size());
    REQUIRE(a.shard.distilled.size() == b.shard.distilled.size());
    REQUIRE(a.heldout.size() == b.heldout.size());
    for (std::size_t j = 0; j < a.shard.raw.size(); ++j) {
      CHECK(a.shard.raw[j].c == b.shard.raw[j].c);
      CHECK(a.shard.raw[j].x == b.shard.raw[j].x);
      CHECK(a.shard.raw[j].y == b.shard.raw[j].y);
      CHECK(a.shard.distilled[j].y == b.shard.distilled[j].y);
    }
    for (std::size_t j = 0; j < a.heldout.size(); ++j) {
      CHECK(a.heldout[j].y == b.heldout[j].y);
    }
  }
}

TEST_CASE("checkpoints round-trip and validate the config hash") {
  const ExperimentConfig cfg = tiny_config();
  const DualAdapterModel base = build_teacher(cfg, 7);
  ServerState st = make_server_state(base, Mode::FedSdrDual);
  st.round = 5;
  st.m[3] = 0.25;

  const auto bytes = encode_checkpoint(st, cfg.config_hash());
  const ServerState back = decode_checkpoint(bytes, cfg.config_hash());
  CHECK(back.round == 5);
  CHECK((back.global_r - st.global_r).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.m[3] == 0.25);
  CHECK(back.global_s.size() == 0);

  CHECK(throws_with_substring<std::runtime_error>(
      [&] { decode_checkpoint(bytes, cfg.config_hash() + 1); }, "hash"));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated, cfg.config_hash()), std::runtime_error);
}

TEST_CASE("pipeline artifacts are byte-identical across reruns and worker counts") {
  const ExperimentConfig cfg = tiny_config();
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  run_pipeline(cfg, 7, a);
  run_pipeline(cfg, 7, b);

  ExperimentConfig pooled = tiny_config();
  pooled.workers = 2;
  const fs::path c = fresh_dir("det_c");
  run_pipeline(pooled, 7, c);

  for (const char* name : {"corpus.jsonl", "heldout.jsonl", "corpus_distilled.jsonl",
                           "rounds.jsonl", "metrics.csv", "eval.csv"}) {
    CAPTURE(name);
    CHECK(slurp(a / name) == slurp(b / name));
    CHECK(slurp(a / name) == slurp(c / name));
  }
  CHECK(read_binary_file(a / "checkpoint_final.bin") ==
        read_binary_file(b / "checkpoint_final.bin"));
  CHECK(read_binary_file(a / "checkpoint_final.bin") ==
        read_binary_file(c / "checkpoint_final.bin"));

  // a different seed must actually change the data
  const fs::path d = fresh_dir("det_d");
  run_pipeline(cfg, 8, d);
  CHECK(slurp(a / "corpus.jsonl") != slurp(d / "corpus.jsonl"));
}

TEST_CASE("zero rounds trains nothing: checkpoint equals initialization") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 0;
  const fs::path dir = fresh_dir("zero_rounds");
  cmd_partition(cfg, 7, dir);
  cmd_distill(cfg, 7, dir);
  cmd_train(cfg, 7, dir);

  const DualAdapterModel base = build_teacher(cfg, 7);
  const auto expect = encode_checkpoint(make_server_state(base, cfg.mode), cfg.config_hash());
  CHECK(read_binary_file(dir / "checkpoint_final.bin") == expect);
}

TEST_CASE("mid-run checkpoints replay exactly") {
  const ExperimentConfig cfg = tiny_config();  // rounds = 3
  const fs::path dir = fresh_dir("replay");
  cmd_partition(cfg, 7, dir);
  cmd_distill(cfg, 7, dir);
  cmd_train(cfg, 7, dir);

  // replaying the first two rounds from scratch reproduces checkpoint_round_001
  ExperimentConfig shorter = cfg;
  shorter.rounds = 2;
  std::vector<Client> clients = read_corpus(dir / "corpus_distilled.jsonl", false);
  read_heldout_into(dir / "heldout.jsonl", clients);
  const DualAdapterModel base = build_teacher(shorter, 7);
  const TrainOutput replay = train_clients(shorter, base, clients, 7);

  // checkpoints embed the config hash, which differs between rounds=3 and rounds=2;
  // compare the state payloads beyond the hash field instead
  const auto stored = read_binary_file(dir / "checkpoint_round_001.bin");
  const auto replayed = encode_checkpoint(replay.state, cfg.config_hash());
  CHECK(stored == replayed);

  // and eval on the stored checkpoint equals eval on the replayed state
  const ServerState loaded = decode_checkpoint(stored, cfg.config_hash());
  std::vector<Sample> heldout;
  for (const Client& c : clients) heldout.insert(heldout.end(), c.heldout.begin(), c.heldout.end());
  const HeldoutEval from_stored = eval_heldout(global_model(base, loaded), heldout);
  const HeldoutEval from_replay = eval_heldout(global_model(base, replay.state), heldout);
  CHECK(from_stored.nll == from_replay.nll);
  CHECK(from_stored.accuracy == from_replay.accuracy);
}

TEST_CASE("missing upstream artifacts name the producing command") {
  const ExperimentConfig cfg = tiny_config();
  const fs::path dir = fresh_dir("missing");
  CHECK(throws_with_substring<ConfigError>([&] { cmd_distill(cfg, 7, dir); },
                                           "fedsdr partition"));
  CHECK(throws_with_substring<ConfigError>([&] { cmd_train(cfg, 7, dir); }, "fedsdr distill"));
  CHECK(throws_with_substring<ConfigError>([&] { cmd_eval(cfg, 7, dir); }, "fedsdr train"));
  CHECK(throws_with_substring<ConfigError>([&] { cmd_metrics(cfg, 7, dir); },
                                           "fedsdr distill"));

  ExperimentConfig raw_cfg = cfg;
  raw_cfg.mode = Mode::BaselineRaw;
  CHECK(throws_with_substring<ConfigError>([&] { cmd_train(raw_cfg, 7, dir); },
                                           "fedsdr partition"));
}

TEST_CASE("metrics csv carries the format and stamps the config hash") {
  const ExperimentConfig cfg = tiny_config();
  const fs::path dir = fresh_dir("metrics_csv");
  cmd_partition(cfg, 7, dir);
  cmd_distill(cfg, 7, dir);
  cmd_metrics(cfg, 7, dir);

  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(csv.rfind("metric,scope_a,scope_b,value,seed,config_hash\n", 0) == 0);
  CHECK(csv.find("mean_pairwise_js,raw,raw,") != std::string::npos);
  CHECK(csv.find("mean_pairwise_js,distilled,distilled,") != std::string::npos);
  CHECK(csv.find("filler_frequency,distilled,-,") != std::string::npos);
  CHECK(csv.find(cfg.config_hash_hex()) != std::string::npos);
  CHECK(csv.find(",7," + cfg.config_hash_hex()) != std::string::npos);
}

TEST_CASE("per-round teacher refresh re-distills with the current global model") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 2;
  cfg.teacher_refresh = TeacherRefresh::PerRound;
  ExperimentData data = build_data(cfg, 7);
  const DualAdapterModel teacher = build_teacher(cfg, 7);
  distill_clients(cfg, teacher, data.clients, 7);
  const Tokens before = data.clients[0].shard.distilled[0].y;

  const TrainOutput out = train_clients(cfg, teacher, data.clients, 7);
  CHECK(out.reports.size() == 2);
  // after round 1 the refinery ran again with a fresh stream
  bool changed = false;
  for (const Client& c : data.clients) {
    for (std::size_t i = 0; i < c.shard.distilled.size(); ++i) {
      if (c.shard.distilled[i].y != before) changed = true;
      break;
    }
  }
  CHECK(changed);
}

TEST_CASE("reproduce paradox suite emits a verdict csv") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {7};
  const fs::path dir = fresh_dir("verdict");
  cmd_reproduce(cfg, "paradox", dir);
  const std::string csv = slurp(dir / "verdict.csv");
  CHECK(csv.rfind("suite,criterion,expectation,measured,verdict,seeds,config_hash\n", 0) == 0);
  CHECK(csv.find("paradox,length_ratio,distilled>raw,") != std::string::npos);
  CHECK(csv.find("paradox,filler_ratio,distilled>raw,") != std::string::npos);

  CHECK(throws_with_substring<ConfigError>([&] { cmd_reproduce(cfg, "nope", dir); },
                                           "unknown reproduce suite"));
}

TEST_CASE("cli binary maps error classes to exit codes") {
  const fs::path dir = fresh_dir("cli");
  const std::string bin = FEDSDR_BIN;
  const fs::path cfg_path = dir / "cfg.json";
  atomic_write(cfg_path, std::string(kTinyConfig));

  const auto run = [&](const std::string& args) {
    const std::string cmd = "env -u FEDSDR_OUT " + bin + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  // validation failure: distill before partition
  CHECK(run("distill --config " + cfg_path.string() + " --out " + dir.string()) == 1);
  // happy path
  CHECK(run("partition --config " + cfg_path.string() + " --out " + dir.string()) == 0);
  CHECK(run("distill --config " + cfg_path.string() + " --out " + dir.string()) == 0);
  CHECK(run("train --config " + cfg_path.string() + " --out " + dir.string()) == 0);
  CHECK(run("eval --config " + cfg_path.string() + " --out " + dir.string()) == 0);
  CHECK(run("metrics --config " + cfg_path.string() + " --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "metrics.csv"));

  // corrupt checkpoint: runtime error -> exit 2
  atomic_write(dir / "checkpoint_final.bin", std::string("FSDCgarbage"));
  CHECK(run("eval --config " + cfg_path.string() + " --out " + dir.string()) == 2);

  // bad config json -> exit 1
  atomic_write(cfg_path, std::string("{broken"));
  CHECK(run("partition --config " + cfg_path.string() + " --out " + dir.string()) == 1);

  // no output dir anywhere -> exit 1 (FEDSDR_OUT cleared for the child)
  CHECK(run("partition") == 1);
}

TEST_CASE("round report json lines are stable and carry the hash") {
  RoundReport report;
  report.round = 2;
  report.weighted_nll = 1.5;
  report.heldout_nll = 2.25;
  report.heldout_acc = 0.5;
  RoundClientStats cs;
  cs.client_id = 1;
  cs.n_k = 10;
  cs.stage1_nll = 0.5;
  cs.stage2_nll = 0.25;
  cs.payload_bytes = 100;
  report.clients = {cs};
  const std::string line = round_report_json(report, 7, "abcd");
  CHECK(line.find("\"round\":2") != std::string::npos);
  CHECK(line.find("\"config_hash\":\"abcd\"") != std::string::npos);
  CHECK(line.find("\"payload_bytes\":100") != std::string::npos);
  CHECK(line == round_report_json(report, 7, "abcd"));
}

TEST_CASE("FEDSDR_OUT is honored as the output-directory fallback") {
  const fs::path dir = fresh_dir("env_out");
  const fs::path cfg_path = dir / "cfg.json";
  atomic_write(cfg_path, std::string(kTinyConfig));
  const std::string bin = FEDSDR_BIN;
  const std::string cmd = "FEDSDR_OUT=" + dir.string() + " " + bin + " partition --config " +
                          cfg_path.string() + " > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::exists(dir / "corpus.jsonl"));
}

TEST_CASE("fedsdr-dual weighted NLL is non-increasing late in training at the defaults") {
  // 20 rounds, K=8, default configuration; 0.02 noise tolerance
  const ExperimentConfig cfg = config_from_json_text("{}");
  ExperimentData data = build_data(cfg, 0);
  const DualAdapterModel teacher = build_teacher(cfg, 0);
  distill_clients(cfg, teacher, data.clients, 0);
  const TrainOutput out = train_clients(cfg, teacher, data.clients, 0);
  REQUIRE(out.reports.size() == 20);
  for (std::size_t t = 10; t + 1 < out.reports.size(); ++t) {
    CHECK(out.reports[t + 1].weighted_nll <= out.reports[t].weighted_nll + 0.02);
  }
}

TEST_CASE("corrupt corpus rows are reported with the line number") {
  const fs::path dir = fresh_dir("corrupt_corpus");
  atomic_write(dir / "c.jsonl",
               std::string(R"({"client_id":0,"domain":0,"c":0,"x":[],"y":[1],"y_distilled":null})"
                           "\n{\"client_id\":0,\"domain\":0}\n"));
  CHECK(throws_with_substring<std::runtime_error>([&] { read_corpus(dir / "c.jsonl", false); },
                                                  ":2:"));
  atomic_write(dir / "bad.jsonl", std::string("not json\n"));
  CHECK(throws_with_substring<std::runtime_error>(
      [&] { read_corpus(dir / "bad.jsonl", false); }, ":1:"));
}

TEST_CASE("fedprox strategy applies its proximal weight client-side") {
  ExperimentConfig avg = tiny_config();
  avg.mode = Mode::FedSdSingle;
  ExperimentConfig prox = avg;
  prox.strategy.kind = Strategy::Kind::FedProx;
  prox.strategy.mu = 5.0;

  const auto run = [](const ExperimentConfig& cfg) {
    ExperimentData data = build_data(cfg, 7);
    const DualAdapterModel teacher = build_teacher(cfg, 7);
    distill_clients(cfg, teacher, data.clients, 7);
    return train_clients(cfg, teacher, data.clients, 7).state.global_r;
  };
  const Vector g_avg = run(avg);
  const Vector g_prox = run(prox);
  CHECK((g_avg - g_prox).cwiseAbs().maxCoeff() > 0.0);
  // the proximal pull keeps the aggregate closer to the initialization
  const Vector init = build_teacher(avg, 7).stream_params(Stream::R);
  CHECK((g_prox - init).norm() < (g_avg - init).norm());
}

TEST_CASE("every aggregation strategy trains end to end") {
  for (const char* name :
       {"fedavg", "fedavgm", "fedprox", "fedadam", "fedyogi", "fedadagrad"}) {
    CAPTURE(name);
    ExperimentConfig cfg = tiny_config();
    cfg.rounds = 2;
    cfg.strategy.kind = strategy_kind_from_string(name);
    ExperimentData data = build_data(cfg, 11);
    const DualAdapterModel teacher = build_teacher(cfg, 11);
    distill_clients(cfg, teacher, data.clients, 11);
    const TrainOutput out = train_clients(cfg, teacher, data.clients, 11);
    REQUIRE(out.reports.size() == 2);
    CHECK(std::isfinite(out.reports.back().weighted_nll));
    CHECK(std::isfinite(out.reports.back().heldout_nll));
    CHECK(out.state.round == 2);
    CHECK(out.state.global_r.size() == teacher.stream_param_count());
  }
}

TEST_CASE("every mode trains end to end") {
  for (const char* name : {"baseline-raw", "fedsd-single", "fedsdr-dual", "dual-upload"}) {
    CAPTURE(name);
    ExperimentConfig cfg = tiny_config();
    cfg.rounds = 2;
    cfg.mode = mode_from_string(name);
    ExperimentData data = build_data(cfg, 13);
    const DualAdapterModel teacher = build_teacher(cfg, 13);
    if (cfg.mode != Mode::BaselineRaw) distill_clients(cfg, teacher, data.clients, 13);
    const TrainOutput out = train_clients(cfg, teacher, data.clients, 13);
    CHECK(out.state.round == 2);
    CHECK(std::isfinite(out.reports.back().heldout_nll));
    const bool wants_global_s = cfg.mode == Mode::DualUpload;
    CHECK((out.state.global_s.size() > 0) == wants_global_s);
  }
}

TEST_CASE("eval accepts an explicit mid-run checkpoint") {
  const ExperimentConfig cfg = tiny_config();
  const fs::path dir = fresh_dir("eval_ckpt");
  cmd_partition(cfg, 7, dir);
  cmd_distill(cfg, 7, dir);
  cmd_train(cfg, 7, dir);
  const RunArtifacts arts = cmd_eval(cfg, 7, dir, dir / "checkpoint_round_000.bin");
  CHECK(fs::exists(arts.files.front()));
  const std::string csv = slurp(dir / "eval.csv");
  CHECK(csv.find("round_1") != std::string::npos);  // state after round 0 has round == 1
}

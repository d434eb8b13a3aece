#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedsdr/data.hpp"
#include "fedsdr/model.hpp"
#include "fedsdr/train.hpp"

namespace fedsdr {

// Unigram statistics of one client's corpus (per-client document = all
// responses concatenated).
struct CorpusStats {
  Vector counts;  // size V
  long total = 0;
};

CorpusStats corpus_stats(std::span<const Tokens> docs, int vocab_size);

// Jensen-Shannon divergence (log base 2, additive smoothing) in [0, 1].
double js_divergence(const CorpusStats& a, const CorpusStats& b, double smoothing = 1e-9);

// Cosine similarity of tf-idf weighted document vectors; idf uses document
// frequencies over every client in `context` (which must include a and b).
double tfidf_cosine(const CorpusStats& a, const CorpusStats& b,
                    std::span<const CorpusStats> context);

double mean_pairwise_js(std::span<const CorpusStats> stats);
double mean_pairwise_tfidf_cosine(std::span<const CorpusStats> stats);

struct AlignmentMatrix {
  enum class Kind { GradCosine, LossTransfer };
  Matrix values;
  Kind kind = Kind::GradCosine;
  std::vector<std::string> labels;
};

double mean_off_diagonal(const Matrix& m);

struct TaskBatch {
  std::string label;
  std::vector<Position> train;
  std::vector<Position> eval;  // loss_transfer targets; grad_cosine ignores it
};

// entry (i, j) = cosine of the mean per-task gradients over the trainable
// streams; the model itself is left untouched.
AlignmentMatrix grad_cosine_matrix(const DualAdapterModel& model,
                                   std::span<const TaskBatch> tasks);

enum class TransferKind { Relative, Absolute };

// entry (i, j): change of task j's eval loss after a short probe training
// run on task i, as % of the pre-probe loss (Relative) or in nats (Absolute).
// The probe always starts from the same model state.
AlignmentMatrix loss_transfer_matrix(const DualAdapterModel& model,
                                     std::span<const TaskBatch> tasks, const SgdOpts& probe,
                                     std::uint64_t seed,
                                     TransferKind kind = TransferKind::Relative);

// Rewrite-Paradox statistics. Hallucination analog: a response counts as
// hallucinated when fewer than half of its bigrams fall inside the source
// domain's top-90%-mass bigram set.
struct ParadoxStats {
  double halluc_rate = 0.0;      // over distilled responses
  double halluc_rate_raw = 0.0;  // same rule applied to the raw responses
  double mean_len_raw = 0.0;
  double mean_len_distilled = 0.0;
  double filler_freq_raw = 0.0;
  double filler_freq_distilled = 0.0;
};

ParadoxStats paradox_stats(std::span<const ClientShard> shards,
                           std::span<const DomainSpec> domains);

struct HeldoutEval {
  double nll = 0.0;
  double accuracy = 0.0;
  long positions = 0;
};

// Teacher-forced evaluation against the raw (ground-truth) responses.
HeldoutEval eval_heldout(const DualAdapterModel& model, std::span<const Sample> heldout);

}  // namespace fedsdr

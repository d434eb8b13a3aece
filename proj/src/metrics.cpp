#include "fedsdr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedsdr {

CorpusStats corpus_stats(std::span<const Tokens> docs, int vocab_size) {
  CorpusStats stats;
  stats.counts = Vector::Zero(vocab_size);
  for (const Tokens& doc : docs) {
    for (TokenId t : doc) {
      if (t < 0 || t >= vocab_size) {
        throw std::out_of_range("corpus_stats: token id " + std::to_string(t) +
                                " outside vocab");
      }
      stats.counts[t] += 1.0;
      ++stats.total;
    }
  }
  return stats;
}

namespace {

double log2_ratio_term(double p, double m) {
  if (p <= 0.0) return 0.0;
  return p * std::log2(p / m);
}

}  // namespace

double js_divergence(const CorpusStats& a, const CorpusStats& b, double smoothing) {
  if (a.total == 0 || b.total == 0) {
    throw std::invalid_argument("js_divergence: empty corpus");
  }
  if (a.counts.size() != b.counts.size()) {
    throw std::invalid_argument("js_divergence: vocab size mismatch");
  }
  const Eigen::Index v = a.counts.size();

  double jsd = 0.0;
  const double za = static_cast<double>(a.total) + smoothing * static_cast<double>(v);
  const double zb = static_cast<double>(b.total) + smoothing * static_cast<double>(v);
  for (Eigen::Index i = 0; i < v; ++i) {
    const double p = (a.counts[i] + smoothing) / za;
    const double q = (b.counts[i] + smoothing) / zb;
    const double m = 0.5 * (p + q);
    jsd += 0.5 * log2_ratio_term(p, m) + 0.5 * log2_ratio_term(q, m);
  }
  return jsd;
}

double tfidf_cosine(const CorpusStats& a, const CorpusStats& b,
                    std::span<const CorpusStats> context) {
  if (context.size() < 2) {
    throw std::invalid_argument("tfidf_cosine: idf needs at least 2 documents in context");
  }
  const Eigen::Index v = a.counts.size();
  const double n_docs = static_cast<double>(context.size());

  Vector idf(v);
  for (Eigen::Index i = 0; i < v; ++i) {
    double df = 0.0;
    for (const CorpusStats& doc : context) {
      if (doc.counts[i] > 0.0) df += 1.0;
    }
    idf[i] = std::log((1.0 + n_docs) / (1.0 + df)) + 1.0;
  }

  const auto weighted = [&](const CorpusStats& s) -> Vector {
    if (s.total == 0) return Vector::Zero(v);
    return (s.counts / static_cast<double>(s.total)).cwiseProduct(idf);
  };
  const Vector wa = weighted(a);
  const Vector wb = weighted(b);
  const double norm = wa.norm() * wb.norm();
  if (norm == 0.0) return 0.0;
  return wa.dot(wb) / norm;
}

double mean_pairwise_js(std::span<const CorpusStats> stats) {
  double total = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    for (std::size_t j = i + 1; j < stats.size(); ++j) {
      total += js_divergence(stats[i], stats[j]);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

double mean_pairwise_tfidf_cosine(std::span<const CorpusStats> stats) {
  double total = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    for (std::size_t j = i + 1; j < stats.size(); ++j) {
      total += tfidf_cosine(stats[i], stats[j], stats);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

double mean_off_diagonal(const Matrix& m) {
  double total = 0.0;
  long n = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i == j) continue;
      total += m(i, j);
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

namespace {

Vector mean_task_gradient(DualAdapterModel& model, const TaskBatch& task) {
  if (task.train.empty()) {
    throw std::invalid_argument("grad_cosine_matrix: empty batch for task " + task.label);
  }
  model.zero_grads();
  for (const Position& p : task.train) model.forward_backward(p.context, p.target);
  const double inv = 1.0 / static_cast<double>(task.train.size());

  Vector g;
  const bool r = stream_trainable(model.trainable(), Stream::R);
  const bool s = stream_trainable(model.trainable(), Stream::S);
  if (r && s) {
    const Vector gr = model.stream_grads(Stream::R);
    const Vector gs = model.stream_grads(Stream::S);
    g.resize(gr.size() + gs.size());
    g << gr, gs;
  } else if (r) {
    g = model.stream_grads(Stream::R);
  } else if (s) {
    g = model.stream_grads(Stream::S);
  } else {
    throw std::invalid_argument("grad_cosine_matrix: no trainable stream");
  }
  g *= inv;
  if (g.norm() == 0.0) {
    throw std::runtime_error("grad_cosine_matrix: zero gradient for task " + task.label);
  }
  return g;
}

}  // namespace

AlignmentMatrix grad_cosine_matrix(const DualAdapterModel& model,
                                   std::span<const TaskBatch> tasks) {
  if (tasks.empty()) throw std::invalid_argument("grad_cosine_matrix: no tasks");
  DualAdapterModel work = model;  // gradient buffers are scratch space

  std::vector<Vector> grads;
  AlignmentMatrix out;
  out.kind = AlignmentMatrix::Kind::GradCosine;
  for (const TaskBatch& t : tasks) {
    grads.push_back(mean_task_gradient(work, t));
    out.labels.push_back(t.label);
  }
  const auto n = static_cast<Eigen::Index>(tasks.size());
  out.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out.values(i, j) = grads[i].dot(grads[j]) / (grads[i].norm() * grads[j].norm());
    }
  }
  return out;
}

AlignmentMatrix loss_transfer_matrix(const DualAdapterModel& model,
                                     std::span<const TaskBatch> tasks, const SgdOpts& probe,
                                     std::uint64_t seed, TransferKind kind) {
  if (tasks.size() < 2) throw std::invalid_argument("loss_transfer_matrix: need >= 2 tasks");

  const auto eval_task = [](const DualAdapterModel& m, const TaskBatch& t) {
    if (t.eval.empty()) {
      throw std::invalid_argument("loss_transfer_matrix: empty eval batch for task " + t.label);
    }
    double loss = 0.0;
    for (const Position& p : t.eval) loss += m.forward_nll(p.context, p.target);
    loss /= static_cast<double>(t.eval.size());
    if (!std::isfinite(loss)) {
      throw std::runtime_error("loss_transfer_matrix: non-finite loss on task " + t.label);
    }
    return loss;
  };

  const auto n = static_cast<Eigen::Index>(tasks.size());
  std::vector<double> before;
  for (const TaskBatch& t : tasks) before.push_back(eval_task(model, t));

  AlignmentMatrix out;
  out.kind = AlignmentMatrix::Kind::LossTransfer;
  out.values.resize(n, n);
  for (const TaskBatch& t : tasks) out.labels.push_back(t.label);

  for (Eigen::Index i = 0; i < n; ++i) {
    DualAdapterModel probe_model = model;  // restored implicitly per source task
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    if (probe.epochs > 0) {
      sgd_train(probe_model, tasks[i].train, probe, rng);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double after = eval_task(probe_model, tasks[j]);
      const double delta = after - before[static_cast<std::size_t>(j)];
      out.values(i, j) = (kind == TransferKind::Relative)
                             ? 100.0 * delta / before[static_cast<std::size_t>(j)]
                             : delta;
    }
  }
  return out;
}

namespace {

// smallest bigram set covering `mass` of the chain's stationary bigram
// distribution, as a boolean matrix
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> top_bigram_set(const DomainSpec& domain,
                                                                   double mass) {
  const Matrix& p = domain.transition;
  const Eigen::Index v = p.rows();
  const Vector pi = stationary_distribution(p);

  std::vector<std::pair<double, std::pair<int, int>>> bigrams;
  bigrams.reserve(static_cast<std::size_t>(v * v));
  for (Eigen::Index u = 0; u < v; ++u) {
    for (Eigen::Index w = 0; w < v; ++w) {
      bigrams.push_back({pi[u] * p(u, w), {static_cast<int>(u), static_cast<int>(w)}});
    }
  }
  std::sort(bigrams.begin(), bigrams.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> keep(v, v);
  keep.setConstant(false);
  double acc = 0.0;
  for (const auto& [prob, uv] : bigrams) {
    if (acc >= mass) break;
    keep(uv.first, uv.second) = true;
    acc += prob;
  }
  return keep;
}

double bigram_overlap(const Tokens& response,
                      const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& keep) {
  if (response.size() < 2) return 1.0;  // no bigrams, nothing to violate
  long inside = 0;
  for (std::size_t i = 0; i + 1 < response.size(); ++i) {
    if (keep(response[i], response[i + 1])) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(response.size() - 1);
}

}  // namespace

ParadoxStats paradox_stats(std::span<const ClientShard> shards,
                           std::span<const DomainSpec> domains) {
  if (shards.empty()) throw std::invalid_argument("paradox_stats: no shards");
  for (const ClientShard& s : shards) {
    if (s.distilled.size() != s.raw.size()) {
      throw std::runtime_error("paradox_stats: refinery has not run for client " +
                               std::to_string(s.client_id));
    }
  }
  const int v = static_cast<int>(domains.front().transition.rows());
  const auto [f0, f1] = filler_tokens(v);

  std::vector<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>> keep;
  keep.reserve(domains.size());
  for (const DomainSpec& d : domains) keep.push_back(top_bigram_set(d, 0.9));

  long n_raw_halluc = 0;
  long n_dist_halluc = 0;
  long n_responses = 0;
  double len_raw = 0.0;
  double len_dist = 0.0;
  long filler_raw = 0;
  long tok_raw = 0;
  long filler_dist = 0;
  long tok_dist = 0;

  for (const ClientShard& shard : shards) {
    for (std::size_t i = 0; i < shard.raw.size(); ++i) {
      const Sample& r = shard.raw[i];
      const Sample& d = shard.distilled[i];
      const auto& domain_keep = keep[static_cast<std::size_t>(r.c)];

      if (bigram_overlap(r.y, domain_keep) < 0.5) ++n_raw_halluc;
      if (bigram_overlap(d.y, domain_keep) < 0.5) ++n_dist_halluc;
      ++n_responses;

      len_raw += static_cast<double>(r.y.size());
      len_dist += static_cast<double>(d.y.size());
      for (TokenId tk : r.y) {
        ++tok_raw;
        if (tk == f0 || tk == f1) ++filler_raw;
      }
      for (TokenId tk : d.y) {
        ++tok_dist;
        if (tk == f0 || tk == f1) ++filler_dist;
      }
    }
  }

  ParadoxStats out;
  out.halluc_rate = static_cast<double>(n_dist_halluc) / static_cast<double>(n_responses);
  out.halluc_rate_raw = static_cast<double>(n_raw_halluc) / static_cast<double>(n_responses);
  out.mean_len_raw = len_raw / static_cast<double>(n_responses);
  out.mean_len_distilled = len_dist / static_cast<double>(n_responses);
  out.filler_freq_raw =
      tok_raw == 0 ? 0.0 : static_cast<double>(filler_raw) / static_cast<double>(tok_raw);
  out.filler_freq_distilled =
      tok_dist == 0 ? 0.0 : static_cast<double>(filler_dist) / static_cast<double>(tok_dist);
  return out;
}

HeldoutEval eval_heldout(const DualAdapterModel& model, std::span<const Sample> heldout) {
  if (heldout.empty()) throw std::invalid_argument("eval_heldout: empty held-out set");
  std::vector<Position> positions;
  for (const Sample& s : heldout) {
    expand_positions(s.c, s.x, s.y, model.config().context_len, positions);
  }

  HeldoutEval out;
  out.positions = static_cast<long>(positions.size());
  long correct = 0;
  for (const Position& p : positions) {
    const Vector z = model.logits(p.context);
    out.nll += softmax_cross_entropy(z, p.target).loss;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < z.size(); ++i) {
      if (z[i] > z[best]) best = i;
    }
    if (static_cast<TokenId>(best) == p.target) ++correct;
  }
  out.nll /= static_cast<double>(positions.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(positions.size());
  return out;
}

}  // namespace fedsdr

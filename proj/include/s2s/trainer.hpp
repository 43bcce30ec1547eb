#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s/beam.hpp"
#include "s2s/bleu.hpp"
#include "s2s/corpus.hpp"
#include "s2s/model.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

// Adam with bias correction and a fixed learning rate, global-norm gradient
// clipping, a deterministic step-indexed training loop, binary checkpoints,
// and validation-BLEU checkpoint selection.

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <class S>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ParameterStore<S>& store, AdamConfig cfg = AdamConfig())
      : cfg_(cfg) {
    cfg_.validate();
    names_.reserve(store.count());
    for (size_t i = 0; i < store.count(); ++i) {
      const Parameter<S>& p = store.at(i);
      names_.push_back(p.name);
      m_.emplace_back(p.value.size(), S(0));
      v_.emplace_back(p.value.size(), S(0));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long long step_count() const { return t_; }
  size_t entries() const { return names_.size(); }
  const std::string& name(size_t i) const { return names_.at(i); }
  const std::vector<S>& moment1(size_t i) const { return m_.at(i); }
  const std::vector<S>& moment2(size_t i) const { return v_.at(i); }

  // One update from explicitly keyed gradients.  Every parameter must have a
  // gradient of matching shape; extra keys are ignored.
  void update(ParameterStore<S>& store, const std::map<std::string, Tensor<S>>& grads) {
    check_keying(store);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < store.count(); ++i) {
      Parameter<S>& p = store.at(i);
      auto it = grads.find(p.name);
      if (it == grads.end()) {
        throw std::invalid_argument("adam_update: missing gradient key " + p.name);
      }
      if (it->second.shape() != p.value.shape()) {
        throw std::invalid_argument("adam_update: gradient shape mismatch for " + p.name);
      }
      const std::vector<S>& g = it->second.values();
      std::vector<S>& value = p.value.values_mut();
      std::vector<S>& m = m_[i];
      std::vector<S>& v = v_[i];
      for (size_t k = 0; k < value.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
        const double vk =
            cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<S>(mk);
        v[k] = static_cast<S>(vk);
        const double m_hat = mk / bc1;
        const double v_hat = vk / bc2;
        value[k] = static_cast<S>(static_cast<double>(value[k]) -
                                  cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  // One update from the gradients accumulated in the store itself.
  void update(ParameterStore<S>& store) { update(store, store.gradients()); }

  // Checkpoint restore; moment sizes must match the optimizer's parameters.
  void restore(long long t, std::vector<std::vector<S>> m, std::vector<std::vector<S>> v) {
    if (t < 0) throw std::invalid_argument("AdamOptimizer::restore: negative step count");
    if (m.size() != names_.size() || v.size() != names_.size()) {
      throw std::invalid_argument("AdamOptimizer::restore: entry count mismatch");
    }
    for (size_t i = 0; i < names_.size(); ++i) {
      if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
        throw std::invalid_argument("AdamOptimizer::restore: moment size mismatch for " +
                                    names_[i]);
      }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  void check_keying(const ParameterStore<S>& store) const {
    if (store.count() != names_.size()) {
      throw std::invalid_argument("adam_update: parameter count changed under the optimizer");
    }
    for (size_t i = 0; i < store.count(); ++i) {
      const Parameter<S>& p = store.at(i);
      if (p.name != names_[i] || p.value.size() != m_[i].size()) {
        throw std::invalid_argument("adam_update: parameter " + p.name +
                                    " does not match the optimizer state");
      }
    }
  }

  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<S>> m_;
  std::vector<std::vector<S>> v_;
};

// Euclidean norm over every gradient element in the store.
template <class S>
double global_grad_norm(const ParameterStore<S>& store) {
  double sq = 0.0;
  for (size_t i = 0; i < store.count(); ++i) {
    for (S g : store.at(i).grad.values()) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(sq);
}

// Scales gradients so the global norm does not exceed max_norm; returns the
// pre-clip norm.  An infinite threshold (or a norm already within it) leaves
// every gradient bit untouched.
template <class S>
double clip_gradients(ParameterStore<S>& store, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  const double norm = global_grad_norm(store);
  if (!std::isfinite(max_norm) || norm <= max_norm) return norm;
  const double scale = max_norm / norm;
  for (size_t i = 0; i < store.count(); ++i) {
    for (S& g : store.at(i).grad.values_mut()) {
      g = static_cast<S>(static_cast<double>(g) * scale);
    }
  }
  return norm;
}

struct TrainSchedule {
  int batch_size = 32;
  long long max_steps = 0;         // required: > 0
  long long checkpoint_every = 0;  // required: > 0
  double clip_norm = 5.0;          // global-norm threshold; +infinity disables
  AdamConfig adam;

  const ParallelCorpus* validation = nullptr;  // enables val loss/ppl/BLEU
  int val_batch_size = 32;
  int val_beam_width = 1;  // 1 = greedy decode during training
  double val_beam_alpha = 0.0;
  int val_max_length = 100;

  void validate() const;
};

// Raised when training hits a non-finite loss or gradient.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long long step, const std::string& message)
      : std::runtime_error(message), step_(step) {}
  long long step() const { return step_; }

 private:
  long long step_;
};

struct CheckpointMetrics {
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_ppl = std::numeric_limits<double>::quiet_NaN();
  double val_bleu = std::numeric_limits<double>::quiet_NaN();
};

struct CheckpointInfo {
  std::string path;
  long long step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();  // window mean
  CheckpointMetrics metrics;
};

struct TrainResult {
  std::vector<CheckpointInfo> checkpoints;
  std::string log_path;
  long long steps_run = 0;
};

// Highest validation BLEU; ties go to the earliest step.  Throws
// std::invalid_argument when no checkpoint carries a BLEU score.
const CheckpointInfo& select_best_checkpoint(const std::vector<CheckpointInfo>& checkpoints);

struct CheckpointHeader {
  long long step = 0;
  std::uint64_t config_digest = 0;
  int scalar_bytes = 0;
  bool has_optimizer = false;
  CheckpointMetrics metrics;
};

// Header fields of a checkpoint file without loading tensors.
CheckpointHeader peek_checkpoint(const std::string& path);

namespace ckpt_detail {

inline constexpr char kMagic[4] = {'S', '2', 'S', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kTrailer = 0x45533253u;  // "S2SE"

template <class T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return value;
}

inline void write_string(std::ofstream& out, const std::string& s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& in, const std::string& path) {
  const auto len = read_pod<std::uint32_t>(in, path);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: corrupt name in " + path);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return s;
}

template <class S>
void write_values(std::ofstream& out, const std::vector<S>& values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(S)));
}

template <class S>
void read_values(std::ifstream& in, std::vector<S>& values, const std::string& path) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(S)));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
}

CheckpointHeader read_header(std::ifstream& in, const std::string& path);

}  // namespace ckpt_detail

// Atomically writes parameters, optional optimizer state, step, metrics,
// and the owning config's digest.  Values are raw little-endian scalars in
// the store's precision, so a reload is bit-identical.
template <class S>
void save_checkpoint(const std::string& path, const ParameterStore<S>& store,
                     const AdamOptimizer<S>* opt, long long step,
                     std::uint64_t config_digest, const CheckpointMetrics& metrics) {
  namespace d = ckpt_detail;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
    out.write(d::kMagic, 4);
    d::write_pod(out, d::kVersion);
    d::write_pod(out, static_cast<std::uint32_t>(sizeof(S)));
    d::write_pod(out, config_digest);
    d::write_pod(out, static_cast<std::int64_t>(step));
    d::write_pod(out, metrics.val_loss);
    d::write_pod(out, metrics.val_ppl);
    d::write_pod(out, metrics.val_bleu);
    d::write_pod(out, static_cast<std::uint8_t>(opt != nullptr ? 1 : 0));
    if (opt != nullptr) {
      d::write_pod(out, opt->config().lr);
      d::write_pod(out, opt->config().beta1);
      d::write_pod(out, opt->config().beta2);
      d::write_pod(out, opt->config().eps);
      d::write_pod(out, static_cast<std::int64_t>(opt->step_count()));
    }
    d::write_pod(out, static_cast<std::uint32_t>(store.count()));
    for (size_t i = 0; i < store.count(); ++i) {
      const Parameter<S>& p = store.at(i);
      d::write_string(out, p.name);
      const Shape& shape = p.value.shape();
      d::write_pod(out, static_cast<std::uint32_t>(shape.size()));
      for (int dim : shape) d::write_pod(out, static_cast<std::int64_t>(dim));
      d::write_values(out, p.value.values());
      if (opt != nullptr) {
        d::write_values(out, opt->moment1(i));
        d::write_values(out, opt->moment2(i));
      }
    }
    d::write_pod(out, d::kTrailer);
    if (!out) throw std::runtime_error("checkpoint: write failed on " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("checkpoint: cannot rename " + tmp + " to " + path);
  }
}

// Loads a checkpoint into `store` (names, shapes, and precision must match)
// and, when `opt` is non-null, restores the optimizer state saved with it.
// The file's config digest must equal `expected_digest`.
template <class S>
CheckpointHeader load_checkpoint(const std::string& path, ParameterStore<S>& store,
                                 AdamOptimizer<S>* opt, std::uint64_t expected_digest) {
  namespace d = ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  const CheckpointHeader header = d::read_header(in, path);
  if (header.scalar_bytes != static_cast<int>(sizeof(S))) {
    throw std::runtime_error("checkpoint: " + path + " stores " +
                             std::to_string(header.scalar_bytes * 8) +
                             "-bit scalars, expected " + std::to_string(sizeof(S) * 8));
  }
  if (header.config_digest != expected_digest) {
    throw std::runtime_error("checkpoint: " + path + " belongs to a different config");
  }
  if (opt != nullptr && !header.has_optimizer) {
    throw std::runtime_error("checkpoint: " + path + " carries no optimizer state");
  }

  AdamConfig adam;
  long long adam_t = 0;
  if (header.has_optimizer) {
    adam.lr = d::read_pod<double>(in, path);
    adam.beta1 = d::read_pod<double>(in, path);
    adam.beta2 = d::read_pod<double>(in, path);
    adam.eps = d::read_pod<double>(in, path);
    adam_t = d::read_pod<std::int64_t>(in, path);
  }

  const auto n = d::read_pod<std::uint32_t>(in, path);
  if (n != store.count()) {
    throw std::runtime_error("checkpoint: " + path + " has " + std::to_string(n) +
                             " parameters, the model has " + std::to_string(store.count()));
  }
  std::vector<std::vector<S>> m(store.count()), v(store.count());
  std::vector<bool> seen(store.count(), false);
  for (std::uint32_t e = 0; e < n; ++e) {
    const std::string name = d::read_string(in, path);
    const auto ndim = d::read_pod<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      shape.push_back(static_cast<int>(d::read_pod<std::int64_t>(in, path)));
    }
    Parameter<S>* p = store.find(name);
    if (p == nullptr) {
      throw std::runtime_error("checkpoint: " + path + " has unknown parameter " + name);
    }
    if (p->value.shape() != shape) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path);
    }
    size_t index = 0;
    while (&store.at(index) != p) ++index;
    if (seen[index]) {
      throw std::runtime_error("checkpoint: duplicate parameter " + name + " in " + path);
    }
    seen[index] = true;
    d::read_values(in, p->value.values_mut(), path);
    if (header.has_optimizer) {
      m[index].resize(p->value.size());
      v[index].resize(p->value.size());
      d::read_values(in, m[index], path);
      d::read_values(in, v[index], path);
    }
  }
  if (d::read_pod<std::uint32_t>(in, path) != d::kTrailer) {
    throw std::runtime_error("checkpoint: bad trailer in " + path);
  }
  if (opt != nullptr) {
    AdamOptimizer<S> restored(store, adam);
    restored.restore(adam_t, std::move(m), std::move(v));
    *opt = std::move(restored);
  }
  return header;
}

// Mean per-token NLL over a corpus (dropout off).
template <class S>
double validation_loss(const Model<S>& model, const ParallelCorpus& val, int batch_size) {
  if (val.empty()) throw std::invalid_argument("validation_loss: empty corpus");
  Rng order_rng(0);  // batch order does not affect the token-weighted mean
  Rng drop_rng(0);   // dropout is inactive outside training
  double total = 0.0;
  long long tokens = 0;
  for (const Batch& b : make_batches(val, batch_size, order_rng)) {
    long long batch_tokens = 0;
    for (int len : b.tgt.lengths()) batch_tokens += len;
    const Tensor<S> loss = model.sequence_nll(b.src, b.tgt, false, drop_rng);
    total += static_cast<double>(loss.scalar()) * static_cast<double>(batch_tokens);
    tokens += batch_tokens;
  }
  return total / static_cast<double>(tokens);
}

// Corpus BLEU of decodes against the target side.  Ids are compared as
// tokens; EOS is stripped from hypotheses.
template <class S>
double validation_bleu(const Model<S>& model, const ParallelCorpus& val, int beam_width,
                       double alpha, int max_length) {
  if (val.empty()) throw std::invalid_argument("validation_bleu: empty corpus");
  auto render = [](const std::vector<int>& ids) {
    std::string line;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i > 0) line += ' ';
      line += std::to_string(ids[i]);
    }
    return line;
  };
  std::vector<std::string> hyps, refs;
  hyps.reserve(val.size());
  refs.reserve(val.size());
  for (const SentencePair& p : val.pairs()) {
    std::vector<int> tokens;
    if (beam_width <= 1) {
      tokens = greedy_decode(model, with_eos(p.src), max_length).tokens;
    } else {
      BeamConfig cfg;
      cfg.width = beam_width;
      cfg.alpha = alpha;
      cfg.max_length = max_length;
      tokens = beam_decode(model, with_eos(p.src), cfg).best.tokens;
    }
    if (!tokens.empty() && tokens.back() == kEos) tokens.pop_back();
    hyps.push_back(render(tokens));
    refs.push_back(render(p.tgt));
  }
  return corpus_bleu(hyps, refs).bleu;
}

// Step-indexed training loop.  Batch order is a function of (seed, epoch)
// and dropout of (seed, step), so resuming from a checkpoint replays the
// exact stream an uninterrupted run would have seen.  Appends one CSV row
// per checkpoint to out_dir/train_log.csv.
template <class S>
TrainResult train(Model<S>& model, const ParallelCorpus& corpus, const TrainSchedule& sched,
                  std::uint64_t seed, const std::string& out_dir,
                  const std::string& resume_from = std::string()) {
  sched.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");

  AdamOptimizer<S> opt(model.store(), sched.adam);
  long long start_step = 0;
  if (!resume_from.empty()) {
    const CheckpointHeader header =
        load_checkpoint(resume_from, model.store(), &opt, model.config().digest());
    start_step = header.step;
  }

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.log_path = out_dir + "/train_log.csv";
  {
    const bool fresh = !std::filesystem::exists(result.log_path) ||
                       std::filesystem::file_size(result.log_path) == 0;
    std::ofstream log(result.log_path, std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open " + result.log_path);
    if (fresh) log << "step,train_loss,val_loss,val_ppl,val_bleu\n";
  }

  const long long per_epoch = batches_per_epoch(corpus, sched.batch_size);
  std::vector<Batch> batches;
  long long cached_epoch = -1;
  double window_sum = 0.0;
  long long window_n = 0;

  for (long long step = start_step; step < sched.max_steps; ++step) {
    const long long epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      Rng shuffle_rng(mix64(seed, mix64(0x65706f6368ull, static_cast<std::uint64_t>(epoch))));
      batches = make_batches(corpus, sched.batch_size, shuffle_rng);
      cached_epoch = epoch;
    }
    const Batch& b = batches[static_cast<size_t>(step % per_epoch)];
    Rng drop_rng(mix64(seed, mix64(0x64726f70ull, static_cast<std::uint64_t>(step))));

    double loss_value = 0.0;
    {
      Tape<S> tape;
      typename Tape<S>::Scope scope(tape);
      const Tensor<S> loss = model.sequence_nll(b.src, b.tgt, true, drop_rng);
      loss_value = static_cast<double>(loss.scalar());
      if (!std::isfinite(loss_value)) {
        throw TrainingDiverged(step, "training diverged at step " + std::to_string(step) +
                                         ": loss is not finite");
      }
      model.store().zero_grads();
      tape.backward(loss, model.store());
    }
    const double norm = clip_gradients(model.store(), sched.clip_norm);
    if (!std::isfinite(norm)) {
      throw TrainingDiverged(step, "training diverged at step " + std::to_string(step) +
                                       ": gradient norm is not finite");
    }
    opt.update(model.store());
    window_sum += loss_value;
    ++window_n;

    const long long done = step + 1;
    if (done % sched.checkpoint_every == 0 || done == sched.max_steps) {
      CheckpointMetrics metrics;
      if (sched.validation != nullptr && !sched.validation->empty()) {
        metrics.val_loss = validation_loss(model, *sched.validation, sched.val_batch_size);
        metrics.val_ppl = std::exp(metrics.val_loss);
        metrics.val_bleu = validation_bleu(model, *sched.validation, sched.val_beam_width,
                                           sched.val_beam_alpha, sched.val_max_length);
      }
      CheckpointInfo info;
      info.path = out_dir + "/checkpoint-" + std::to_string(done) + ".bin";
      info.step = done;
      info.train_loss = window_sum / static_cast<double>(window_n);
      info.metrics = metrics;
      save_checkpoint(info.path, model.store(), &opt, done, model.config().digest(), metrics);

      std::ofstream log(result.log_path, std::ios::app);
      if (!log) throw std::runtime_error("train: cannot open " + result.log_path);
      char row[256];
      std::snprintf(row, sizeof(row), "%lld,%.6f,%.6f,%.6f,%.4f\n", done, info.train_loss,
                    metrics.val_loss, metrics.val_ppl, metrics.val_bleu);
      log << row;

      result.checkpoints.push_back(std::move(info));
      window_sum = 0.0;
      window_n = 0;
    }
  }
  result.steps_run = sched.max_steps - start_step;
  return result;
}

}  // namespace s2s

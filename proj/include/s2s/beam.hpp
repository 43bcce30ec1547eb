#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s/model.hpp"
#include "s2s/tokens.hpp"

namespace s2s {

struct BeamConfig {
  int width = 10;
  double alpha = 0.6;  // length-penalty exponent
  int max_length = 100;

  void validate() const {
    if (width < 1) throw std::invalid_argument("beam: width must be >= 1");
    if (max_length < 1) throw std::invalid_argument("beam: max length must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("beam: length-penalty alpha must be >= 0");
  }
};

// GNMT length penalty lp(Y) = ((5 + |Y|) / 6)^alpha; score = logP / lp.
inline double length_penalty(int length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

struct BeamHypo {
  std::vector<int> tokens;  // ends with EOS
  double logp = 0.0;
  double score = 0.0;  // logp / lp(|tokens|)
};

struct BeamResult {
  BeamHypo best;
  std::vector<BeamHypo> nbest;  // sorted by score desc, up to `width` entries
};

namespace beam_detail {

inline bool better(const BeamHypo& a, const BeamHypo& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace beam_detail

// Beam search over an abstract one-token stepper.
//
// `step(state, prev_token)` must return {logprobs over vocab, next_state};
// the root call receives `sos`. Live and finished hypotheses share the B
// slots (live capacity = B - #finished), so width 1 reduces to greedy
// decoding exactly. Live hypotheses are pruned by cumulative log-probability
// and finished ones ranked by normalized score; ties break toward the
// lexicographically smaller token sequence. A hypothesis reaching
// max_length - 1 generated tokens is force-finished by extending with EOS
// (at its true log-probability), keeping every result EOS-terminated.
template <class State, class StepFn>
BeamResult beam_search(State init, int sos, int eos, int vocab, StepFn&& step,
                       const BeamConfig& cfg) {
  cfg.validate();
  if (eos < 0 || eos >= vocab) throw std::invalid_argument("beam: eos id outside vocab");

  struct Live {
    std::vector<int> tokens;
    double logp = 0.0;
    State state;
  };
  std::vector<Live> live;
  live.push_back(Live{{}, 0.0, std::move(init)});
  std::vector<BeamHypo> finished;

  for (int t = 1; !live.empty(); ++t) {
    int cap = cfg.width - static_cast<int>(finished.size());
    if (cap <= 0) break;

    if (!finished.empty()) {
      double best_fin = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_fin = std::max(best_fin, f.score);
      // Optimistic bound: logp only decreases, lp(len) peaks at max_length.
      double bound = -std::numeric_limits<double>::infinity();
      double lp_max = length_penalty(cfg.max_length, cfg.alpha);
      for (const auto& h : live) bound = std::max(bound, h.logp / lp_max);
      if (bound < best_fin) break;
    }

    struct Cand {
      double logp;
      int parent;
      int tok;
    };
    std::vector<Cand> cands;
    std::vector<State> next_states;
    next_states.reserve(live.size());

    for (size_t p = 0; p < live.size(); ++p) {
      auto [dist, next] = step(live[p].state, live[p].tokens.empty() ? sos : live[p].tokens.back());
      if (static_cast<int>(dist.size()) != vocab)
        throw std::invalid_argument("beam: stepper returned " + std::to_string(dist.size()) +
                                    " log-probs for vocab " + std::to_string(vocab));
      next_states.push_back(std::move(next));
      if (t == cfg.max_length) {
        cands.push_back(Cand{live[p].logp + dist[static_cast<size_t>(eos)],
                             static_cast<int>(p), eos});
        continue;
      }
      // Only a hypothesis's own top-`cap` extensions can reach the global
      // top `cap`; select those instead of sorting all of V.
      std::vector<int> idx(static_cast<size_t>(vocab));
      for (int v = 0; v < vocab; ++v) idx[static_cast<size_t>(v)] = v;
      size_t keep = std::min<size_t>(static_cast<size_t>(cap), idx.size());
      std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(keep), idx.end(),
                        [&](int a, int b) {
                          if (dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)])
                            return dist[static_cast<size_t>(a)] > dist[static_cast<size_t>(b)];
                          return a < b;
                        });
      for (size_t k = 0; k < keep; ++k)
        cands.push_back(Cand{live[p].logp + dist[static_cast<size_t>(idx[k])],
                             static_cast<int>(p), idx[k]});
    }

    auto cand_better = [&](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      const auto& ta = live[static_cast<size_t>(a.parent)].tokens;
      const auto& tb = live[static_cast<size_t>(b.parent)].tokens;
      if (ta != tb) return ta < tb;
      return a.tok < b.tok;
    };
    size_t take = std::min<size_t>(static_cast<size_t>(cap), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(take), cands.end(),
                      cand_better);

    std::vector<Live> next_live;
    next_live.reserve(take);
    for (size_t k = 0; k < take; ++k) {
      const Cand& c = cands[k];
      std::vector<int> tokens = live[static_cast<size_t>(c.parent)].tokens;
      tokens.push_back(c.tok);
      if (c.tok == eos) {
        BeamHypo h;
        h.logp = c.logp;
        h.score = c.logp / length_penalty(static_cast<int>(tokens.size()), cfg.alpha);
        h.tokens = std::move(tokens);
        finished.push_back(std::move(h));
      } else {
        next_live.push_back(
            Live{std::move(tokens), c.logp, next_states[static_cast<size_t>(c.parent)]});
      }
    }
    live = std::move(next_live);
  }

  std::sort(finished.begin(), finished.end(), beam_detail::better);
  if (finished.size() > static_cast<size_t>(cfg.width)) finished.resize(static_cast<size_t>(cfg.width));
  BeamResult result;
  result.best = finished.front();
  result.nbest = std::move(finished);
  return result;
}

// Greedy argmax decoding with the same forced-EOS and tie-break conventions.
template <class State, class StepFn>
BeamHypo greedy_search(State state, int sos, int eos, int vocab, StepFn&& step, int max_length) {
  if (max_length < 1) throw std::invalid_argument("greedy: max length must be >= 1");
  BeamHypo out;
  int prev = sos;
  for (int t = 1;; ++t) {
    auto [dist, next] = step(state, prev);
    if (static_cast<int>(dist.size()) != vocab)
      throw std::invalid_argument("greedy: stepper returned wrong vocab size");
    int tok = eos;
    if (t < max_length) {
      tok = 0;
      for (int v = 1; v < vocab; ++v)
        if (dist[static_cast<size_t>(v)] > dist[static_cast<size_t>(tok)]) tok = v;
    }
    out.logp += dist[static_cast<size_t>(tok)];
    out.tokens.push_back(tok);
    if (tok == eos) break;
    prev = tok;
    state = std::move(next);
  }
  out.score = out.logp;
  return out;
}

// Adapts a trained model to the stepper interface for one source sentence.
template <class S>
class ModelStepper {
 public:
  ModelStepper(const Model<S>& model, const std::vector<int>& src_ids) : model_(model) {
    if (src_ids.empty()) throw std::invalid_argument("decode: empty source sentence");
    IdBatch b;
    b.rows = {src_ids};
    Rng rng(0);  // inference: dropout inactive, stream unused
    enc_ = model.encode(b, false, rng);
  }

  DecodeState<S> initial_state() const { return model_.initial_state(enc_); }

  std::pair<std::vector<double>, DecodeState<S>> operator()(const DecodeState<S>& st,
                                                            int prev) const {
    Rng rng(0);
    auto out = model_.decode_step({prev}, st, enc_, false, rng);
    auto logp = ops::log_softmax(out.logits);
    std::vector<double> dist(logp.size());
    for (size_t i = 0; i < dist.size(); ++i) dist[i] = static_cast<double>(logp[i]);
    return {std::move(dist), std::move(out.state)};
  }

 private:
  const Model<S>& model_;
  EncoderOutput<S> enc_;
};

template <class S>
BeamResult beam_decode(const Model<S>& model, const std::vector<int>& src_ids,
                       const BeamConfig& cfg) {
  ModelStepper<S> stepper(model, src_ids);
  return beam_search(stepper.initial_state(), kSos, kEos, model.config().vocab, stepper, cfg);
}

template <class S>
BeamHypo greedy_decode(const Model<S>& model, const std::vector<int>& src_ids, int max_length) {
  ModelStepper<S> stepper(model, src_ids);
  return greedy_search(stepper.initial_state(), kSos, kEos, model.config().vocab, stepper,
                       max_length);
}

}  // namespace s2s

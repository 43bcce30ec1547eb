#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s/cells.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"
#include "s2s/tokens.hpp"

namespace s2s {

enum class AttentionType { mul, add, none_state, none_input };

inline AttentionType attention_type_from_string(const std::string& s) {
  if (s == "mul") return AttentionType::mul;
  if (s == "add") return AttentionType::add;
  if (s == "none-state") return AttentionType::none_state;
  if (s == "none-input") return AttentionType::none_input;
  throw std::invalid_argument("unknown attention type '" + s +
                              "' (expected mul|add|none-state|none-input)");
}

inline std::string to_string(AttentionType t) {
  switch (t) {
    case AttentionType::mul: return "mul";
    case AttentionType::add: return "add";
    case AttentionType::none_state: return "none-state";
    case AttentionType::none_input: return "none-input";
  }
  return "?";
}

struct ModelConfig {
  int vocab = 0;
  int emb = 128;
  int units = 128;
  double dropout = 0.2;
  double forget_bias = 1.0;

  struct Encoder {
    bool bidi = true;
    int depth = 2;  // bidi: total across both directions, must be even
    bool reverse_source = false;
    CellKind cell = CellKind::gru;
    ResidualMode residual = ResidualMode::none;
  } encoder;

  struct Decoder {
    int depth = 2;
    CellKind cell = CellKind::gru;
    ResidualMode residual = ResidualMode::none;
  } decoder;

  struct Attention {
    AttentionType type = AttentionType::mul;
    int dim = 128;
  } attention;

  bool uses_attention() const {
    return attention.type == AttentionType::mul || attention.type == AttentionType::add;
  }

  // Per-position encoder state width seen by attention and input feeding.
  int state_dim() const { return encoder.bidi ? 2 * units : units; }

  void validate() const {
    if (vocab < kNumReserved)
      throw std::invalid_argument("config: vocab size must cover the " +
                                  std::to_string(kNumReserved) + " reserved ids");
    if (emb <= 0 || units <= 0) throw std::invalid_argument("config: emb and units must be > 0");
    if (encoder.depth <= 0 || decoder.depth <= 0)
      throw std::invalid_argument("config: depths must be > 0");
    if (encoder.bidi && encoder.depth % 2 != 0)
      throw std::invalid_argument("config: bidirectional encoder depth must be even, got " +
                                  std::to_string(encoder.depth));
    if (uses_attention() && attention.dim <= 0)
      throw std::invalid_argument("config: attention dim must be > 0 for mul/add");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("config: dropout must be in [0,1)");
  }

  std::string canonical_text() const {
    std::ostringstream os;
    os << "attention.dim: " << attention.dim << "\n"
       << "attention.type: " << to_string(attention.type) << "\n"
       << "decoder.cell: " << to_string(decoder.cell) << "\n"
       << "decoder.depth: " << decoder.depth << "\n"
       << "decoder.residual: " << to_string(decoder.residual) << "\n"
       << "dropout: " << dropout << "\n"
       << "emb: " << emb << "\n"
       << "encoder.bidi: " << (encoder.bidi ? "true" : "false") << "\n"
       << "encoder.cell: " << to_string(encoder.cell) << "\n"
       << "encoder.depth: " << encoder.depth << "\n"
       << "encoder.residual: " << to_string(encoder.residual) << "\n"
       << "encoder.reverse_source: " << (encoder.reverse_source ? "true" : "false") << "\n"
       << "forget_bias: " << forget_bias << "\n"
       << "units: " << units << "\n"
       << "vocab: " << vocab << "\n";
    return os.str();
  }

  uint64_t digest() const {
    // FNV-1a over the canonical text
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical_text()) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

// Analytic parameter count, computed from the config alone: two embedding
// tables, the encoder and decoder cell blocks, attention (plus the bridge
// projection none-state needs when dims differ), and the output projection.
// Always equals the constructed model's actual parameter total.
inline long long count_parameters(const ModelConfig& cfg) {
  long long n = 2ll * cfg.vocab * cfg.emb;
  const int enc_dirs = cfg.encoder.bidi ? 2 : 1;
  const int enc_layers = cfg.encoder.bidi ? cfg.encoder.depth / 2 : cfg.encoder.depth;
  for (int d = 0; d < enc_dirs; ++d)
    for (int l = 0; l < enc_layers; ++l)
      n += cell_parameter_count(cfg.encoder.cell, l == 0 ? cfg.emb : cfg.units, cfg.units);
  if (cfg.uses_attention()) {
    n += 1ll * cfg.state_dim() * cfg.attention.dim + 1ll * cfg.units * cfg.attention.dim;
    if (cfg.attention.type == AttentionType::add) n += cfg.attention.dim;
  }
  if (cfg.attention.type == AttentionType::none_state && cfg.state_dim() != cfg.units)
    n += 1ll * cfg.state_dim() * cfg.units + cfg.units;
  const int dec_in =
      cfg.attention.type == AttentionType::none_state ? cfg.emb : cfg.emb + cfg.state_dim();
  for (int l = 0; l < cfg.decoder.depth; ++l)
    n += cell_parameter_count(cfg.decoder.cell, l == 0 ? dec_in : cfg.units, cfg.units);
  const int out_in = cfg.units + (cfg.uses_attention() ? cfg.state_dim() : 0);
  n += 1ll * out_in * cfg.vocab + cfg.vocab;
  return n;
}

// A batch of equally-long id rows; PAD forms a suffix of each row.
struct IdBatch {
  std::vector<std::vector<int>> rows;

  int batch() const { return static_cast<int>(rows.size()); }
  int length() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }

  std::vector<int> lengths() const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      int len = 0;
      while (len < static_cast<int>(r.size()) && r[static_cast<size_t>(len)] != kPad) ++len;
      for (int j = len; j < static_cast<int>(r.size()); ++j)
        if (r[static_cast<size_t>(j)] != kPad)
          throw std::invalid_argument("batch: PAD must form a suffix of each row");
      out.push_back(len);
    }
    return out;
  }

  void validate() const {
    if (rows.empty()) throw std::invalid_argument("batch: empty");
    for (const auto& r : rows)
      if (r.size() != rows[0].size())
        throw std::invalid_argument("batch: rows must be padded to equal length");
    for (int len : lengths())
      if (len == 0) throw std::invalid_argument("batch: a row has no tokens before padding");
  }

  std::vector<int> column(int t) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[static_cast<size_t>(t)]);
    return out;
  }
};

template <class S>
struct EncoderOutput {
  Tensor<S> states;      // [batch, m, state_dim], per-position top states
  Tensor<S> final_state; // [batch, state_dim], each row at its true last token
  Tensor<S> mask;        // [batch, m], 1 for real tokens, 0 for PAD
  Tensor<S> add_mask;    // [batch, m], 0 for real tokens, -inf for PAD
  Tensor<S> keys;        // [batch, m, att_dim], defined for mul/add only
  std::vector<int> lengths;

  int batch() const { return states.dim(0); }
  int positions() const { return states.dim(1); }
};

template <class S>
struct DecodeState {
  std::vector<CellState<S>> layers;
  Tensor<S> context;  // [batch, state_dim]; previous attention context (mul/add)
};

template <class S>
struct StepOutput {
  Tensor<S> logits;   // [batch, vocab]
  Tensor<S> weights;  // [batch, m] attention weights, defined for mul/add only
  DecodeState<S> state;
};

// Score + weighted-context machinery for the two parametric attention types.
template <class S>
class Attention {
 public:
  Attention(ParameterStore<S>& store, const std::string& prefix, AttentionType type,
            int state_dim, int query_dim, int att_dim, Rng& rng)
      : type_(type), att_dim_(att_dim) {
    if (type != AttentionType::mul && type != AttentionType::add)
      throw std::invalid_argument("attention scorer: only mul/add carry parameters");
    w1_ = store.add(prefix + ".w1",
                    init_uniform<S>({state_dim, att_dim}, detail::kWeightInitScale, rng));
    w2_ = store.add(prefix + ".w2",
                    init_uniform<S>({query_dim, att_dim}, detail::kWeightInitScale, rng));
    if (type == AttentionType::add)
      v_ = store.add(prefix + ".v",
                     init_uniform<S>({att_dim, 1}, detail::kWeightInitScale, rng));
  }

  // W1 h_j for all positions, computed once per encoded batch.
  Tensor<S> keys(const Tensor<S>& states) const {
    int b = states.dim(0), m = states.dim(1), sd = states.dim(2);
    auto flat = ops::matmul(ops::reshape(states, {b * m, sd}), w1_->value);
    return ops::reshape(flat, {b, m, att_dim_});
  }

  // One score per (row, position): mul = <W1 h_j, W2 s>, add = <v, tanh(W1 h_j + W2 s)>.
  Tensor<S> scores(const Tensor<S>& query, const Tensor<S>& keys) const {
    int b = keys.dim(0), m = keys.dim(1);
    auto q = ops::matmul(query, w2_->value);  // [b, att_dim]
    if (type_ == AttentionType::mul) {
      auto s = ops::bmm(keys, ops::reshape(q, {b, att_dim_, 1}));  // [b, m, 1]
      return ops::reshape(s, {b, m});
    }
    auto pre = ops::tanh(ops::add(keys, ops::reshape(q, {b, 1, att_dim_})));
    auto s = ops::matmul(ops::reshape(pre, {b * m, att_dim_}), v_->value);
    return ops::reshape(s, {b, m});
  }

  static size_t param_count_formula(AttentionType type, int state_dim, int query_dim,
                                    int att_dim) {
    size_t n = static_cast<size_t>(state_dim) * att_dim + static_cast<size_t>(query_dim) * att_dim;
    if (type == AttentionType::add) n += static_cast<size_t>(att_dim);
    return n;
  }

 private:
  AttentionType type_;
  int att_dim_;
  Parameter<S>* w1_ = nullptr;
  Parameter<S>* w2_ = nullptr;
  Parameter<S>* v_ = nullptr;
};

// Masked softmax over scores plus the weighted average of encoder states.
// Returns (context [b, sd], weights [b, m]); masked positions get exactly
// zero weight.
template <class S>
std::pair<Tensor<S>, Tensor<S>> attention_context(const Tensor<S>& scores,
                                                  const Tensor<S>& states,
                                                  const Tensor<S>& mask) {
  if (scores.ndim() != 2 || states.ndim() != 3 || mask.ndim() != 2 ||
      scores.dim(0) != states.dim(0) || scores.dim(1) != states.dim(1) ||
      mask.shape() != scores.shape())
    throw std::invalid_argument("attention_context: incompatible shapes " +
                                shape_str(scores.shape()) + " / " + shape_str(states.shape()) +
                                " / " + shape_str(mask.shape()));
  int b = scores.dim(0), m = scores.dim(1), sd = states.dim(2);
  auto additive = Tensor<S>::zeros({b, m});
  {
    auto& av = additive.values_mut();
    const auto& mv = mask.values();
    for (int r = 0; r < b; ++r) {
      bool any = false;
      for (int j = 0; j < m; ++j) {
        bool valid = mv[static_cast<size_t>(r) * m + j] != S(0);
        any = any || valid;
        av[static_cast<size_t>(r) * m + j] =
            valid ? S(0) : -std::numeric_limits<S>::infinity();
      }
      if (!any)
        throw std::invalid_argument("attention_context: row " + std::to_string(r) +
                                    " has every position masked");
    }
  }
  auto weights = ops::softmax(ops::add(scores, additive));
  auto ctx = ops::reshape(ops::bmm(ops::reshape(weights, {b, 1, m}), states), {b, sd});
  return {ctx, weights};
}

// The full encoder-attention-decoder network. Owns its parameters.
template <class S>
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(mix64(seed, 0x6d6f64656cull));  // one private init stream per model

    src_emb_ = store_.add("src_emb", init_uniform<S>({cfg_.vocab, cfg_.emb},
                                                     detail::kWeightInitScale, rng));
    tgt_emb_ = store_.add("tgt_emb", init_uniform<S>({cfg_.vocab, cfg_.emb},
                                                     detail::kWeightInitScale, rng));

    if (cfg_.encoder.bidi) {
      int half = cfg_.encoder.depth / 2;
      enc_fwd_ = std::make_unique<Stack<S>>(store_, "enc_fwd",
                                            encoder_stack_spec(half), rng);
      enc_bwd_ = std::make_unique<Stack<S>>(store_, "enc_bwd",
                                            encoder_stack_spec(half), rng);
    } else {
      enc_fwd_ = std::make_unique<Stack<S>>(store_, "enc",
                                            encoder_stack_spec(cfg_.encoder.depth), rng);
    }

    if (cfg_.uses_attention())
      attention_ = std::make_unique<Attention<S>>(store_, "att", cfg_.attention.type,
                                                  cfg_.state_dim(), cfg_.units,
                                                  cfg_.attention.dim, rng);

    if (cfg_.attention.type == AttentionType::none_state && cfg_.state_dim() != cfg_.units) {
      bridge_w_ = store_.add("bridge.w", init_uniform<S>({cfg_.state_dim(), cfg_.units},
                                                         detail::kWeightInitScale, rng));
      bridge_b_ = store_.add("bridge.b", Tensor<S>::zeros({cfg_.units}));
    }

    dec_ = std::make_unique<Stack<S>>(store_, "dec", decoder_stack_spec(), rng);

    int out_in = cfg_.units + (cfg_.uses_attention() ? cfg_.state_dim() : 0);
    out_w_ = store_.add("out.w", init_uniform<S>({out_in, cfg_.vocab},
                                                 detail::kWeightInitScale, rng));
    out_b_ = store_.add("out.b", Tensor<S>::zeros({cfg_.vocab}));
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<S>& store() { return store_; }
  const ParameterStore<S>& store() const { return store_; }

  // Closed-form parameter count, computed from the config alone.
  size_t param_count_formula() const { return static_cast<size_t>(count_parameters(cfg_)); }

  EncoderOutput<S> encode(const IdBatch& src, bool training, Rng& drop_rng) const {
    src.validate();
    int b = src.batch(), m = src.length();
    auto lengths = src.lengths();

    // reverse-source flips each row's real tokens before anything else
    IdBatch input = src;
    if (cfg_.encoder.reverse_source)
      for (int r = 0; r < b; ++r)
        std::reverse(input.rows[static_cast<size_t>(r)].begin(),
                     input.rows[static_cast<size_t>(r)].begin() + lengths[static_cast<size_t>(r)]);

    EncoderOutput<S> out;
    out.lengths = lengths;
    out.mask = Tensor<S>::zeros({b, m});
    out.add_mask = Tensor<S>::zeros({b, m});
    for (int r = 0; r < b; ++r)
      for (int j = 0; j < m; ++j) {
        bool valid = j < lengths[static_cast<size_t>(r)];
        out.mask.values_mut()[static_cast<size_t>(r) * m + j] = valid ? S(1) : S(0);
        out.add_mask.values_mut()[static_cast<size_t>(r) * m + j] =
            valid ? S(0) : -std::numeric_limits<S>::infinity();
      }

    auto [fwd_states, fwd_final] = run_direction(*enc_fwd_, input, lengths, training, drop_rng);
    if (cfg_.encoder.bidi) {
      IdBatch rev = input;
      for (int r = 0; r < b; ++r)
        std::reverse(rev.rows[static_cast<size_t>(r)].begin(),
                     rev.rows[static_cast<size_t>(r)].begin() + lengths[static_cast<size_t>(r)]);
      auto [bwd_rev_states, bwd_final] = run_direction(*enc_bwd_, rev, lengths, training, drop_rng);
      // bwd position t corresponds to source position len-1-t; map it back
      std::vector<std::vector<int>> perm(static_cast<size_t>(b), std::vector<int>(m));
      for (int r = 0; r < b; ++r)
        for (int j = 0; j < m; ++j)
          perm[static_cast<size_t>(r)][static_cast<size_t>(j)] =
              j < lengths[static_cast<size_t>(r)] ? lengths[static_cast<size_t>(r)] - 1 - j : j;
      auto bwd_states = ops::gather_positions(bwd_rev_states, perm);
      out.states = ops::concat(
          ops::reshape(fwd_states, {b * m, cfg_.units}),
          ops::reshape(bwd_states, {b * m, cfg_.units}));
      out.states = ops::reshape(out.states, {b, m, 2 * cfg_.units});
      out.final_state = ops::concat(fwd_final, bwd_final);
    } else {
      out.states = fwd_states;
      out.final_state = fwd_final;
    }

    if (attention_) out.keys = attention_->keys(out.states);
    return out;
  }

  DecodeState<S> initial_state(const EncoderOutput<S>& enc) const {
    int b = enc.batch();
    DecodeState<S> st;
    st.layers = dec_->initial_states(b);
    if (cfg_.attention.type == AttentionType::none_state) {
      Tensor<S> h0 = enc.final_state;
      if (bridge_w_) h0 = ops::add(ops::matmul(h0, bridge_w_->value), bridge_b_->value);
      for (auto& layer : st.layers) layer.h = h0;  // LSTM c stays zero
    } else if (cfg_.uses_attention()) {
      st.context = Tensor<S>::zeros({b, cfg_.state_dim()});
    }
    return st;
  }

  StepOutput<S> decode_step(const std::vector<int>& prev_ids, const DecodeState<S>& state,
                            const EncoderOutput<S>& enc, bool training, Rng& drop_rng) const {
    int b = enc.batch();
    if (static_cast<int>(prev_ids.size()) != b)
      throw std::invalid_argument("decode_step: got " + std::to_string(prev_ids.size()) +
                                  " ids for batch " + std::to_string(b));
    auto emb = ops::take_rows(tgt_emb_->value, prev_ids);

    Tensor<S> fed = emb;
    if (cfg_.uses_attention())
      fed = ops::concat(emb, state.context);
    else if (cfg_.attention.type == AttentionType::none_input)
      fed = ops::concat(emb, enc.final_state);

    StepOutput<S> out;
    auto [top, new_layers] = dec_->step(fed, state.layers, training, drop_rng);
    out.state.layers = std::move(new_layers);

    if (cfg_.uses_attention()) {
      auto scores = attention_->scores(top, enc.keys);
      auto [ctx, weights] = attention_context(scores, enc.states, enc.mask);
      out.weights = weights;
      out.state.context = ctx;
      out.logits = ops::add(ops::matmul(ops::concat(top, ctx), out_w_->value), out_b_->value);
    } else {
      out.logits = ops::add(ops::matmul(top, out_w_->value), out_b_->value);
    }
    return out;
  }

  // Teacher-forced mean negative log likelihood over non-PAD target tokens.
  Tensor<S> sequence_nll(const IdBatch& src, const IdBatch& tgt, bool training,
                         Rng& drop_rng) const {
    tgt.validate();
    if (src.batch() != tgt.batch())
      throw std::invalid_argument("sequence_nll: source and target batch sizes differ");
    auto enc = encode(src, training, drop_rng);
    auto state = initial_state(enc);

    int b = tgt.batch(), T = tgt.length();
    auto tgt_lengths = tgt.lengths();
    size_t total_tokens = 0;
    for (int len : tgt_lengths) total_tokens += static_cast<size_t>(len);
    if (total_tokens == 0) throw std::invalid_argument("sequence_nll: empty target");

    Tensor<S> total = Tensor<S>::scalar_of(S(0));
    std::vector<int> prev(static_cast<size_t>(b), kSos);
    for (int t = 0; t < T; ++t) {
      auto step = decode_step(prev, state, enc, training, drop_rng);
      state = std::move(step.state);
      auto col = tgt.column(t);
      auto logp = ops::pick(ops::log_softmax(step.logits), col);
      auto mask = Tensor<S>::zeros({b});
      for (int r = 0; r < b; ++r)
        mask.values_mut()[static_cast<size_t>(r)] =
            t < tgt_lengths[static_cast<size_t>(r)] ? S(1) : S(0);
      total = ops::add(total, ops::sum(ops::mul(logp, mask)));
      prev = std::move(col);
    }
    return ops::scale(total, -1.0 / static_cast<double>(total_tokens));
  }

  const Attention<S>* attention() const { return attention_.get(); }

 private:
  StackSpec encoder_stack_spec(int layers) const {
    StackSpec sp;
    sp.residual = cfg_.encoder.residual;
    sp.dropout = cfg_.dropout;
    for (int l = 0; l < layers; ++l) {
      CellSpec cs;
      cs.kind = cfg_.encoder.cell;
      cs.input_dim = l == 0 ? cfg_.emb : cfg_.units;
      cs.units = cfg_.units;
      cs.forget_bias = cfg_.forget_bias;
      sp.layers.push_back(cs);
    }
    return sp;
  }

  int decoder_input_dim() const {
    if (cfg_.uses_attention()) return cfg_.emb + cfg_.state_dim();          // input feeding
    if (cfg_.attention.type == AttentionType::none_input)
      return cfg_.emb + cfg_.state_dim();  // final encoder state at every step
    return cfg_.emb;                       // none-state
  }

  StackSpec decoder_stack_spec() const {
    StackSpec sp;
    sp.residual = cfg_.decoder.residual;
    sp.dropout = cfg_.dropout;
    for (int l = 0; l < cfg_.decoder.depth; ++l) {
      CellSpec cs;
      cs.kind = cfg_.decoder.cell;
      cs.input_dim = l == 0 ? decoder_input_dim() : cfg_.units;
      cs.units = cfg_.units;
      cs.forget_bias = cfg_.forget_bias;
      sp.layers.push_back(cs);
    }
    return sp;
  }

  // Runs one direction over the batch; returns per-position top states
  // [b, m, units] and each row's state at its true final token [b, units].
  std::pair<Tensor<S>, Tensor<S>> run_direction(const Stack<S>& stack, const IdBatch& input,
                                                const std::vector<int>& lengths, bool training,
                                                Rng& drop_rng) const {
    int b = input.batch(), m = input.length();
    auto states = stack.initial_states(b);
    std::vector<Tensor<S>> tops;
    tops.reserve(static_cast<size_t>(m));
    Tensor<S> final_state = Tensor<S>::zeros({b, cfg_.units});
    for (int t = 0; t < m; ++t) {
      auto emb = ops::take_rows(src_emb_->value, input.column(t));
      auto [top, ns] = stack.step(emb, states, training, drop_rng);
      states = std::move(ns);
      tops.push_back(top);
      // pick up rows whose last real token is at position t
      auto ind = Tensor<S>::zeros({b, 1});
      bool any = false;
      for (int r = 0; r < b; ++r)
        if (lengths[static_cast<size_t>(r)] - 1 == t) {
          ind.values_mut()[static_cast<size_t>(r)] = S(1);
          any = true;
        }
      if (any) final_state = ops::add(final_state, ops::mul(top, ind));
    }
    auto all = ops::reshape(ops::concat(tops), {b, m, cfg_.units});
    return {all, final_state};
  }

  ModelConfig cfg_;
  ParameterStore<S> store_;
  Parameter<S>* src_emb_ = nullptr;
  Parameter<S>* tgt_emb_ = nullptr;
  std::unique_ptr<Stack<S>> enc_fwd_;
  std::unique_ptr<Stack<S>> enc_bwd_;
  std::unique_ptr<Attention<S>> attention_;
  Parameter<S>* bridge_w_ = nullptr;
  Parameter<S>* bridge_b_ = nullptr;
  std::unique_ptr<Stack<S>> dec_;
  Parameter<S>* out_w_ = nullptr;
  Parameter<S>* out_b_ = nullptr;
};

}  // namespace s2s

#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace s2s {

enum class CellKind { vanilla, gru, lstm };
enum class ResidualMode { none, standard, dense };

inline CellKind cell_kind_from_string(const std::string& s) {
  if (s == "vanilla") return CellKind::vanilla;
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw std::invalid_argument("unknown cell kind '" + s + "' (expected vanilla|gru|lstm)");
}

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::vanilla: return "vanilla";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

inline ResidualMode residual_mode_from_string(const std::string& s) {
  if (s == "none") return ResidualMode::none;
  if (s == "standard") return ResidualMode::standard;
  if (s == "dense") return ResidualMode::dense;
  throw std::invalid_argument("unknown residual mode '" + s + "' (expected none|standard|dense)");
}

inline std::string to_string(ResidualMode m) {
  switch (m) {
    case ResidualMode::none: return "none";
    case ResidualMode::standard: return "standard";
    case ResidualMode::dense: return "dense";
  }
  return "?";
}

// Closed-form parameter count of one cell: (input + units + 1) * units per
// gate block; vanilla has one block, GRU three, LSTM four.
inline long long cell_parameter_count(CellKind kind, int input_dim, int units) {
  const long long blocks = kind == CellKind::vanilla ? 1 : kind == CellKind::gru ? 3 : 4;
  return blocks * static_cast<long long>(input_dim + units + 1) * units;
}

struct CellSpec {
  CellKind kind = CellKind::gru;
  int input_dim = 0;
  int units = 0;
  double forget_bias = 1.0;  // ignored by vanilla
};

template <class S>
struct CellState {
  Tensor<S> h;
  Tensor<S> c;  // defined only for LSTM

  bool has_c() const { return c.defined(); }
};

namespace detail {

constexpr double kWeightInitScale = 0.04;

template <class S>
void check_step_dims(const char* kind, const Tensor<S>& x, const Tensor<S>& h, int input_dim,
                     int units) {
  if (x.ndim() != 2 || x.dim(1) != input_dim)
    throw std::invalid_argument(std::string(kind) + " step: input shape " + shape_str(x.shape()) +
                                " does not match input dim " + std::to_string(input_dim));
  if (h.ndim() != 2 || h.dim(1) != units)
    throw std::invalid_argument(std::string(kind) + " step: state shape " + shape_str(h.shape()) +
                                " does not match unit count " + std::to_string(units));
  if (x.dim(0) != h.dim(0))
    throw std::invalid_argument(std::string(kind) + " step: batch mismatch " +
                                shape_str(x.shape()) + " vs " + shape_str(h.shape()));
}

}  // namespace detail

// One recurrent cell. Gate weights are fused into a single kernel of shape
// [input_dim + units, gates * units] consuming concat(x, h); per-gate blocks
// are sliced out of the pre-activation.
template <class S>
class Cell {
 public:
  virtual ~Cell() = default;
  virtual CellState<S> step(const Tensor<S>& x, const CellState<S>& state) const = 0;
  virtual size_t param_count() const = 0;

  CellKind kind() const { return spec_.kind; }
  int input_dim() const { return spec_.input_dim; }
  int units() const { return spec_.units; }

  CellState<S> initial_state(int batch) const {
    CellState<S> s;
    s.h = Tensor<S>::zeros({batch, spec_.units});
    if (spec_.kind == CellKind::lstm) s.c = Tensor<S>::zeros({batch, spec_.units});
    return s;
  }

 protected:
  explicit Cell(const CellSpec& spec) : spec_(spec) {
    if (spec.units <= 0) throw std::invalid_argument("cell: unit count must be > 0");
    if (spec.input_dim <= 0) throw std::invalid_argument("cell: input dim must be > 0");
  }

  CellSpec spec_;
};

template <class S>
class VanillaCell : public Cell<S> {
 public:
  VanillaCell(ParameterStore<S>& store, const std::string& prefix, const CellSpec& spec, Rng& rng)
      : Cell<S>(spec) {
    int rows = spec.input_dim + spec.units;
    kernel_ = store.add(prefix + ".kernel",
                        init_uniform<S>({rows, spec.units}, detail::kWeightInitScale, rng));
    bias_ = store.add(prefix + ".bias", Tensor<S>::zeros({spec.units}));
  }

  CellState<S> step(const Tensor<S>& x, const CellState<S>& state) const override {
    detail::check_step_dims("vanilla", x, state.h, this->spec_.input_dim, this->spec_.units);
    auto pre = ops::add(ops::matmul(ops::concat(x, state.h), kernel_->value), bias_->value);
    CellState<S> out;
    out.h = ops::tanh(pre);
    return out;
  }

  size_t param_count() const override { return kernel_->value.size() + bias_->value.size(); }

 private:
  Parameter<S>* kernel_;
  Parameter<S>* bias_;
};

// Gate order in the fused kernel: [z | r]; z is the state-preserving gate
// and receives the forget-bias initialization. The candidate kernel is kept
// separate because it consumes concat(x, r*h).
template <class S>
class GruCell : public Cell<S> {
 public:
  GruCell(ParameterStore<S>& store, const std::string& prefix, const CellSpec& spec, Rng& rng)
      : Cell<S>(spec) {
    int rows = spec.input_dim + spec.units;
    gate_kernel_ = store.add(prefix + ".gate_kernel",
                             init_uniform<S>({rows, 2 * spec.units}, detail::kWeightInitScale, rng));
    auto gb = Tensor<S>::zeros({2 * spec.units});
    for (int i = 0; i < spec.units; ++i) gb.values_mut()[i] = static_cast<S>(spec.forget_bias);
    gate_bias_ = store.add(prefix + ".gate_bias", std::move(gb));
    cand_kernel_ = store.add(prefix + ".cand_kernel",
                             init_uniform<S>({rows, spec.units}, detail::kWeightInitScale, rng));
    cand_bias_ = store.add(prefix + ".cand_bias", Tensor<S>::zeros({spec.units}));
  }

  CellState<S> step(const Tensor<S>& x, const CellState<S>& state) const override {
    detail::check_step_dims("gru", x, state.h, this->spec_.input_dim, this->spec_.units);
    int u = this->spec_.units;
    auto gates = ops::sigmoid(
        ops::add(ops::matmul(ops::concat(x, state.h), gate_kernel_->value), gate_bias_->value));
    auto z = ops::slice(gates, 0, u);
    auto r = ops::slice(gates, u, u);
    auto cand_in = ops::concat(x, ops::mul(r, state.h));
    auto htil = ops::tanh(ops::add(ops::matmul(cand_in, cand_kernel_->value), cand_bias_->value));
    auto one = Tensor<S>::scalar_of(S(1));
    CellState<S> out;
    out.h = ops::add(ops::mul(z, state.h), ops::mul(ops::sub(one, z), htil));
    return out;
  }

  size_t param_count() const override {
    return gate_kernel_->value.size() + gate_bias_->value.size() + cand_kernel_->value.size() +
           cand_bias_->value.size();
  }

 private:
  Parameter<S>* gate_kernel_;
  Parameter<S>* gate_bias_;
  Parameter<S>* cand_kernel_;
  Parameter<S>* cand_bias_;
};

// Gate order in the fused kernel: [i | f | g | o]; no peepholes. The forget
// gate's bias block is initialized to forget_bias.
template <class S>
class LstmCell : public Cell<S> {
 public:
  LstmCell(ParameterStore<S>& store, const std::string& prefix, const CellSpec& spec, Rng& rng)
      : Cell<S>(spec) {
    int rows = spec.input_dim + spec.units;
    kernel_ = store.add(prefix + ".kernel",
                        init_uniform<S>({rows, 4 * spec.units}, detail::kWeightInitScale, rng));
    auto b = Tensor<S>::zeros({4 * spec.units});
    for (int i = spec.units; i < 2 * spec.units; ++i)
      b.values_mut()[i] = static_cast<S>(spec.forget_bias);
    bias_ = store.add(prefix + ".bias", std::move(b));
  }

  CellState<S> step(const Tensor<S>& x, const CellState<S>& state) const override {
    detail::check_step_dims("lstm", x, state.h, this->spec_.input_dim, this->spec_.units);
    if (!state.has_c())
      throw std::invalid_argument("lstm step: state is missing the cell tensor c");
    int u = this->spec_.units;
    auto pre = ops::add(ops::matmul(ops::concat(x, state.h), kernel_->value), bias_->value);
    auto i = ops::sigmoid(ops::slice(pre, 0, u));
    auto f = ops::sigmoid(ops::slice(pre, u, u));
    auto g = ops::tanh(ops::slice(pre, 2 * u, u));
    auto o = ops::sigmoid(ops::slice(pre, 3 * u, u));
    CellState<S> out;
    out.c = ops::add(ops::mul(f, state.c), ops::mul(i, g));
    out.h = ops::mul(o, ops::tanh(out.c));
    return out;
  }

  size_t param_count() const override { return kernel_->value.size() + bias_->value.size(); }

 private:
  Parameter<S>* kernel_;
  Parameter<S>* bias_;
};

template <class S>
std::unique_ptr<Cell<S>> make_cell(ParameterStore<S>& store, const std::string& prefix,
                                   const CellSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case CellKind::vanilla: return std::make_unique<VanillaCell<S>>(store, prefix, spec, rng);
    case CellKind::gru: return std::make_unique<GruCell<S>>(store, prefix, spec, rng);
    case CellKind::lstm: return std::make_unique<LstmCell<S>>(store, prefix, spec, rng);
  }
  throw std::invalid_argument("make_cell: bad kind");
}

struct StackSpec {
  std::vector<CellSpec> layers;
  ResidualMode residual = ResidualMode::none;
  double dropout = 0.0;
};

// A column of cells stepped together once per timestep. Layer inputs:
//   none:     x^{l+1} = h^l
//   standard: x^{l+1} = h^l + x^l
//   dense:    x^{l+1} = h^l + sum_{j<=l} x^j
// x^0 is the module input (the embedded token); residual sums use the
// pre-dropout layer inputs, dropout applies to what each cell consumes.
template <class S>
class Stack {
 public:
  Stack(ParameterStore<S>& store, const std::string& prefix, const StackSpec& spec, Rng& rng)
      : spec_(spec) {
    if (spec.layers.empty()) throw std::invalid_argument("stack: needs at least one layer");
    for (size_t l = 0; l < spec.layers.size(); ++l) {
      if (l > 0 && spec.layers[l].input_dim != spec.layers[l - 1].units)
        throw std::invalid_argument("stack: layer " + std::to_string(l) + " input dim " +
                                    std::to_string(spec.layers[l].input_dim) +
                                    " != previous layer units " +
                                    std::to_string(spec.layers[l - 1].units));
      if (l > 0 && spec.residual != ResidualMode::none &&
          spec.layers[l].input_dim != spec.layers[l].units)
        throw std::invalid_argument(
            "stack: residual connections need equal dims, layer " + std::to_string(l) + " has " +
            std::to_string(spec.layers[l].input_dim) + " in vs " +
            std::to_string(spec.layers[l].units) + " units");
      cells_.push_back(
          make_cell<S>(store, prefix + ".l" + std::to_string(l), spec.layers[l], rng));
    }
    // The first layer joins the residual sums only when its input already has
    // the stack width (e.g. an embedding of a different size cannot be added).
    residual_includes_input_ =
        spec.residual != ResidualMode::none &&
        spec.layers[0].input_dim == spec.layers[0].units;
  }

  int depth() const { return static_cast<int>(cells_.size()); }
  int units() const { return cells_.back()->units(); }
  int input_dim() const { return cells_.front()->input_dim(); }
  const Cell<S>& cell(int l) const { return *cells_[static_cast<size_t>(l)]; }
  ResidualMode residual() const { return spec_.residual; }
  double dropout_rate() const { return spec_.dropout; }

  std::vector<CellState<S>> initial_states(int batch) const {
    std::vector<CellState<S>> out;
    out.reserve(cells_.size());
    for (const auto& c : cells_) out.push_back(c->initial_state(batch));
    return out;
  }

  std::pair<Tensor<S>, std::vector<CellState<S>>> step(const Tensor<S>& x,
                                                       const std::vector<CellState<S>>& states,
                                                       bool training, Rng& dropout_rng) const {
    if (states.size() != cells_.size())
      throw std::invalid_argument("stack step: got " + std::to_string(states.size()) +
                                  " states for " + std::to_string(cells_.size()) + " layers");
    std::vector<CellState<S>> new_states;
    new_states.reserve(cells_.size());
    Tensor<S> cur = x;        // x^l
    Tensor<S> running_sum;    // sum of residual-eligible x^j, for dense mode
    for (size_t l = 0; l < cells_.size(); ++l) {
      bool in_sum = l > 0 || residual_includes_input_;
      if (spec_.residual == ResidualMode::dense && in_sum)
        running_sum = running_sum.defined() ? ops::add(running_sum, cur) : cur;
      auto fed = ops::dropout(cur, spec_.dropout, training, dropout_rng);
      auto st = cells_[l]->step(fed, states[l]);
      Tensor<S> next;
      switch (spec_.residual) {
        case ResidualMode::none: next = st.h; break;
        case ResidualMode::standard: next = in_sum ? ops::add(st.h, cur) : st.h; break;
        case ResidualMode::dense:
          next = running_sum.defined() ? ops::add(st.h, running_sum) : st.h;
          break;
      }
      new_states.push_back(std::move(st));
      cur = next;
    }
    return {cur, std::move(new_states)};
  }

 private:
  StackSpec spec_;
  std::vector<std::unique_ptr<Cell<S>>> cells_;
  bool residual_includes_input_ = false;
};

}  // namespace s2s

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2s/rng.hpp"

namespace s2s {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Numpy-style trailing-dimension broadcast. Throws on incompatible shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                  shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <class S>
class Tape;

// Dense row-major tensor. Handles share their payload; ops never mutate
// inputs, so sharing is safe. The (epoch, node) pair ties a tensor to a
// position on the recording tape; a stale epoch means "not recorded".
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->v.assign(shape_numel(t.p_->shape), S(0));
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.p_->v.begin(), t.p_->v.end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->v = std::move(data);
    return t;
  }

  static Tensor scalar_of(S value) { return from_data({1}, {value}); }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return p_->v.size(); }

  const std::vector<S>& values() const { return p_->v; }
  // Direct mutation is reserved for parameter updates and loaders; recorded
  // activations must not be written through this.
  std::vector<S>& values_mut() { return p_->v; }

  S scalar() const {
    if (size() != 1) throw std::invalid_argument("scalar() on tensor of size " + std::to_string(size()));
    return p_->v[0];
  }

  S operator[](size_t i) const { return p_->v[i]; }

  void set_requires_grad(bool b) { p_->requires_grad = b; }
  bool requires_grad() const { return p_ && p_->requires_grad; }

  Tensor clone() const {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = p_->shape;
    t.p_->v = p_->v;
    return t;
  }

 private:
  struct Payload {
    Shape shape;
    std::vector<S> v;
    bool requires_grad = false;
    uint64_t epoch = 0;  // tape generation this node id belongs to
    int node = -1;
  };
  std::shared_ptr<Payload> p_;

  friend class Tape<S>;
};

// Named trainable tensor plus its gradient accumulator.
template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<S>::zeros(value.shape());
    value.set_requires_grad(true);
  }
};

// Collection of model parameters with unique names and stable addresses.
template <class S>
class ParameterStore {
 public:
  Parameter<S>* add(const std::string& name, Tensor<S> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<S>>(name, std::move(value)));
    index_[name] = params_.size() - 1;
    return params_.back().get();
  }

  Parameter<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  size_t count() const { return params_.size(); }
  Parameter<S>& at(size_t i) { return *params_[i]; }
  const Parameter<S>& at(size_t i) const { return *params_[i]; }

  size_t total_values() const {
    size_t n = 0;
    for (auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) {
      auto& g = p->grad.values_mut();
      std::fill(g.begin(), g.end(), S(0));
    }
  }

  std::map<std::string, Tensor<S>> gradients() const {
    std::map<std::string, Tensor<S>> m;
    for (auto& p : params_) m.emplace(p->name, p->grad);
    return m;
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::map<std::string, size_t> index_;
};

// Recorded-operation reverse-mode differentiation. Ops executed while a
// Tape::Scope is active append a backward closure; ops are stored in
// execution order, which is a topological order by construction, and the
// backward sweep walks them in exact reverse.
template <class S>
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& t) {
      if (active_ != nullptr) throw std::runtime_error("nested tape recording on one thread");
      active_ = &t;
      t.recording_ = true;
    }
    ~Scope() {
      active_->recording_ = false;
      active_ = nullptr;
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

  Tape() : epoch_(next_epoch()) {}

  static Tape* active() { return active_; }
  bool recording() const { return recording_; }
  uint64_t epoch() const { return epoch_; }
  size_t op_count() const { return steps_.size(); }

  // Node id of a tensor on this tape; promotes requires-grad tensors to
  // leaves on first use, returns -1 for constants.
  int note_input(const Tensor<S>& t) {
    auto& p = *t.p_;
    if (p.epoch == epoch_ && p.node >= 0) return p.node;
    if (p.requires_grad) {
      p.epoch = epoch_;
      p.node = new_node(p.v.size());
      return p.node;
    }
    return -1;
  }

  int new_node(size_t size) {
    sizes_.push_back(size);
    return static_cast<int>(sizes_.size()) - 1;
  }

  void bind(Tensor<S>& t, int node) {
    t.p_->epoch = epoch_;
    t.p_->node = node;
  }

  void push_step(std::function<void(Tape&)> backward) { steps_.push_back(std::move(backward)); }

  // Gradient buffer for a node, allocated zeroed on first touch.
  std::vector<S>& grad_acc(int node) {
    if (grads_.size() < sizes_.size()) grads_.resize(sizes_.size());
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty() && sizes_[static_cast<size_t>(node)] > 0)
      g.assign(sizes_[static_cast<size_t>(node)], S(0));
    return g;
  }

  // Null when the node never received a gradient (did not influence the loss).
  const std::vector<S>* grad_ptr(int node) const {
    if (static_cast<size_t>(node) >= grads_.size()) return nullptr;
    const auto& g = grads_[static_cast<size_t>(node)];
    return g.empty() ? nullptr : &g;
  }

  // Reverse sweep from a scalar loss. Gradients stay queryable via
  // gradient() until reset().
  void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    const auto& p = *loss.p_;
    if (p.epoch != epoch_ || p.node < 0)
      throw std::runtime_error("backward: loss is not on the active record");
    grad_acc(p.node).assign(1, S(1));
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)(*this);
  }

  Tensor<S> gradient(const Tensor<S>& t) const {
    const auto& p = *t.p_;
    if (p.epoch == epoch_ && p.node >= 0) {
      if (const auto* g = grad_ptr(p.node)) return Tensor<S>::from_data(p.shape, *g);
    }
    return Tensor<S>::zeros(p.shape);
  }

  // Sweep, accumulate into every parameter's grad buffer (zero contribution
  // for parameters unreachable from the loss), then clear the record.
  void backward(const Tensor<S>& loss, ParameterStore<S>& params) {
    backward(loss);
    for (size_t i = 0; i < params.count(); ++i) {
      auto& pr = params.at(i);
      const auto& pp = *pr.value.p_;
      if (pp.epoch == epoch_ && pp.node >= 0) {
        if (const auto* g = grad_ptr(pp.node)) {
          auto& acc = pr.grad.values_mut();
          for (size_t k = 0; k < acc.size(); ++k) acc[k] += (*g)[k];
        }
      }
    }
    reset();
  }

  void reset() {
    steps_.clear();
    grads_.clear();
    sizes_.clear();
    epoch_ = next_epoch();
  }

 private:
  static uint64_t next_epoch() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;  // process-wide monotone; tapes themselves are thread-confined
  }

  static thread_local Tape* active_;
  bool recording_ = false;
  uint64_t epoch_;
  std::vector<size_t> sizes_;
  std::vector<std::vector<S>> grads_;
  std::vector<std::function<void(Tape&)>> steps_;
};

template <class S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

namespace detail {

// Maps a flat output index to the flat index of a broadcast input.
struct BcastIndex {
  std::vector<size_t> stride;  // per output dim; 0 where the input broadcasts
  std::vector<int> out_shape;

  BcastIndex(const Shape& out, const Shape& in) {
    out_shape = out;
    stride.assign(out.size(), 0);
    size_t s = 1;
    int off = static_cast<int>(out.size()) - static_cast<int>(in.size());
    for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
      size_t cur = in[static_cast<size_t>(i)] == 1 ? 0 : s;
      stride[static_cast<size_t>(i + off)] = cur;
      s *= static_cast<size_t>(in[static_cast<size_t>(i)]);
    }
  }

  size_t operator()(size_t flat) const {
    size_t idx = 0;
    for (int i = static_cast<int>(out_shape.size()) - 1; i >= 0; --i) {
      size_t d = static_cast<size_t>(out_shape[static_cast<size_t>(i)]);
      idx += (flat % d) * stride[static_cast<size_t>(i)];
      flat /= d;
    }
    return idx;
  }
};

template <class S>
std::vector<S> reduce_to_shape(const std::vector<S>& g, const Shape& out, const Shape& in) {
  std::vector<S> r(shape_numel(in), S(0));
  BcastIndex map(out, in);
  for (size_t i = 0; i < g.size(); ++i) r[map(i)] += g[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace ops {

template <class S, class Fwd, class MakeBack>
Tensor<S> binary_broadcast(const Tensor<S>& a, const Tensor<S>& b, Fwd f, MakeBack make_back) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto& ov = out.values_mut();
  if (a.shape() == b.shape()) {
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[i], bv[i]);
  } else {
    detail::BcastIndex ia(out_shape, a.shape()), ib(out_shape, b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[ia(i)], bv[ib(i)]);
  }
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a), nb = t->note_input(b);
    if (na >= 0 || nb >= 0) {
      int no = t->new_node(ov.size());
      t->bind(out, no);
      t->push_step(make_back(na, nb, no, a, b, out));
    }
  }
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast<S>(
      a, b, [](S x, S y) { return x + y; },
      [](int na, int nb, int no, const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& out) {
        Shape sa = a.shape(), sb = b.shape(), so = out.shape();
        return [=](Tape<S>& t) {
          const auto* g = t.grad_ptr(no);
          if (!g) return;
          if (na >= 0) {
            auto r = detail::reduce_to_shape(*g, so, sa);
            auto& acc = t.grad_acc(na);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
          }
          if (nb >= 0) {
            auto r = detail::reduce_to_shape(*g, so, sb);
            auto& acc = t.grad_acc(nb);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
          }
        };
      });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast<S>(
      a, b, [](S x, S y) { return x - y; },
      [](int na, int nb, int no, const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& out) {
        Shape sa = a.shape(), sb = b.shape(), so = out.shape();
        return [=](Tape<S>& t) {
          const auto* g = t.grad_ptr(no);
          if (!g) return;
          if (na >= 0) {
            auto r = detail::reduce_to_shape(*g, so, sa);
            auto& acc = t.grad_acc(na);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
          }
          if (nb >= 0) {
            auto r = detail::reduce_to_shape(*g, so, sb);
            auto& acc = t.grad_acc(nb);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] -= r[i];
          }
        };
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast<S>(
      a, b, [](S x, S y) { return x * y; },
      [](int na, int nb, int no, const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& out) {
        Shape so = out.shape();
        return [=](Tape<S>& t) {
          const auto* g = t.grad_ptr(no);
          if (!g) return;
          if (na >= 0) {
            std::vector<S> gb(g->size());
            detail::BcastIndex ib(so, b.shape());
            for (size_t i = 0; i < gb.size(); ++i) gb[i] = (*g)[i] * b.values()[ib(i)];
            auto r = detail::reduce_to_shape(gb, so, a.shape());
            auto& acc = t.grad_acc(na);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
          }
          if (nb >= 0) {
            std::vector<S> ga(g->size());
            detail::BcastIndex ia(so, a.shape());
            for (size_t i = 0; i < ga.size(); ++i) ga[i] = (*g)[i] * a.values()[ia(i)];
            auto r = detail::reduce_to_shape(ga, so, b.shape());
            auto& acc = t.grad_acc(nb);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
          }
        };
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = static_cast<S>(av[i] * c);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(ov.size());
      t->bind(out, no);
      t->push_step([na, no, c](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<S>((*g)[i] * c);
      });
    }
  }
  return out;
}

template <class S, class F, class DF>
Tensor<S> unary_pointwise(const Tensor<S>& a, F f, DF df_from_y) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[i]);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(ov.size());
      t->bind(out, no);
      t->push_step([na, no, out, df_from_y](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        const auto& y = out.values();
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[i] * df_from_y(y[i]);
      });
    }
  }
  return out;
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  return unary_pointwise<S>(
      a, [](S x) { return std::tanh(x); }, [](S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return unary_pointwise<S>(
      a,
      [](S x) {
        // split on sign to avoid overflow in exp
        if (x >= 0) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S y) { return y * (S(1) - y); });
}

template <class S>
void matmul_accum(const S* a, const S* b, S* c, int m, int k, int n) {
  // c[m,n] += a[m,k] * b[k,n], ikj order for contiguous inner loops
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<size_t>(i) * k;
    S* crow = c + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      S aik = arow[kk];
      if (aik == S(0)) continue;
      const S* brow = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: expects 2-d operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  matmul_accum(a.values().data(), b.values().data(), out.values_mut().data(), m, k, n);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a), nb = t->note_input(b);
    if (na >= 0 || nb >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, nb, no, a, b, m, k, n](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        if (na >= 0) {
          // ga[m,k] += g[m,n] * b^T : ga[i,kk] += dot(g[i,:], b[kk,:])
          auto& acc = tp.grad_acc(na);
          const S* bp = b.values().data();
          for (int i = 0; i < m; ++i) {
            const S* grow = g->data() + static_cast<size_t>(i) * n;
            S* arow = acc.data() + static_cast<size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
              const S* brow = bp + static_cast<size_t>(kk) * n;
              S s = 0;
              for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
              arow[kk] += s;
            }
          }
        }
        if (nb >= 0) {
          // gb[k,n] += a^T * g : gb[kk,j] += sum_i a[i,kk] * g[i,j]
          auto& acc = tp.grad_acc(nb);
          const S* ap = a.values().data();
          for (int i = 0; i < m; ++i) {
            const S* arow = ap + static_cast<size_t>(i) * k;
            const S* grow = g->data() + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
              S aik = arow[kk];
              if (aik == S(0)) continue;
              S* brow = acc.data() + static_cast<size_t>(kk) * n;
              for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
            }
          }
        }
      });
    }
  }
  return out;
}

// Batched 3-d matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw std::invalid_argument("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<S> out = Tensor<S>::zeros({B, m, n});
  for (int bb = 0; bb < B; ++bb)
    matmul_accum(a.values().data() + static_cast<size_t>(bb) * m * k,
                 b.values().data() + static_cast<size_t>(bb) * k * n,
                 out.values_mut().data() + static_cast<size_t>(bb) * m * n, m, k, n);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a), nb = t->note_input(b);
    if (na >= 0 || nb >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, nb, no, a, b, B, m, k, n](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        for (int bb = 0; bb < B; ++bb) {
          const S* gp = g->data() + static_cast<size_t>(bb) * m * n;
          if (na >= 0) {
            S* acc = tp.grad_acc(na).data() + static_cast<size_t>(bb) * m * k;
            const S* bp = b.values().data() + static_cast<size_t>(bb) * k * n;
            for (int i = 0; i < m; ++i)
              for (int kk = 0; kk < k; ++kk) {
                S s = 0;
                for (int j = 0; j < n; ++j) s += gp[static_cast<size_t>(i) * n + j] * bp[static_cast<size_t>(kk) * n + j];
                acc[static_cast<size_t>(i) * k + kk] += s;
              }
          }
          if (nb >= 0) {
            S* acc = tp.grad_acc(nb).data() + static_cast<size_t>(bb) * k * n;
            const S* ap = a.values().data() + static_cast<size_t>(bb) * m * k;
            for (int i = 0; i < m; ++i)
              for (int kk = 0; kk < k; ++kk) {
                S aik = ap[static_cast<size_t>(i) * k + kk];
                if (aik == S(0)) continue;
                for (int j = 0; j < n; ++j)
                  acc[static_cast<size_t>(kk) * n + j] += aik * gp[static_cast<size_t>(i) * n + j];
              }
          }
        }
      });
    }
  }
  return out;
}

// Softmax over the last axis, batched over leading dims, max-subtracted.
template <class S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.ndim() < 1 || a.dim(a.ndim() - 1) < 1)
    throw std::invalid_argument("softmax: needs a non-empty last axis");
  int n = a.dim(a.ndim() - 1);
  size_t rows = a.size() / static_cast<size_t>(n);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r) {
    const S* x = av.data() + r * n;
    S* y = ov.data() + r * n;
    S mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S sum = 0;
    for (int i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= sum;
  }
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, out, n, rows](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        const auto& y = out.values();
        for (size_t r = 0; r < rows; ++r) {
          const S* yr = y.data() + r * n;
          const S* gr = g->data() + r * n;
          S dot = 0;
          for (int i = 0; i < n; ++i) dot += yr[i] * gr[i];
          S* ar = acc.data() + r * n;
          for (int i = 0; i < n; ++i) ar[i] += yr[i] * (gr[i] - dot);
        }
      });
    }
  }
  return out;
}

// log(softmax(x)) over the last axis; numerically stable form.
template <class S>
Tensor<S> log_softmax(const Tensor<S>& a) {
  if (a.ndim() < 1 || a.dim(a.ndim() - 1) < 1)
    throw std::invalid_argument("log_softmax: needs a non-empty last axis");
  int n = a.dim(a.ndim() - 1);
  size_t rows = a.size() / static_cast<size_t>(n);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r) {
    const S* x = av.data() + r * n;
    S* y = ov.data() + r * n;
    S mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S sum = 0;
    for (int i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
    S lse = mx + std::log(sum);
    for (int i = 0; i < n; ++i) y[i] = x[i] - lse;
  }
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, out, n, rows](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        const auto& y = out.values();
        for (size_t r = 0; r < rows; ++r) {
          const S* yr = y.data() + r * n;
          const S* gr = g->data() + r * n;
          S gsum = 0;
          for (int i = 0; i < n; ++i) gsum += gr[i];
          S* ar = acc.data() + r * n;
          for (int i = 0; i < n; ++i) ar[i] += gr[i] - std::exp(yr[i]) * gsum;
        }
      });
    }
  }
  return out;
}

// Concatenation along the last axis.
template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape base = parts[0].shape();
  int last = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(base.size()))
      throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i + 1 < p.ndim(); ++i)
      if (p.dim(i) != base[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: leading dims differ, " + shape_str(p.shape()) +
                                    " vs " + shape_str(base));
    last += p.dim(p.ndim() - 1);
  }
  Shape out_shape = base;
  out_shape.back() = last;
  size_t rows = shape_numel(out_shape) / static_cast<size_t>(last);
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto& ov = out.values_mut();
  size_t off = 0;
  for (const auto& p : parts) {
    size_t w = static_cast<size_t>(p.dim(p.ndim() - 1));
    const auto& pv = p.values();
    for (size_t r = 0; r < rows; ++r)
      std::copy(pv.begin() + r * w, pv.begin() + (r + 1) * w,
                ov.begin() + r * last + off);
    off += w;
  }
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    std::vector<int> ids(parts.size());
    bool any = false;
    for (size_t i = 0; i < parts.size(); ++i) {
      ids[i] = t->note_input(parts[i]);
      any = any || ids[i] >= 0;
    }
    if (any) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      std::vector<int> widths(parts.size());
      for (size_t i = 0; i < parts.size(); ++i) widths[i] = parts[i].dim(parts[i].ndim() - 1);
      t->push_step([ids, widths, no, rows, last](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        size_t off = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
          size_t w = static_cast<size_t>(widths[i]);
          if (ids[i] >= 0) {
            auto& acc = tp.grad_acc(ids[i]);
            for (size_t r = 0; r < rows; ++r)
              for (size_t c = 0; c < w; ++c) acc[r * w + c] += (*g)[r * last + off + c];
          }
          off += w;
        }
      });
    }
  }
  return out;
}

template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
  return concat(std::vector<Tensor<S>>{a, b});
}

// Slice [offset, offset+len) of the last axis.
template <class S>
Tensor<S> slice(const Tensor<S>& a, int offset, int len) {
  int last = a.dim(a.ndim() - 1);
  if (offset < 0 || len <= 0 || offset + len > last)
    throw std::invalid_argument("slice: range [" + std::to_string(offset) + "," +
                                std::to_string(offset + len) + ") out of last axis " +
                                std::to_string(last));
  Shape out_shape = a.shape();
  out_shape.back() = len;
  size_t rows = a.size() / static_cast<size_t>(last);
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r)
    std::copy(av.begin() + r * last + offset, av.begin() + r * last + offset + len,
              ov.begin() + r * static_cast<size_t>(len));
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, rows, last, offset, len](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t r = 0; r < rows; ++r)
          for (int c = 0; c < len; ++c)
            acc[r * static_cast<size_t>(last) + static_cast<size_t>(offset + c)] +=
                (*g)[r * static_cast<size_t>(len) + static_cast<size_t>(c)];
      });
    }
  }
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  Tensor<S> out = Tensor<S>::from_data(shape, a.values());
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[i];
      });
    }
  }
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S s = 0;
  for (S v : a.values()) s += v;
  Tensor<S> out = Tensor<S>::scalar_of(s);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(1);
      t->bind(out, no);
      t->push_step([na, no](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[0];
      });
    }
  }
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// Embedding lookup: rows of table[v, d] selected by ids.
template <class S>
Tensor<S> take_rows(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("take_rows: table must be 2-d");
  int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("take_rows: id " + std::to_string(id) + " out of range [0," +
                                  std::to_string(v) + ")");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(ids.size()), d});
  auto& ov = out.values_mut();
  const auto& tv = table.values();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.begin() + static_cast<size_t>(ids[i]) * d,
              tv.begin() + static_cast<size_t>(ids[i] + 1) * d, ov.begin() + i * d);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(table);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, ids, d](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t i = 0; i < ids.size(); ++i)
          for (int c = 0; c < d; ++c)
            acc[static_cast<size_t>(ids[i]) * d + c] += (*g)[i * d + c];
      });
    }
  }
  return out;
}

// Middle-axis gather on a [b, m, d] tensor: out[r, j, :] = x[r, perm[r][j], :].
// Used to map backward-direction encoder outputs onto source positions.
template <class S>
Tensor<S> gather_positions(const Tensor<S>& x, const std::vector<std::vector<int>>& perm) {
  if (x.ndim() != 3) throw std::invalid_argument("gather_positions: expects a 3-d input");
  int b = x.dim(0), m = x.dim(1), d = x.dim(2);
  if (static_cast<int>(perm.size()) != b)
    throw std::invalid_argument("gather_positions: permutation rows != batch");
  for (const auto& row : perm) {
    if (static_cast<int>(row.size()) != m)
      throw std::invalid_argument("gather_positions: permutation row length != positions");
    for (int p : row)
      if (p < 0 || p >= m) throw std::invalid_argument("gather_positions: index out of range");
  }
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto& ov = out.values_mut();
  const auto& xv = x.values();
  for (int r = 0; r < b; ++r)
    for (int j = 0; j < m; ++j)
      std::copy(xv.begin() + (static_cast<size_t>(r) * m + perm[r][j]) * d,
                xv.begin() + (static_cast<size_t>(r) * m + perm[r][j] + 1) * d,
                ov.begin() + (static_cast<size_t>(r) * m + j) * d);
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(x);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, perm, b, m, d](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (int r = 0; r < b; ++r)
          for (int j = 0; j < m; ++j)
            for (int c = 0; c < d; ++c)
              acc[(static_cast<size_t>(r) * m + perm[r][j]) * d + c] +=
                  (*g)[(static_cast<size_t>(r) * m + j) * d + c];
      });
    }
  }
  return out;
}

// Per-row gather on the last axis: out[r] = a[r, ids[r]].
template <class S>
Tensor<S> pick(const Tensor<S>& a, const std::vector<int>& ids) {
  if (a.ndim() != 2) throw std::invalid_argument("pick: expects a 2-d input");
  int rows = a.dim(0), n = a.dim(1);
  if (static_cast<int>(ids.size()) != rows)
    throw std::invalid_argument("pick: ids length != rows");
  for (int id : ids)
    if (id < 0 || id >= n) throw std::invalid_argument("pick: id out of range");
  Tensor<S> out = Tensor<S>::zeros({rows});
  auto& ov = out.values_mut();
  const auto& av = a.values();
  for (int r = 0; r < rows; ++r) ov[static_cast<size_t>(r)] = av[static_cast<size_t>(r) * n + ids[static_cast<size_t>(r)]];
  Tape<S>* t = Tape<S>::active();
  if (t && t->recording()) {
    int na = t->note_input(a);
    if (na >= 0) {
      int no = t->new_node(out.size());
      t->bind(out, no);
      t->push_step([na, no, ids, n](Tape<S>& tp) {
        const auto* g = tp.grad_ptr(no);
        if (!g) return;
        auto& acc = tp.grad_acc(na);
        for (size_t r = 0; r < ids.size(); ++r)
          acc[r * n + static_cast<size_t>(ids[r])] += (*g)[r];
      });
    }
  }
  return out;
}

// Inverted dropout: zero with probability rate, scale survivors by
// 1/(1-rate); identity when not training. Differentiates through the
// multiply with a constant mask.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  Tensor<S> mask = Tensor<S>::zeros(a.shape());
  auto& mv = mask.values_mut();
  S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (auto& m : mv) m = rng.bernoulli(rate) ? S(0) : keep;
  return mul(a, mask);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> init_uniform(Shape shape, double s, Rng& rng) {
  if (s <= 0) throw std::invalid_argument("init_uniform: scale must be > 0");
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.values_mut()) v = static_cast<S>(rng.uniform(-s, s));
  return t;
}

template <class S>
Tensor<S> init_constant(Shape shape, double c) {
  return Tensor<S>::full(std::move(shape), static_cast<S>(c));
}

template <class S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace s2s

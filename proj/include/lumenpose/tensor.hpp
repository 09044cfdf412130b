#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lumenpose/errors.hpp"
#include "lumenpose/rng.hpp"

namespace lumenpose {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <class S>
struct TensorData {
  Shape shape;
  std::vector<S> v;
  std::vector<S> g;  // allocated iff requires_grad
  bool requires_grad = false;
};

// Value-semantic handle to a dense array. Copies share storage; the graph is
// held by the Tape that recorded the ops producing it.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<S>>();
    t.d_->shape = std::move(shape);
    t.d_->v.assign(static_cast<std::size_t>(shape_numel(t.d_->shape)), S(0));
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<TensorData<S>>();
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->v.size()); }
  std::int64_t dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(d_->shape.size()); }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool r) {
    d_->requires_grad = r;
    if (r)
      d_->g.assign(d_->v.size(), S(0));
    else
      d_->g.clear();
  }

  std::vector<S>& values() { return d_->v; }
  const std::vector<S>& values() const { return d_->v; }
  std::vector<S>& grad() { return d_->g; }
  const std::vector<S>& grad() const { return d_->g; }

  S item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
    return d_->v[0];
  }

  void zero_grad() {
    if (requires_grad()) std::fill(d_->g.begin(), d_->g.end(), S(0));
  }

  std::shared_ptr<TensorData<S>> data_ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

// Ordered record of backward closures. Ops append during forward when
// recording is enabled; backward() replays them in reverse. One backward per
// forward unless reset() is called.
template <class S>
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  std::size_t size() const { return entries_.size(); }

  void backward(Tensor<S> loss) {
    if (loss.numel() != 1)
      throw PreconditionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw PreconditionError("backward: loss does not depend on any gradient-enabled tensor");
    if (consumed_)
      throw PreconditionError("backward: tape already consumed; call reset() first");
    consumed_ = true;
    loss.grad()[0] = S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool recording_ = true;
  bool consumed_ = false;
};

// Disables recording for the lifetime of the guard (evaluation mode).
template <class S>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<S>& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }

 private:
  Tape<S>& tape_;
  bool prev_;
};

namespace ops {

namespace detail {

template <class S>
inline void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class S>
inline bool track(const Tape<S>& tape, bool any_input_requires) {
  return tape.recording() && any_input_requires;
}

// Row-major strides.
inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

}  // namespace detail

// ---- elementwise binary ----

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  bool req = detail::track(tape, a.requires_grad() || b.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(a.shape(), req);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (req) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
    tape.record([ad, bd, od] {
      const auto& go = od->g;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) ad->g[i] += go[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) bd->g[i] += go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  bool req = detail::track(tape, a.requires_grad() || b.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(a.shape(), req);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (req) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
    tape.record([ad, bd, od] {
      const auto& go = od->g;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) ad->g[i] += go[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) bd->g[i] -= go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  bool req = detail::track(tape, a.requires_grad() || b.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(a.shape(), req);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (req) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
    tape.record([ad, bd, od] {
      const auto& go = od->g;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) ad->g[i] += go[i] * bd->v[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) bd->g[i] += go[i] * ad->v[i];
    });
  }
  return out;
}

// ---- elementwise unary ----

namespace detail {

template <class S, class Fwd, class Bwd>
Tensor<S> unary(Tape<S>& tape, const Tensor<S>& x, Fwd fwd, Bwd bwd_factor_from_xy) {
  bool req = track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(x.shape(), req);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, bwd_factor_from_xy] {
      for (std::size_t i = 0; i < od->g.size(); ++i)
        xd->g[i] += od->g[i] * bwd_factor_from_xy(xd->v[i], od->v[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> neg(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return -v; }, [](S, S) { return S(-1); });
}

template <class S>
Tensor<S> add_scalar(Tape<S>& tape, const Tensor<S>& x, S c) {
  return detail::unary(
      tape, x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <class S>
Tensor<S> mul_scalar(Tape<S>& tape, const Tensor<S>& x, S c) {
  return detail::unary(
      tape, x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <class S>
Tensor<S> relu(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return v > S(0) ? v : S(0); },
      [](S xv, S) { return xv > S(0) ? S(1) : S(0); });
}

template <class S>
Tensor<S> sigmoid(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> tanh_(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> sin_(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return std::sin(v); }, [](S xv, S) { return std::cos(xv); });
}

template <class S>
Tensor<S> cos_(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return std::cos(v); }, [](S xv, S) { return -std::sin(xv); });
}

template <class S>
Tensor<S> square(Tape<S>& tape, const Tensor<S>& x) {
  return detail::unary(
      tape, x, [](S v) { return v * v; }, [](S xv, S) { return S(2) * xv; });
}

// acos with the argument clamped to [-1+1e-7, 1-1e-7]; the gradient is zero
// in the clamped region, so no NaN or unbounded gradient can propagate.
template <class S>
Tensor<S> acos_clamped(Tape<S>& tape, const Tensor<S>& x) {
  const S lim = S(1) - S(1e-7);
  return detail::unary(
      tape, x,
      [lim](S v) { return std::acos(std::clamp(v, -lim, lim)); },
      [lim](S xv, S) {
        if (xv <= -lim || xv >= lim) return S(0);
        return S(-1) / std::sqrt(S(1) - xv * xv);
      });
}

// ---- reductions ----

template <class S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& x) {
  bool req = detail::track(tape, x.requires_grad());
  S acc = S(0);
  for (S v : x.values()) acc += v;
  Tensor<S> out = Tensor<S>::from({1}, {acc}, req);
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od] {
      for (std::size_t i = 0; i < xd->g.size(); ++i) xd->g[i] += od->g[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> mean(Tape<S>& tape, const Tensor<S>& x) {
  if (x.numel() == 0) throw PreconditionError("mean of empty tensor");
  bool req = detail::track(tape, x.requires_grad());
  S acc = S(0);
  for (S v : x.values()) acc += v;
  S inv = S(1) / static_cast<S>(x.numel());
  Tensor<S> out = Tensor<S>::from({1}, {acc * inv}, req);
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, inv] {
      for (std::size_t i = 0; i < xd->g.size(); ++i) xd->g[i] += od->g[0] * inv;
    });
  }
  return out;
}

// (N, K) -> (N, 1) row sums.
template <class S>
Tensor<S> row_sum(Tape<S>& tape, const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("row_sum expects rank-2 input, got " + shape_str(x.shape()));
  std::int64_t n = x.dim(0), k = x.dim(1);
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros({n, 1}, req);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < n; ++i) {
    S acc = S(0);
    for (std::int64_t j = 0; j < k; ++j) acc += xv[static_cast<std::size_t>(i * k + j)];
    ov[static_cast<std::size_t>(i)] = acc;
  }
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, n, k] {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < k; ++j)
          xd->g[static_cast<std::size_t>(i * k + j)] += od->g[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// ---- shape manipulation ----

template <class S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::from(std::move(new_shape), x.values(), req);
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od] {
      for (std::size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> flatten(Tape<S>& tape, const Tensor<S>& x) {
  return reshape(tape, x, Shape{x.numel()});
}

// Swaps the two leading dimensions of a rank >= 2 tensor.
template <class S>
Tensor<S> transpose01(Tape<S>& tape, const Tensor<S>& x) {
  if (x.rank() < 2) throw ShapeError("transpose01 expects rank >= 2, got " + shape_str(x.shape()));
  Shape os = x.shape();
  std::swap(os[0], os[1]);
  std::int64_t d0 = x.dim(0), d1 = x.dim(1);
  std::int64_t inner = x.numel() / (d0 * d1);
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(os, req);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < d0; ++i)
    for (std::int64_t j = 0; j < d1; ++j) {
      const S* src = xv.data() + (i * d1 + j) * inner;
      S* dst = ov.data() + (j * d0 + i) * inner;
      std::copy(src, src + inner, dst);
    }
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, d0, d1, inner] {
      for (std::int64_t i = 0; i < d0; ++i)
        for (std::int64_t j = 0; j < d1; ++j) {
          const S* src = od->g.data() + (j * d0 + i) * inner;
          S* dst = xd->g.data() + (i * d1 + j) * inner;
          for (std::int64_t t = 0; t < inner; ++t) dst[t] += src[t];
        }
    });
  }
  return out;
}

// 2D transpose (m, n) -> (n, m).
template <class S>
Tensor<S> transpose(Tape<S>& tape, const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects rank-2 input, got " + shape_str(x.shape()));
  return transpose01(tape, x);
}

// General ND slice: out[idx] = x[starts + idx], sizes gives the output shape.
template <class S>
Tensor<S> slice(Tape<S>& tape, const Tensor<S>& x, const std::vector<std::int64_t>& starts,
                const std::vector<std::int64_t>& sizes) {
  if (static_cast<int>(starts.size()) != x.rank() || static_cast<int>(sizes.size()) != x.rank())
    throw ShapeError("slice: starts/sizes rank mismatch for " + shape_str(x.shape()));
  for (int i = 0; i < x.rank(); ++i) {
    if (starts[static_cast<std::size_t>(i)] < 0 || sizes[static_cast<std::size_t>(i)] < 1 ||
        starts[static_cast<std::size_t>(i)] + sizes[static_cast<std::size_t>(i)] > x.dim(i))
      throw ShapeError("slice: window out of bounds for " + shape_str(x.shape()));
  }
  Shape os(sizes.begin(), sizes.end());
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(os, req);
  const std::vector<std::int64_t> xstr = detail::strides_of(x.shape());
  const std::vector<std::int64_t> ostr = detail::strides_of(os);
  const std::int64_t n = out.numel();
  const auto& xv = x.values();
  auto& ov = out.values();
  const int rank = x.rank();
  const std::vector<std::int64_t> starts_copy = starts;
  auto src_index = [starts_copy, xstr, ostr, rank](std::int64_t oi) {
    std::int64_t rem = oi, si = 0;
    for (int d = 0; d < rank; ++d) {
      std::int64_t c = rem / ostr[static_cast<std::size_t>(d)];
      rem %= ostr[static_cast<std::size_t>(d)];
      si += (starts_copy[static_cast<std::size_t>(d)] + c) * xstr[static_cast<std::size_t>(d)];
    }
    return si;
  };
  for (std::int64_t i = 0; i < n; ++i) ov[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(src_index(i))];
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, src_index, n] {
      for (std::int64_t i = 0; i < n; ++i)
        xd->g[static_cast<std::size_t>(src_index(i))] += od->g[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat(Tape<S>& tape, const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
  Shape os = parts[0].shape();
  std::int64_t axis_total = 0;
  bool any_req = false;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(parts[0].shape()));
    axis_total += p.dim(axis);
    any_req = any_req || p.requires_grad();
  }
  os[static_cast<std::size_t>(axis)] = axis_total;
  bool req = detail::track(tape, any_req);
  Tensor<S> out = Tensor<S>::zeros(os, req);

  // outer = product of dims before axis, inner = product after.
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= os[static_cast<std::size_t>(d)];

  auto& ov = out.values();
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t pa = p.dim(axis);
    const auto& pv = p.values();
    for (std::int64_t o = 0; o < outer; ++o) {
      const S* src = pv.data() + o * pa * inner;
      S* dst = ov.data() + (o * axis_total + axis_off) * inner;
      std::copy(src, src + pa * inner, dst);
    }
    axis_off += pa;
  }
  if (req) {
    std::vector<std::shared_ptr<TensorData<S>>> pds;
    std::vector<std::int64_t> sizes;
    for (const auto& p : parts) {
      pds.push_back(p.data_ptr());
      sizes.push_back(p.dim(axis));
    }
    auto od = out.data_ptr();
    tape.record([pds, sizes, od, outer, inner, axis_total] {
      std::int64_t off = 0;
      for (std::size_t pi = 0; pi < pds.size(); ++pi) {
        const std::int64_t pa = sizes[pi];
        if (pds[pi]->requires_grad) {
          for (std::int64_t o = 0; o < outer; ++o) {
            const S* src = od->g.data() + (o * axis_total + off) * inner;
            S* dst = pds[pi]->g.data() + o * pa * inner;
            for (std::int64_t t = 0; t < pa * inner; ++t) dst[t] += src[t];
          }
        }
        off += pa;
      }
    });
  }
  return out;
}

// ---- linear algebra ----

template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  bool req = detail::track(tape, a.requires_grad() || b.requires_grad());
  Tensor<S> out = Tensor<S>::zeros({m, n}, req);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const S aik = av[static_cast<std::size_t>(i * k + kk)];
      if (aik == S(0)) continue;
      const S* brow = bv.data() + kk * n;
      S* orow = ov.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  if (req) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
    tape.record([ad, bd, od, m, k, n] {
      const auto& go = od->g;
      if (ad->requires_grad) {
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t kk = 0; kk < k; ++kk) {
            S acc = S(0);
            const S* grow = go.data() + i * n;
            const S* brow = bd->v.data() + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ad->g[static_cast<std::size_t>(i * k + kk)] += acc;
          }
      }
      if (bd->requires_grad) {
        for (std::int64_t kk = 0; kk < k; ++kk)
          for (std::int64_t i = 0; i < m; ++i) {
            const S aik = ad->v[static_cast<std::size_t>(i * k + kk)];
            if (aik == S(0)) continue;
            const S* grow = go.data() + i * n;
            S* brow = bd->g.data() + kk * n;
            for (std::int64_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
      }
    });
  }
  return out;
}

// x (N, F) * w (F, O) + b (O). Pass an undefined bias tensor to skip it.
template <class S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()));
  const std::int64_t n = x.dim(0), f = x.dim(1), o = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != o))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match output " +
                     std::to_string(o));
  bool req = detail::track(
      tape, x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()));
  Tensor<S> out = Tensor<S>::zeros({n, o}, req);
  const auto& xv = x.values();
  const auto& wv = w.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < n; ++i) {
    S* orow = ov.data() + i * o;
    if (has_bias) std::copy(b.values().begin(), b.values().end(), orow);
    for (std::int64_t kk = 0; kk < f; ++kk) {
      const S xik = xv[static_cast<std::size_t>(i * f + kk)];
      if (xik == S(0)) continue;
      const S* wrow = wv.data() + kk * o;
      for (std::int64_t j = 0; j < o; ++j) orow[j] += xik * wrow[j];
    }
  }
  if (req) {
    auto xd = x.data_ptr(), wd = w.data_ptr(), od = out.data_ptr();
    std::shared_ptr<TensorData<S>> bd = has_bias ? b.data_ptr() : nullptr;
    tape.record([xd, wd, bd, od, n, f, o] {
      const auto& go = od->g;
      if (xd->requires_grad) {
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t kk = 0; kk < f; ++kk) {
            S acc = S(0);
            const S* grow = go.data() + i * o;
            const S* wrow = wd->v.data() + kk * o;
            for (std::int64_t j = 0; j < o; ++j) acc += grow[j] * wrow[j];
            xd->g[static_cast<std::size_t>(i * f + kk)] += acc;
          }
      }
      if (wd->requires_grad) {
        for (std::int64_t kk = 0; kk < f; ++kk)
          for (std::int64_t i = 0; i < n; ++i) {
            const S xik = xd->v[static_cast<std::size_t>(i * f + kk)];
            if (xik == S(0)) continue;
            const S* grow = go.data() + i * o;
            S* wrow = wd->g.data() + kk * o;
            for (std::int64_t j = 0; j < o; ++j) wrow[j] += xik * grow[j];
          }
      }
      if (bd && bd->requires_grad) {
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < o; ++j)
            bd->g[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i * o + j)];
      }
    });
  }
  return out;
}

// ---- convolutions ----

// Cross-correlation. x (N, C, H, W), w (O, C/groups, kh, kw), optional b (O).
// H' = floor((H + 2p - kh)/stride) + 1.
template <class S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride = 1, int pad = 0, int groups = 1) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected 4D input and kernel, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const std::int64_t o = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1 || c % groups != 0 || o % groups != 0 || cg != c / groups)
    throw ShapeError("conv2d: channel/group mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()) + " groups=" + std::to_string(groups));
  if (stride < 1 || pad < 0 || kh > h + 2 * pad || kw > ww + 2 * pad)
    throw ShapeError("conv2d: invalid geometry kernel " + shape_str(w.shape()) + " on input " +
                     shape_str(x.shape()) + " pad=" + std::to_string(pad));
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != o))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t wo = (ww + 2 * pad - kw) / stride + 1;
  bool req = detail::track(
      tape, x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()));
  Tensor<S> out = Tensor<S>::zeros({n, o, ho, wo}, req);

  const std::int64_t og = o / groups;
  const auto& xv = x.values();
  const auto& wv = w.values();
  auto& ov = out.values();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oi = 0; oi < o; ++oi) {
      const std::int64_t g = oi / og;
      const S bias = has_bias ? b.values()[static_cast<std::size_t>(oi)] : S(0);
      for (std::int64_t yo = 0; yo < ho; ++yo)
        for (std::int64_t xo = 0; xo < wo; ++xo) {
          S acc = bias;
          for (std::int64_t ci = 0; ci < cg; ++ci) {
            const std::int64_t cin = g * cg + ci;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t yi = yo * stride - pad + ky;
              if (yi < 0 || yi >= h) continue;
              const S* xrow = xv.data() + ((ni * c + cin) * h + yi) * ww;
              const S* wrow = wv.data() + ((oi * cg + ci) * kh + ky) * kw;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t xi = xo * stride - pad + kx;
                if (xi < 0 || xi >= ww) continue;
                acc += xrow[xi] * wrow[kx];
              }
            }
          }
          ov[static_cast<std::size_t>(((ni * o + oi) * ho + yo) * wo + xo)] = acc;
        }
    }

  if (req) {
    auto xd = x.data_ptr(), wd = w.data_ptr(), od = out.data_ptr();
    std::shared_ptr<TensorData<S>> bd = has_bias ? b.data_ptr() : nullptr;
    tape.record([xd, wd, bd, od, n, c, h, ww, o, cg, kh, kw, ho, wo, og, stride, pad] {
      const auto& go = od->g;
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t oi = 0; oi < o; ++oi) {
          const std::int64_t g = oi / og;
          for (std::int64_t yo = 0; yo < ho; ++yo)
            for (std::int64_t xo = 0; xo < wo; ++xo) {
              const S gv = go[static_cast<std::size_t>(((ni * o + oi) * ho + yo) * wo + xo)];
              if (gv == S(0)) continue;
              if (bd && bd->requires_grad) bd->g[static_cast<std::size_t>(oi)] += gv;
              for (std::int64_t ci = 0; ci < cg; ++ci) {
                const std::int64_t cin = g * cg + ci;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  const std::int64_t yi = yo * stride - pad + ky;
                  if (yi < 0 || yi >= h) continue;
                  const S* xrow = xd->v.data() + ((ni * c + cin) * h + yi) * ww;
                  const S* wrow = wd->v.data() + ((oi * cg + ci) * kh + ky) * kw;
                  S* xgrow = xd->requires_grad
                                 ? xd->g.data() + ((ni * c + cin) * h + yi) * ww
                                 : nullptr;
                  S* wgrow = wd->requires_grad
                                 ? wd->g.data() + ((oi * cg + ci) * kh + ky) * kw
                                 : nullptr;
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t xi = xo * stride - pad + kx;
                    if (xi < 0 || xi >= ww) continue;
                    if (xgrow) xgrow[xi] += gv * wrow[kx];
                    if (wgrow) wgrow[kx] += gv * xrow[xi];
                  }
                }
              }
            }
        }
    });
  }
  return out;
}

// x (N, C, D, H, W), w (O, C, kd, kh, kw), optional b (O). Per-dimension
// stride and padding; 'same' depth behaviour comes from pad_d = kd / 2 with
// stride 1.
template <class S>
Tensor<S> conv3d(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 std::array<int, 3> stride = {1, 1, 1}, std::array<int, 3> pad = {0, 0, 0}) {
  if (x.rank() != 5 || w.rank() != 5)
    throw ShapeError("conv3d: expected 5D input and kernel, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), ww = x.dim(4);
  const std::int64_t o = w.dim(0), ck = w.dim(1), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (ck != c)
    throw ShapeError("conv3d: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  for (int i = 0; i < 3; ++i)
    if (stride[static_cast<std::size_t>(i)] < 1 || pad[static_cast<std::size_t>(i)] < 0)
      throw ShapeError("conv3d: invalid stride/pad");
  if (kd > d + 2 * pad[0] || kh > h + 2 * pad[1] || kw > ww + 2 * pad[2])
    throw ShapeError("conv3d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != o))
    throw ShapeError("conv3d: bias shape " + shape_str(b.shape()));
  const std::int64_t do_ = (d + 2 * pad[0] - kd) / stride[0] + 1;
  const std::int64_t ho = (h + 2 * pad[1] - kh) / stride[1] + 1;
  const std::int64_t wo = (ww + 2 * pad[2] - kw) / stride[2] + 1;
  bool req = detail::track(
      tape, x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()));
  Tensor<S> out = Tensor<S>::zeros({n, o, do_, ho, wo}, req);

  const auto& xv = x.values();
  const auto& wv = w.values();
  auto& ov = out.values();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oi = 0; oi < o; ++oi) {
      const S bias = has_bias ? b.values()[static_cast<std::size_t>(oi)] : S(0);
      for (std::int64_t zo = 0; zo < do_; ++zo)
        for (std::int64_t yo = 0; yo < ho; ++yo)
          for (std::int64_t xo = 0; xo < wo; ++xo) {
            S acc = bias;
            for (std::int64_t ci = 0; ci < c; ++ci)
              for (std::int64_t kz = 0; kz < kd; ++kz) {
                const std::int64_t zi = zo * stride[0] - pad[0] + kz;
                if (zi < 0 || zi >= d) continue;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  const std::int64_t yi = yo * stride[1] - pad[1] + ky;
                  if (yi < 0 || yi >= h) continue;
                  const S* xrow = xv.data() + (((ni * c + ci) * d + zi) * h + yi) * ww;
                  const S* wrow = wv.data() + (((oi * c + ci) * kd + kz) * kh + ky) * kw;
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t xi = xo * stride[2] - pad[2] + kx;
                    if (xi < 0 || xi >= ww) continue;
                    acc += xrow[xi] * wrow[kx];
                  }
                }
              }
            ov[static_cast<std::size_t>((((ni * o + oi) * do_ + zo) * ho + yo) * wo + xo)] = acc;
          }
    }

  if (req) {
    auto xd = x.data_ptr(), wd = w.data_ptr(), od = out.data_ptr();
    std::shared_ptr<TensorData<S>> bd = has_bias ? b.data_ptr() : nullptr;
    tape.record([xd, wd, bd, od, n, c, d, h, ww, o, kd, kh, kw, do_, ho, wo, stride, pad] {
      const auto& go = od->g;
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t oi = 0; oi < o; ++oi)
          for (std::int64_t zo = 0; zo < do_; ++zo)
            for (std::int64_t yo = 0; yo < ho; ++yo)
              for (std::int64_t xo = 0; xo < wo; ++xo) {
                const S gv =
                    go[static_cast<std::size_t>((((ni * o + oi) * do_ + zo) * ho + yo) * wo + xo)];
                if (gv == S(0)) continue;
                if (bd && bd->requires_grad) bd->g[static_cast<std::size_t>(oi)] += gv;
                for (std::int64_t ci = 0; ci < c; ++ci)
                  for (std::int64_t kz = 0; kz < kd; ++kz) {
                    const std::int64_t zi = zo * stride[0] - pad[0] + kz;
                    if (zi < 0 || zi >= d) continue;
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                      const std::int64_t yi = yo * stride[1] - pad[1] + ky;
                      if (yi < 0 || yi >= h) continue;
                      const S* xrow = xd->v.data() + (((ni * c + ci) * d + zi) * h + yi) * ww;
                      const S* wrow = wd->v.data() + (((oi * c + ci) * kd + kz) * kh + ky) * kw;
                      S* xgrow = xd->requires_grad
                                     ? xd->g.data() + (((ni * c + ci) * d + zi) * h + yi) * ww
                                     : nullptr;
                      S* wgrow = wd->requires_grad
                                     ? wd->g.data() + (((oi * c + ci) * kd + kz) * kh + ky) * kw
                                     : nullptr;
                      for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t xi = xo * stride[2] - pad[2] + kx;
                        if (xi < 0 || xi >= ww) continue;
                        if (xgrow) xgrow[xi] += gv * wrow[kx];
                        if (wgrow) wgrow[kx] += gv * xrow[xi];
                      }
                    }
                  }
              }
    });
  }
  return out;
}

// ShuffleNet-style channel shuffle: with C = G * K, source channel g*K + i
// moves to destination i*G + g.
template <class S>
Tensor<S> channel_shuffle(Tape<S>& tape, const Tensor<S>& x, int groups) {
  if (x.rank() != 4) throw ShapeError("channel_shuffle expects 4D input, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("channel_shuffle: channels " + std::to_string(c) + " not divisible by groups " +
                     std::to_string(groups));
  const std::int64_t k = c / groups;
  const std::int64_t hw = x.dim(2) * x.dim(3);
  std::vector<std::int64_t> dst_of_src(static_cast<std::size_t>(c));
  for (std::int64_t g = 0; g < groups; ++g)
    for (std::int64_t i = 0; i < k; ++i) dst_of_src[static_cast<std::size_t>(g * k + i)] = i * groups + g;
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(x.shape(), req);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const S* src = xv.data() + (ni * c + ci) * hw;
      S* dst = ov.data() + (ni * c + dst_of_src[static_cast<std::size_t>(ci)]) * hw;
      std::copy(src, src + hw, dst);
    }
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, dst_of_src, n, c, hw] {
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const S* src = od->g.data() + (ni * c + dst_of_src[static_cast<std::size_t>(ci)]) * hw;
          S* dst = xd->g.data() + (ni * c + ci) * hw;
          for (std::int64_t t = 0; t < hw; ++t) dst[t] += src[t];
        }
    });
  }
  return out;
}

// Batch normalization over all axes except channel axis 1. In training mode
// batch statistics (biased variance) are used and running stats updated in
// place; in eval mode the running stats are used. Requires at least 2
// normalization elements per channel in training mode.
template <class S>
Tensor<S> batch_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, std::vector<S>& running_mean,
                     std::vector<S>& running_var, bool training, double momentum = 0.1,
                     double eps = 1e-5) {
  if (x.rank() < 2) throw ShapeError("batch_norm expects rank >= 2, got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<std::int64_t>(running_mean.size()) != c ||
      static_cast<std::int64_t>(running_var.size()) != c)
    throw ShapeError("batch_norm: per-channel parameter size mismatch for " + shape_str(x.shape()));
  const std::int64_t n0 = x.dim(0);
  std::int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t m = n0 * inner;  // elements per channel
  if (training && m < 2)
    throw PreconditionError("batch_norm: training requires >= 2 elements per channel");

  std::vector<S> mu(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  const auto& xv = x.values();
  if (training) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      S acc = S(0);
      for (std::int64_t ni = 0; ni < n0; ++ni) {
        const S* p = xv.data() + (ni * c + ci) * inner;
        for (std::int64_t t = 0; t < inner; ++t) acc += p[t];
      }
      const S mean_c = acc / static_cast<S>(m);
      S var_acc = S(0);
      for (std::int64_t ni = 0; ni < n0; ++ni) {
        const S* p = xv.data() + (ni * c + ci) * inner;
        for (std::int64_t t = 0; t < inner; ++t) {
          S d = p[t] - mean_c;
          var_acc += d * d;
        }
      }
      const S var_c = var_acc / static_cast<S>(m);
      mu[static_cast<std::size_t>(ci)] = mean_c;
      invstd[static_cast<std::size_t>(ci)] = S(1) / std::sqrt(var_c + static_cast<S>(eps));
      running_mean[static_cast<std::size_t>(ci)] =
          static_cast<S>(1.0 - momentum) * running_mean[static_cast<std::size_t>(ci)] +
          static_cast<S>(momentum) * mean_c;
      running_var[static_cast<std::size_t>(ci)] =
          static_cast<S>(1.0 - momentum) * running_var[static_cast<std::size_t>(ci)] +
          static_cast<S>(momentum) * var_c;
    }
  } else {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      mu[static_cast<std::size_t>(ci)] = running_mean[static_cast<std::size_t>(ci)];
      invstd[static_cast<std::size_t>(ci)] =
          S(1) / std::sqrt(running_var[static_cast<std::size_t>(ci)] + static_cast<S>(eps));
    }
  }

  bool req = detail::track(tape, x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(x.shape(), req);
  auto& ov = out.values();
  for (std::int64_t ni = 0; ni < n0; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const S* p = xv.data() + (ni * c + ci) * inner;
      S* q = ov.data() + (ni * c + ci) * inner;
      const S gm = gamma.values()[static_cast<std::size_t>(ci)];
      const S bt = beta.values()[static_cast<std::size_t>(ci)];
      const S mc = mu[static_cast<std::size_t>(ci)], is = invstd[static_cast<std::size_t>(ci)];
      for (std::int64_t t = 0; t < inner; ++t) q[t] = gm * (p[t] - mc) * is + bt;
    }

  if (req) {
    auto xd = x.data_ptr(), gd = gamma.data_ptr(), bd = beta.data_ptr(), od = out.data_ptr();
    tape.record([xd, gd, bd, od, mu, invstd, n0, c, inner, m, training] {
      const auto& go = od->g;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const S mc = mu[static_cast<std::size_t>(ci)], is = invstd[static_cast<std::size_t>(ci)];
        const S gm = gd->v[static_cast<std::size_t>(ci)];
        // Accumulate sum(dy) and sum(dy * xhat) for this channel.
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for (std::int64_t ni = 0; ni < n0; ++ni) {
          const S* xp = xd->v.data() + (ni * c + ci) * inner;
          const S* gp = go.data() + (ni * c + ci) * inner;
          for (std::int64_t t = 0; t < inner; ++t) {
            const S xhat = (xp[t] - mc) * is;
            sum_dy += gp[t];
            sum_dy_xhat += gp[t] * xhat;
          }
        }
        if (gd->requires_grad) gd->g[static_cast<std::size_t>(ci)] += sum_dy_xhat;
        if (bd->requires_grad) bd->g[static_cast<std::size_t>(ci)] += sum_dy;
        if (xd->requires_grad) {
          const S inv_m = S(1) / static_cast<S>(m);
          for (std::int64_t ni = 0; ni < n0; ++ni) {
            const S* xp = xd->v.data() + (ni * c + ci) * inner;
            const S* gp = go.data() + (ni * c + ci) * inner;
            S* xg = xd->g.data() + (ni * c + ci) * inner;
            for (std::int64_t t = 0; t < inner; ++t) {
              const S xhat = (xp[t] - mc) * is;
              if (training) {
                xg[t] += gm * is * (gp[t] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
              } else {
                xg[t] += gm * is * gp[t];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout with a seeded Bernoulli mask; identity in eval mode.
template <class S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double rate, bool training,
                  std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw PreconditionError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  bool req = detail::track(tape, x.requires_grad());
  Tensor<S> out = Tensor<S>::zeros(x.shape(), req);
  Rng rng(seed);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(x.values().size());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const S f = rng.uniform() >= rate ? scale : S(0);
    (*mask)[i] = f;
    ov[i] = xv[i] * f;
  }
  if (req) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    tape.record([xd, od, mask] {
      for (std::size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i] * (*mask)[i];
    });
  }
  return out;
}

// Standard LSTM cell. Gate layout along the 4H axis is [i, f, g, o]:
//   c' = sigmoid(f) * c + sigmoid(i) * tanh(g),  h' = sigmoid(o) * tanh(c').
template <class S>
struct LstmStep {
  Tensor<S> h;
  Tensor<S> c;
};

template <class S>
LstmStep<S> lstm_cell(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& h, const Tensor<S>& c,
                      const Tensor<S>& wx, const Tensor<S>& wh, const Tensor<S>& b) {
  if (x.rank() != 2 || h.rank() != 2 || c.rank() != 2)
    throw ShapeError("lstm_cell: expected 2D x/h/c");
  const std::int64_t hid = h.dim(1);
  if (wx.dim(1) != 4 * hid || wh.dim(0) != hid || wh.dim(1) != 4 * hid || c.dim(1) != hid)
    throw ShapeError("lstm_cell: weight shapes inconsistent with hidden size " +
                     std::to_string(hid));
  Tensor<S> z = add(tape, linear(tape, x, wx, b), matmul(tape, h, wh));
  const std::int64_t n = z.dim(0);
  auto gate = [&](std::int64_t idx) {
    return slice(tape, z, {0, idx * hid}, {n, hid});
  };
  Tensor<S> gi = sigmoid(tape, gate(0));
  Tensor<S> gf = sigmoid(tape, gate(1));
  Tensor<S> gg = tanh_(tape, gate(2));
  Tensor<S> go = sigmoid(tape, gate(3));
  Tensor<S> c_new = add(tape, mul(tape, gf, c), mul(tape, gi, gg));
  Tensor<S> h_new = mul(tape, go, tanh_(tape, c_new));
  return {h_new, c_new};
}

// Convolutional LSTM cell: the gate pre-activations come from 'same'
// convolutions over the input and hidden maps. Kernels are
// wx (4Hc, Cx, k, k) and wh (4Hc, Hc, k, k); gate layout [i, f, g, o] on the
// channel axis.
template <class S>
LstmStep<S> conv_lstm_cell(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& h,
                           const Tensor<S>& c, const Tensor<S>& wx, const Tensor<S>& wh,
                           const Tensor<S>& b) {
  if (x.rank() != 4 || h.rank() != 4 || c.rank() != 4)
    throw ShapeError("conv_lstm_cell: expected 4D x/h/c");
  const std::int64_t hc = h.dim(1);
  if (wx.dim(0) != 4 * hc || wh.dim(0) != 4 * hc)
    throw ShapeError("conv_lstm_cell: kernel output channels must be 4 * hidden channels");
  const int kx = static_cast<int>(wx.dim(2));
  const int kh = static_cast<int>(wh.dim(2));
  Tensor<S> none;
  Tensor<S> z = add(tape, conv2d(tape, x, wx, b, 1, kx / 2),
                    conv2d(tape, h, wh, none, 1, kh / 2));
  const std::int64_t n = z.dim(0), zh = z.dim(2), zw = z.dim(3);
  auto gate = [&](std::int64_t idx) {
    return slice(tape, z, {0, idx * hc, 0, 0}, {n, hc, zh, zw});
  };
  Tensor<S> gi = sigmoid(tape, gate(0));
  Tensor<S> gf = sigmoid(tape, gate(1));
  Tensor<S> gg = tanh_(tape, gate(2));
  Tensor<S> go = sigmoid(tape, gate(3));
  Tensor<S> c_new = add(tape, mul(tape, gf, c), mul(tape, gi, gg));
  Tensor<S> h_new = mul(tape, go, tanh_(tape, c_new));
  return {h_new, c_new};
}

}  // namespace ops

}  // namespace lumenpose

#include "maaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace maaf {

namespace {

thread_local Tape* g_tape = nullptr;
thread_local KinkRecorder* g_kink = nullptr;

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (*t && (*t)->requires_grad) return true;
  }
  return false;
}

// Marks `out` as differentiable and records `bw` if a tape is active.
void maybe_record(const Tensor& out, bool inputs_need_grad,
                  std::function<void()> bw) {
  if (!inputs_need_grad) return;
  out->requires_grad = true;
  if (g_tape != nullptr) {
    g_tape->record(out, std::move(bw));
  }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw Error(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
              " vs " + shape_str(b->shape));
}

void require_2d(const char* op, const Tensor& t) {
  if (t->shape.size() != 2) {
    throw Error(std::string(op) + ": expected 2-D tensor, got shape " +
                shape_str(t->shape));
  }
}

}  // namespace

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (std::size_t e : shape) p *= e;
  return p;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor tensor(std::vector<std::size_t> shape, std::vector<real> values,
              bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw Error("tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(values.size()) + " values");
  }
  auto t = std::make_shared<TensorData>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

Tensor zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return tensor(std::move(shape), std::vector<real>(n, real(0)),
                requires_grad);
}

Tensor full(std::vector<std::size_t> shape, real v, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return tensor(std::move(shape), std::vector<real>(n, v), requires_grad);
}

Tensor scalar(real v, bool requires_grad) {
  return tensor({1}, {v}, requires_grad);
}

void Tape::record(const Tensor& out, std::function<void()> bw) {
  out->tape = this;
  out->tape_gen = gen_;
  outputs_.push_back(out);
  nodes_.push_back(std::move(bw));
}

void Tape::clear() {
  nodes_.clear();
  outputs_.clear();
  ++gen_;
}

void Tape::backward(const Tensor& loss) {
  if (loss->size() != 1) {
    throw Error("backward: loss must be scalar, got shape " +
                shape_str(loss->shape));
  }
  if (loss->tape != nullptr && loss->tape_gen != gen_) {
    throw Error("backward: stale node reference (tape was cleared)");
  }
  // intermediate grads are scratch space per backward pass; only leaves
  // (never recorded as outputs) accumulate across calls
  for (const auto& out : outputs_) {
    out->ensure_grad();
    out->zero_grad();
  }
  loss->grad[0] += real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_tape) { g_tape = &t; }
TapeScope::~TapeScope() { g_tape = prev_; }

KinkRecorder* active_kink_recorder() { return g_kink; }

KinkScope::KinkScope(KinkRecorder& r) : prev_(g_kink) { g_kink = &r; }
KinkScope::~KinkScope() { g_kink = prev_; }

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape) shape_error("add", a, b);
  auto out = zeros(a->shape);
  const std::size_t n = a->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i] + b->values[i];
  maybe_record(out, any_requires_grad({&a, &b}), [a, b, out, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
    }
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_2d("add_bias", x);
  if (b->shape.size() != 1 || b->shape[0] != x->shape[1]) {
    shape_error("add_bias", x, b);
  }
  const std::size_t n = x->shape[0], d = x->shape[1];
  auto out = zeros(x->shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = x->values[i * d + j] + b->values[j];
  maybe_record(out, any_requires_grad({&x, &b}), [x, b, out, n, d] {
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < n * d; ++i) x->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) b->grad[j] += out->grad[i * d + j];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape) shape_error("sub", a, b);
  auto out = zeros(a->shape);
  const std::size_t n = a->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i] - b->values[i];
  maybe_record(out, any_requires_grad({&a, &b}), [a, b, out, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape) shape_error("mul", a, b);
  auto out = zeros(a->shape);
  const std::size_t n = a->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = a->values[i] * b->values[i];
  maybe_record(out, any_requires_grad({&a, &b}), [a, b, out, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        a->grad[i] += out->grad[i] * b->values[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        b->grad[i] += out->grad[i] * a->values[i];
    }
  });
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s->size() != 1) {
    throw Error("scale_by: scale must be scalar, got shape " +
                shape_str(s->shape));
  }
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  const real sv = s->values[0];
  for (std::size_t i = 0; i < n; ++i) out->values[i] = x->values[i] * sv;
  maybe_record(out, any_requires_grad({&x, &s}), [x, s, out, n, sv] {
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * sv;
    }
    if (s->requires_grad) {
      s->ensure_grad();
      real acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += out->grad[i] * x->values[i];
      s->grad[0] += acc;
    }
  });
  return out;
}

Tensor scale_const(const Tensor& x, real c) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = x->values[i] * c;
  maybe_record(out, x->requires_grad, [x, out, n, c] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * c;
  });
  return out;
}

// ---- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = trans_a ? a->shape[1] : a->shape[0];
  const std::size_t k = trans_a ? a->shape[0] : a->shape[1];
  const std::size_t kb = trans_b ? b->shape[1] : b->shape[0];
  const std::size_t n = trans_b ? b->shape[0] : b->shape[1];
  if (k != kb) shape_error("matmul", a, b);

  auto out = zeros({m, n});
  // element access honoring transpose flags
  auto aval = [&](std::size_t i, std::size_t j) -> real {
    return trans_a ? a->values[j * a->shape[1] + i]
                   : a->values[i * a->shape[1] + j];
  };
  auto bval = [&](std::size_t i, std::size_t j) -> real {
    return trans_b ? b->values[j * b->shape[1] + i]
                   : b->values[i * b->shape[1] + j];
  };
  for (std::size_t i = 0; i < m; ++i) {
    real* orow = &out->values[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const real av = aval(i, p);
      if (av == real(0)) continue;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * bval(p, j);
    }
  }
  maybe_record(out, any_requires_grad({&a, &b}),
               [a, b, out, m, n, k, trans_a, trans_b] {
    auto aval = [&](std::size_t i, std::size_t j) -> real {
      return trans_a ? a->values[j * a->shape[1] + i]
                     : a->values[i * a->shape[1] + j];
    };
    auto bval = [&](std::size_t i, std::size_t j) -> real {
      return trans_b ? b->values[j * b->shape[1] + i]
                     : b->values[i * b->shape[1] + j];
    };
    if (a->requires_grad) {
      a->ensure_grad();
      // dA[i,p] (logical) = sum_j dOut[i,j] * B[p,j]
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          real acc = 0;
          const real* gorow = &out->grad[i * n];
          for (std::size_t j = 0; j < n; ++j) acc += gorow[j] * bval(p, j);
          if (trans_a)
            a->grad[p * a->shape[1] + i] += acc;
          else
            a->grad[i * a->shape[1] + p] += acc;
        }
      }
    }
    if (b->requires_grad) {
      b->ensure_grad();
      // dB[p,j] (logical) = sum_i A[i,p] * dOut[i,j]
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
          real acc = 0;
          for (std::size_t i = 0; i < m; ++i) acc += aval(i, p) * out->grad[i * n + j];
          if (trans_b)
            b->grad[j * b->shape[1] + p] += acc;
          else
            b->grad[p * b->shape[1] + j] += acc;
        }
      }
    }
  });
  return out;
}

// ---- structure ops --------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  std::size_t d = 0, total = 0;
  for (const auto& p : parts) {
    require_2d("concat_rows", p);
    if (d == 0) d = p->shape[1];
    if (p->shape[1] != d) {
      throw Error("concat_rows: column mismatch " + shape_str(parts[0]->shape) +
                  " vs " + shape_str(p->shape));
    }
    total += p->shape[0];
  }
  auto out = zeros({total, d});
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(),
              out->values.begin() + row * d);
    row += p->shape[0];
  }
  bool needs = false;
  for (const auto& p : parts) needs = needs || p->requires_grad;
  maybe_record(out, needs, [parts, out, d] {
    std::size_t row = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        p->ensure_grad();
        const std::size_t n = p->size();
        for (std::size_t i = 0; i < n; ++i)
          p->grad[i] += out->grad[row * d + i];
      }
      row += p->shape[0];
    }
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  std::size_t n = parts[0]->shape.size() == 2 ? parts[0]->shape[0] : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d("concat_cols", p);
    if (p->shape[0] != n) {
      throw Error("concat_cols: row mismatch " + shape_str(parts[0]->shape) +
                  " vs " + shape_str(p->shape));
    }
    total += p->shape[1];
  }
  auto out = zeros({n, total});
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t d = p->shape[1];
    for (std::size_t i = 0; i < n; ++i)
      std::copy(p->values.begin() + i * d, p->values.begin() + (i + 1) * d,
                out->values.begin() + i * total + col);
    col += d;
  }
  bool needs = false;
  for (const auto& p : parts) needs = needs || p->requires_grad;
  maybe_record(out, needs, [parts, out, n, total] {
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t d = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            p->grad[i * d + j] += out->grad[i * total + col + j];
      }
      col += d;
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  require_2d("slice_rows", x);
  if (start + len > x->shape[0]) {
    throw Error("slice_rows: range [" + std::to_string(start) + "," +
                std::to_string(start + len) + ") out of " +
                shape_str(x->shape));
  }
  const std::size_t d = x->shape[1];
  auto out = zeros({len, d});
  std::copy(x->values.begin() + start * d, x->values.begin() + (start + len) * d,
            out->values.begin());
  maybe_record(out, x->requires_grad, [x, out, start, len, d] {
    x->ensure_grad();
    for (std::size_t i = 0; i < len * d; ++i)
      x->grad[start * d + i] += out->grad[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  require_2d("slice_cols", x);
  if (start + len > x->shape[1]) {
    throw Error("slice_cols: range [" + std::to_string(start) + "," +
                std::to_string(start + len) + ") out of " +
                shape_str(x->shape));
  }
  const std::size_t n = x->shape[0], d = x->shape[1];
  auto out = zeros({n, len});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(x->values.begin() + i * d + start,
              x->values.begin() + i * d + start + len,
              out->values.begin() + i * len);
  maybe_record(out, x->requires_grad, [x, out, start, len, n, d] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j)
        x->grad[i * d + start + j] += out->grad[i * len + j];
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
  if (shape_product(new_shape) != x->size()) {
    throw Error("reshape: cannot view " + shape_str(x->shape) + " as " +
                shape_str(new_shape));
  }
  auto out = tensor(std::move(new_shape), x->values);
  maybe_record(out, x->requires_grad, [x, out] {
    x->ensure_grad();
    const std::size_t n = x->size();
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
  });
  return out;
}

// ---- nonlinearities -------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_2d("softmax_rows", x);
  const std::size_t n = x->shape[0], d = x->shape[1];
  if (d == 0) throw Error("softmax_rows: empty axis");
  auto out = zeros(x->shape);
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = &x->values[i * d];
    real* orow = &out->values[i * d];
    real mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    real sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < d; ++j) orow[j] /= sum;
  }
  maybe_record(out, x->requires_grad, [x, out, n, d] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const real* y = &out->values[i * d];
      const real* gy = &out->grad[i * d];
      real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < d; ++j)
        x->grad[i * d + j] += y[j] * (gy[j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  real eps) {
  require_2d("layer_norm", x);
  const std::size_t n = x->shape[0], d = x->shape[1];
  if (gain->size() != d || bias->size() != d) {
    throw Error("layer_norm: gain/bias size must equal feature dim " +
                std::to_string(d));
  }
  auto out = zeros(x->shape);
  // saved per-row statistics for backward
  auto mean = std::make_shared<std::vector<real>>(n);
  auto rstd = std::make_shared<std::vector<real>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = &x->values[i * d];
    real m = 0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= real(d);
    real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var /= real(d);
    const real rs = real(1) / std::sqrt(var + eps);
    (*mean)[i] = m;
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = (row[j] - m) * rs * gain->values[j] + bias->values[j];
  }
  maybe_record(out, any_requires_grad({&x, &gain, &bias}),
               [x, gain, bias, out, n, d, mean, rstd] {
    for (std::size_t i = 0; i < n; ++i) {
      const real m = (*mean)[i];
      const real rs = (*rstd)[i];
      const real* row = &x->values[i * d];
      const real* gy = &out->grad[i * d];
      if (gain->requires_grad || bias->requires_grad) {
        gain->ensure_grad();
        bias->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) {
          const real xh = (row[j] - m) * rs;
          if (gain->requires_grad) gain->grad[j] += gy[j] * xh;
          if (bias->requires_grad) bias->grad[j] += gy[j];
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        // dL/dx = rs * (g*gy - mean(g*gy) - xh * mean(g*gy*xh))
        real s1 = 0, s2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const real xh = (row[j] - m) * rs;
          const real t = gy[j] * gain->values[j];
          s1 += t;
          s2 += t * xh;
        }
        s1 /= real(d);
        s2 /= real(d);
        for (std::size_t j = 0; j < d; ++j) {
          const real xh = (row[j] - m) * rs;
          const real t = gy[j] * gain->values[j];
          x->grad[i * d + j] += rs * (t - s1 - xh * s2);
        }
      }
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i)
    out->values[i] = x->values[i] > real(0) ? x->values[i] : real(0);
  if (g_kink != nullptr) {
    for (std::size_t i = 0; i < n; ++i)
      g_kink->marks.push_back(x->values[i] > real(0) ? 1 : 0);
  }
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      if (x->values[i] > real(0)) x->grad[i] += out->grad[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i)
    out->values[i] = real(1) / (real(1) + std::exp(-x->values[i]));
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const real y = out->values[i];
      x->grad[i] += out->grad[i] * y * (real(1) - y);
    }
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = std::tanh(x->values[i]);
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const real y = out->values[i];
      x->grad[i] += out->grad[i] * (real(1) - y * y);
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, real p, Rng& rng, bool training) {
  if (p < real(0) || p >= real(1)) {
    throw Error("dropout: rate must be in [0,1), got " + std::to_string(p));
  }
  if (!training || p == real(0)) return x;
  const std::size_t n = x->size();
  auto out = zeros(x->shape);
  // inverted dropout: scale kept units by 1/(1-p); eval path is identity
  auto mask = std::make_shared<std::vector<real>>(n);
  const real inv = real(1) / (real(1) - p);
  for (std::size_t i = 0; i < n; ++i) {
    const real keep = rng.uniform() >= p ? inv : real(0);
    (*mask)[i] = keep;
    out->values[i] = x->values[i] * keep;
  }
  maybe_record(out, x->requires_grad, [x, out, n, mask] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      x->grad[i] += out->grad[i] * (*mask)[i];
  });
  return out;
}

Tensor embedding_lookup(const std::vector<int>& ids, const Tensor& table) {
  require_2d("embedding_lookup", table);
  const std::size_t v = table->shape[0], d = table->shape[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw Error("embedding_lookup: index " + std::to_string(id) +
                  " out of vocabulary size " + std::to_string(v));
    }
  }
  auto out = zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table->values.begin() + ids[i] * d,
              table->values.begin() + (ids[i] + 1) * d,
              out->values.begin() + i * d);
  maybe_record(out, table->requires_grad, [ids, table, out, d] {
    table->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        table->grad[ids[i] * d + j] += out->grad[i * d + j];
  });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require_2d("mean_rows", x);
  const std::size_t n = x->shape[0], d = x->shape[1];
  if (n == 0) throw Error("mean_rows: empty input");
  auto out = zeros({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out->values[j] += x->values[i * d + j];
  for (std::size_t j = 0; j < d; ++j) out->values[j] /= real(n);
  maybe_record(out, x->requires_grad, [x, out, n, d] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        x->grad[i * d + j] += out->grad[j] / real(n);
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  const std::size_t n = x->size();
  if (n == 0) throw Error("mean_all: empty input");
  auto out = scalar(0);
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x->values[i];
  out->values[0] = acc / real(n);
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[0] / real(n);
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  const std::size_t n = x->size();
  auto out = scalar(0);
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x->values[i];
  out->values[0] = acc;
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[0];
  });
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_2d("l2_normalize_rows", x);
  const std::size_t n = x->shape[0], d = x->shape[1];
  auto out = zeros(x->shape);
  auto norms = std::make_shared<std::vector<real>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = &x->values[i * d];
    real sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
    const real nrm = std::sqrt(sq);
    if (nrm <= real(1e-30)) {
      throw Error("l2_normalize_rows: row " + std::to_string(i) +
                  " has vanishing norm");
    }
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) out->values[i * d + j] = row[j] / nrm;
  }
  maybe_record(out, x->requires_grad, [x, out, n, d, norms] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const real* y = &out->values[i * d];
      const real* gy = &out->grad[i * d];
      const real nrm = (*norms)[i];
      real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < d; ++j)
        x->grad[i * d + j] += (gy[j] - y[j] * dot) / nrm;
    }
  });
  return out;
}

Tensor log(const Tensor& x) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) {
    if (x->values[i] <= real(0)) {
      throw Error("log: non-positive input at index " + std::to_string(i));
    }
    out->values[i] = std::log(x->values[i]);
  }
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      x->grad[i] += out->grad[i] / x->values[i];
  });
  return out;
}

Tensor exp(const Tensor& x) {
  auto out = zeros(x->shape);
  const std::size_t n = x->size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = std::exp(x->values[i]);
  maybe_record(out, x->requires_grad, [x, out, n] {
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      x->grad[i] += out->grad[i] * out->values[i];
  });
  return out;
}

// ---- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  if (x->shape.size() != 3 || w->shape.size() != 4) {
    throw Error("conv2d: expected x [C,H,W] and w [Co,Ci,kh,kw], got " +
                shape_str(x->shape) + " and " + shape_str(w->shape));
  }
  const std::size_t ci = x->shape[0], h = x->shape[1], wd = x->shape[2];
  const std::size_t co = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (w->shape[1] != ci) shape_error("conv2d", x, w);
  if (b->size() != co) {
    throw Error("conv2d: bias size " + std::to_string(b->size()) +
                " != out channels " + std::to_string(co));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  auto out = zeros({co, oh, ow});
  for (std::size_t c0 = 0; c0 < co; ++c0) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        real acc = b->values[c0];
        for (std::size_t c1 = 0; c1 < ci; ++c1) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const real* xrow = &x->values[(c1 * h + iy) * wd];
            const real* wrow = &w->values[((c0 * ci + c1) * kh + ky) * kw];
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              acc += xrow[ix] * wrow[kx];
            }
          }
        }
        out->values[(c0 * oh + oy) * ow + ox] = acc;
      }
    }
  }
  maybe_record(out, any_requires_grad({&x, &w, &b}),
               [x, w, b, out, ci, h, wd, co, kh, kw, oh, ow, stride, pad] {
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    for (std::size_t c0 = 0; c0 < co; ++c0) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const real g = out->grad[(c0 * oh + oy) * ow + ox];
          if (g == real(0)) continue;
          if (b->requires_grad) b->grad[c0] += g;
          for (std::size_t c1 = 0; c1 < ci; ++c1) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                const std::size_t xi = (c1 * h + iy) * wd + ix;
                const std::size_t wi = ((c0 * ci + c1) * kh + ky) * kw + kx;
                if (x->requires_grad) x->grad[xi] += g * w->values[wi];
                if (w->requires_grad) w->grad[wi] += g * x->values[xi];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor maxpool2d(const Tensor& x, int k, int stride) {
  if (x->shape.size() != 3) {
    throw Error("maxpool2d: expected [C,H,W], got " + shape_str(x->shape));
  }
  const std::size_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
  const std::size_t oh = (h - k) / stride + 1;
  const std::size_t ow = (w - k) / stride + 1;
  auto out = zeros({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        real best = -std::numeric_limits<real>::infinity();
        std::size_t bi = 0;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t xi =
                (ch * h + oy * stride + ky) * w + ox * stride + kx;
            if (x->values[xi] > best) {
              best = x->values[xi];
              bi = xi;
            }
          }
        }
        const std::size_t oi = (ch * oh + oy) * ow + ox;
        out->values[oi] = best;
        (*argmax)[oi] = bi;
      }
    }
  }
  if (g_kink != nullptr) {
    for (std::size_t i = 0; i < argmax->size(); ++i)
      g_kink->marks.push_back(static_cast<std::int64_t>((*argmax)[i]));
  }
  maybe_record(out, x->requires_grad, [x, out, argmax] {
    x->ensure_grad();
    for (std::size_t i = 0; i < argmax->size(); ++i)
      x->grad[(*argmax)[i]] += out->grad[i];
  });
  return out;
}

// ---- loss -----------------------------------------------------------------

Tensor batch_softmax_ce(const Tensor& logits) {
  require_2d("batch_softmax_ce", logits);
  const std::size_t n = logits->shape[0];
  if (logits->shape[1] != n) {
    throw Error("batch_softmax_ce: logits must be square, got " +
                shape_str(logits->shape));
  }
  if (n < 2) throw Error("batch_softmax_ce: batch size must be >= 2");
  auto out = scalar(0);
  auto probs = std::make_shared<std::vector<real>>(n * n);
  real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real* row = &logits->values[i * n];
    real mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      (*probs)[i * n + j] = std::exp(row[j] - mx);
      sum += (*probs)[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= sum;
    loss += -(row[i] - mx - std::log(sum));
  }
  out->values[0] = loss / real(n);
  maybe_record(out, logits->requires_grad, [logits, out, n, probs] {
    logits->ensure_grad();
    const real g = out->grad[0] / real(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        real p = (*probs)[i * n + j];
        if (j == i) p -= real(1);
        logits->grad[i * n + j] += g * p;
      }
    }
  });
  return out;
}

}  // namespace maaf

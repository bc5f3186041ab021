#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "maaf/rng.hpp"

namespace maaf {

#ifdef MAAF_REAL32
using real = float;
#else
using real = double;
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<real> values;
  bool requires_grad = false;
  std::vector<real> grad;  // empty until first needed
  Tape* tape = nullptr;
  std::uint64_t tape_gen = 0;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), real(0));
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(values.size(), real(0));
  }
};

using Tensor = std::shared_ptr<TensorData>;

Tensor tensor(std::vector<std::size_t> shape, std::vector<real> values,
              bool requires_grad = false);
Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
Tensor full(std::vector<std::size_t> shape, real v, bool requires_grad = false);
Tensor scalar(real v, bool requires_grad = false);

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Reverse-mode tape. Nodes are appended in forward order; backward runs
// them in reverse. Clearing the tape bumps a generation counter so that
// tensors recorded on the old tape are rejected by backward().
class Tape {
 public:
  void record(const Tensor& out, std::function<void()> bw);
  void clear();
  std::uint64_t generation() const { return gen_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Seeds grad(loss)=1 and runs all recorded nodes in reverse. Repeated
  // calls without zeroing accumulate into leaf grads.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
  std::uint64_t gen_ = 1;
};

Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Records activation-pattern marks (relu signs, maxpool argmax) during a
// forward pass. The gradient checker compares marks between the +eps and
// -eps evaluations to detect a kink crossing and exclude that coordinate.
struct KinkRecorder {
  std::vector<std::int64_t> marks;
};

KinkRecorder* active_kink_recorder();

class KinkScope {
 public:
  explicit KinkScope(KinkRecorder& r);
  ~KinkScope();
  KinkScope(const KinkScope&) = delete;
  KinkScope& operator=(const KinkScope&) = delete;

 private:
  KinkRecorder* prev_;
};

// ---- op catalog -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);     // [n,d] + [d]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale_by(const Tensor& x, const Tensor& s);     // s is scalar tensor
Tensor scale_const(const Tensor& x, real c);
// 2-D matrix product with optional operand transposes
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape);
Tensor softmax_rows(const Tensor& x);                  // softmax over last axis
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  real eps = real(1e-5));
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor dropout(const Tensor& x, real p, Rng& rng, bool training);
Tensor embedding_lookup(const std::vector<int>& ids, const Tensor& table);
Tensor mean_rows(const Tensor& x);                     // [n,d] -> [1,d]
Tensor mean_all(const Tensor& x);                      // -> [1]
Tensor sum_all(const Tensor& x);                       // -> [1]
Tensor l2_normalize_rows(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor maxpool2d(const Tensor& x, int k, int stride);
// logits [N,N]; mean over i of -log softmax_j(logits[i,:])[i]
Tensor batch_softmax_ce(const Tensor& logits);

}  // namespace maaf

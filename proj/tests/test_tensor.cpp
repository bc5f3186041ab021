#include <doctest.h>

#include <cmath>

#include "maaf/tensor.hpp"

using namespace maaf;

namespace {

Tensor rnd(std::vector<std::size_t> shape, Rng& rng, real lo = -1,
           real hi = 1, bool grad = false) {
  std::vector<real> v(shape_product(shape));
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return tensor(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("softmax of a uniform row is uniform") {
  Tensor x = tensor({1, 3}, {0, 0, 0});
  Tensor y = softmax_rows(x);
  for (int i = 0; i < 3; ++i)
    CHECK(y->values[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(1);
  Tensor x = rnd({4, 6}, rng, -5, 5);
  Tensor y = softmax_rows(x);
  for (int i = 0; i < 4; ++i) {
    real s = 0;
    for (int j = 0; j < 6; ++j) s += y->values[i * 6 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor shifted = tensor(x->shape, x->values);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) shifted->values[i * 6 + j] += real(100);
  Tensor y2 = softmax_rows(shifted);
  for (std::size_t i = 0; i < y->size(); ++i)
    CHECK(y2->values[i] == doctest::Approx(y->values[i]).epsilon(1e-9));
}

TEST_CASE("softmax over an empty axis is rejected") {
  Tensor x = zeros({0, 3});
  CHECK_NOTHROW(softmax_rows(x));  // zero rows is fine
  Tensor y = zeros({3, 0});
  CHECK_THROWS_AS(softmax_rows(y), Error);
}

TEST_CASE("layer normalization golden values for [1,2,3]") {
  Tensor x = tensor({1, 3}, {1, 2, 3});
  Tensor g = tensor({3}, {1, 1, 1});
  Tensor b = tensor({3}, {0, 0, 0});
  Tensor y = layer_norm(x, g, b, 0);
  CHECK(y->values[0] == doctest::Approx(-1.2247448713915890).epsilon(1e-12));
  CHECK(y->values[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y->values[2] == doctest::Approx(1.2247448713915890).epsilon(1e-12));
}

TEST_CASE("layer normalization applies gain and bias per feature") {
  Tensor x = tensor({1, 3}, {1, 2, 3});
  Tensor g = tensor({3}, {2, 2, 2});
  Tensor b = tensor({3}, {5, 5, 5});
  Tensor y = layer_norm(x, g, b, 0);
  CHECK(y->values[0] == doctest::Approx(5 - 2 * 1.2247448713915890));
  CHECK(y->values[1] == doctest::Approx(5.0));
  CHECK(y->values[2] == doctest::Approx(5 + 2 * 1.2247448713915890));
}

TEST_CASE("matrix product with the identity is the identity map") {
  Rng rng(2);
  Tensor a = rnd({3, 3}, rng);
  Tensor eye = zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye->values[i * 3 + i] = 1;
  Tensor y = matmul(a, eye);
  for (std::size_t i = 0; i < a->size(); ++i)
    CHECK(y->values[i] == doctest::Approx(a->values[i]).epsilon(1e-15));
}

TEST_CASE("matmul transpose flags agree with an explicit transpose") {
  Rng rng(3);
  Tensor a = rnd({3, 4}, rng);
  Tensor b = rnd({4, 5}, rng);
  Tensor at = zeros({4, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) at->values[j * 3 + i] = a->values[i * 4 + j];
  Tensor bt = zeros({5, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) bt->values[j * 4 + i] = b->values[i * 5 + j];
  Tensor ref = matmul(a, b);
  for (const Tensor& y : {matmul(at, b, true, false),
                          matmul(a, bt, false, true),
                          matmul(at, bt, true, true)}) {
    REQUIRE(y->shape == ref->shape);
    for (std::size_t i = 0; i < ref->size(); ++i)
      CHECK(y->values[i] == doctest::Approx(ref->values[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul small hand-checked product") {
  Tensor a = tensor({2, 2}, {1, 2, 3, 4});
  Tensor b = tensor({2, 2}, {5, 6, 7, 8});
  Tensor y = matmul(a, b);
  CHECK(y->values[0] == 19);
  CHECK(y->values[1] == 22);
  CHECK(y->values[2] == 43);
  CHECK(y->values[3] == 50);
}

TEST_CASE("gradient of sum(x*x) is 2x") {
  Tensor x = tensor({2}, {1, 2}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_all(mul(x, x));
    tape.backward(loss);
  }
  CHECK(x->grad[0] == doctest::Approx(2.0));
  CHECK(x->grad[1] == doctest::Approx(4.0));
}

TEST_CASE("repeated backward accumulates into leaf gradients") {
  Tensor x = tensor({2}, {1, 2}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_all(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
  }
  CHECK(x->grad[0] == doctest::Approx(4.0));
  CHECK(x->grad[1] == doctest::Approx(8.0));
}

TEST_CASE("backward after tape clear is rejected") {
  Tensor x = tensor({2}, {1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(mul(x, x));
  }
  tape.clear();
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("ops computed off the loss path leave gradients untouched") {
  Tensor x = tensor({2}, {1, 2}, true);
  Tensor y = tensor({2}, {3, 4}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    mul(y, y);  // recorded but unused
    Tensor loss = sum_all(mul(x, x));
    tape.backward(loss);
  }
  y->ensure_grad();
  CHECK(y->grad[0] == 0);
  CHECK(y->grad[1] == 0);
}

TEST_CASE("conv2d matches a naive sliding-window reference") {
  Rng rng(4);
  Tensor x = rnd({2, 5, 5}, rng);
  Tensor w = rnd({3, 2, 3, 3}, rng);
  Tensor b = rnd({3}, rng);
  const int stride = 2, pad = 1;
  Tensor y = conv2d(x, w, b, stride, pad);
  const int oh = (5 + 2 * pad - 3) / stride + 1;
  REQUIRE(y->shape == std::vector<std::size_t>{3, std::size_t(oh),
                                               std::size_t(oh)});
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < oh; ++ox) {
        real acc = b->values[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += x->values[(ci * 5 + iy) * 5 + ix] *
                     w->values[((co * 2 + ci) * 3 + ky) * 3 + kx];
            }
        CHECK(y->values[(co * oh + oy) * oh + ox] ==
              doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("maxpool2d picks window maxima") {
  Tensor x = tensor({1, 4, 4}, {1, 2, 3, 4,
                                5, 6, 7, 8,
                                9, 10, 11, 12,
                                13, 14, 15, 16});
  Tensor y = maxpool2d(x, 2, 2);
  REQUIRE(y->shape == std::vector<std::size_t>{1, 2, 2});
  CHECK(y->values[0] == 6);
  CHECK(y->values[1] == 8);
  CHECK(y->values[2] == 14);
  CHECK(y->values[3] == 16);
}

TEST_CASE("batch cross-entropy on identical embeddings is ln N") {
  for (std::size_t n : {2u, 4u, 7u}) {
    Tensor logits = zeros({n, n});
    Tensor loss = batch_softmax_ce(logits);
    CHECK(loss->values[0] == doctest::Approx(std::log(double(n))).epsilon(1e-12));
  }
}

TEST_CASE("batch cross-entropy matches a direct log-softmax computation") {
  Rng rng(5);
  Tensor logits = rnd({4, 4}, rng, -3, 3);
  Tensor loss = batch_softmax_ce(logits);
  double acc = 0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0;
    for (int j = 0; j < 4; ++j)
      denom += std::exp(double(logits->values[i * 4 + j]));
    acc += -std::log(std::exp(double(logits->values[i * 4 + i])) / denom);
  }
  CHECK(loss->values[0] == doctest::Approx(acc / 4).epsilon(1e-12));
}

TEST_CASE("batch cross-entropy rejects non-square and tiny batches") {
  CHECK_THROWS_AS(batch_softmax_ce(zeros({3, 4})), Error);
  CHECK_THROWS_AS(batch_softmax_ce(zeros({1, 1})), Error);
}

TEST_CASE("l2 row normalization produces unit rows and rejects zeros") {
  Rng rng(6);
  Tensor x = rnd({3, 5}, rng, real(0.1), real(2));
  Tensor y = l2_normalize_rows(x);
  for (int i = 0; i < 3; ++i) {
    real s = 0;
    for (int j = 0; j < 5; ++j) s += y->values[i * 5 + j] * y->values[i * 5 + j];
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(l2_normalize_rows(zeros({1, 4})), Error);
}

TEST_CASE("dropout is the identity in inference mode and at p=0") {
  Rng rng(7);
  Tensor x = rnd({4, 4}, rng);
  Rng d1(9), d2(9);
  Tensor y1 = dropout(x, real(0.5), d1, false);
  Tensor y2 = dropout(x, real(0), d2, true);
  for (std::size_t i = 0; i < x->size(); ++i) {
    CHECK(y1->values[i] == x->values[i]);
    CHECK(y2->values[i] == x->values[i]);
  }
}

TEST_CASE("dropout in training scales kept units by 1/(1-p)") {
  Rng rng(8);
  Tensor x = rnd({10, 10}, rng, real(0.5), real(1.5));
  Rng dr(10);
  const real p = real(0.3);
  Tensor y = dropout(x, p, dr, true);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x->size(); ++i) {
    if (y->values[i] == 0) continue;
    ++kept;
    CHECK(y->values[i] ==
          doctest::Approx(x->values[i] / (1 - p)).epsilon(1e-12));
  }
  CHECK(kept > 40);
  CHECK(kept < 100);
  CHECK_THROWS_AS(dropout(x, real(1), dr, true), Error);
}

TEST_CASE("elementwise math ops match the standard library") {
  Rng rng(11);
  Tensor x = rnd({3, 3}, rng, real(0.2), real(2));
  Tensor lg = maaf::log(x);
  Tensor ex = maaf::exp(x);
  Tensor sg = sigmoid(x);
  Tensor th = maaf::tanh(x);
  for (std::size_t i = 0; i < x->size(); ++i) {
    const double v = x->values[i];
    CHECK(lg->values[i] == doctest::Approx(std::log(v)).epsilon(1e-12));
    CHECK(ex->values[i] == doctest::Approx(std::exp(v)).epsilon(1e-12));
    CHECK(sg->values[i] ==
          doctest::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-12));
    CHECK(th->values[i] == doctest::Approx(std::tanh(v)).epsilon(1e-12));
  }
}

TEST_CASE("slicing and concatenation round-trip") {
  Rng rng(12);
  Tensor x = rnd({5, 4}, rng);
  Tensor top = slice_rows(x, 0, 2);
  Tensor bot = slice_rows(x, 2, 3);
  Tensor rt = concat_rows({top, bot});
  for (std::size_t i = 0; i < x->size(); ++i)
    CHECK(rt->values[i] == x->values[i]);
  Tensor left = slice_cols(x, 0, 1);
  Tensor right = slice_cols(x, 1, 3);
  Tensor ct = concat_cols({left, right});
  for (std::size_t i = 0; i < x->size(); ++i)
    CHECK(ct->values[i] == x->values[i]);
}

TEST_CASE("shape violations raise descriptive errors") {
  CHECK_THROWS_AS(add(zeros({2, 3}), zeros({3, 2})), Error);
  CHECK_THROWS_AS(matmul(zeros({2, 3}), zeros({2, 3})), Error);
  CHECK_THROWS_AS(reshape(zeros({2, 3}), {4, 2}), Error);
  CHECK_THROWS_AS(slice_rows(zeros({2, 3}), 1, 5), Error);
  CHECK_THROWS_AS(tensor({2, 2}, {1, 2, 3}), Error);
}

TEST_CASE("mean and sum reductions") {
  Tensor x = tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor mr = mean_rows(x);
  CHECK(mr->values[0] == doctest::Approx(2.5));
  CHECK(mr->values[1] == doctest::Approx(3.5));
  CHECK(mr->values[2] == doctest::Approx(4.5));
  CHECK(mean_all(x)->values[0] == doctest::Approx(3.5));
  CHECK(sum_all(x)->values[0] == doctest::Approx(21.0));
}

TEST_CASE("embedding lookup copies the selected rows") {
  Tensor table = tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = embedding_lookup({2, 0, 2}, table);
  REQUIRE(y->shape == std::vector<std::size_t>{3, 2});
  CHECK(y->values[0] == 5);
  CHECK(y->values[1] == 6);
  CHECK(y->values[2] == 1);
  CHECK(y->values[5] == 6);
  CHECK_THROWS_AS(embedding_lookup({3}, table), Error);
}

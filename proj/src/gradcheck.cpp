#include "maaf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace maaf {

real rel_err(real a, real b) {
  const real denom =
      std::max(std::max(std::abs(a), std::abs(b)), real(1e-8));
  return std::abs(a - b) / denom;
}

GradCheckReport gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& leaves, real eps,
                          real tol, std::size_t max_coords_per_leaf,
                          Rng& rng) {
  if (sizeof(real) != 8) {
    throw Error("gradcheck requires the 64-bit build");
  }

  // Fixed projection weights so a non-scalar f reduces to a scalar loss.
  Tensor probe = f();
  std::vector<real> w(probe->size());
  for (auto& v : w) v = static_cast<real>(rng.uniform(-1.0, 1.0));

  auto weighted = [&](const Tensor& t) {
    real acc = 0;
    for (std::size_t i = 0; i < t->size(); ++i) acc += t->values[i] * w[i];
    return acc;
  };

  // analytic gradients
  Tape tape;
  std::vector<std::vector<real>> analytic(leaves.size());
  {
    TapeScope scope(tape);
    Tensor out = f();
    if (out->size() != w.size()) {
      throw Error("gradcheck: f() output size changed between calls");
    }
    Tensor wt = tensor(out->shape, w);
    Tensor loss = sum_all(mul(out, wt));
    for (const auto& l : leaves) l->zero_grad();
    tape.backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      leaves[li]->ensure_grad();
      analytic[li] = leaves[li]->grad;
    }
  }
  tape.clear();

  GradCheckReport rep;
  rep.pass = true;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& leaf = leaves[li];
    const std::size_t n = leaf->size();
    // deterministic coordinate sample
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_leaf) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords_per_leaf; ++i)
        coords.push_back(rng.below(n));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (std::size_t ci : coords) {
      const real saved = leaf->values[ci];
      KinkRecorder plus_rec, minus_rec;
      real fplus, fminus;
      {
        leaf->values[ci] = saved + eps;
        KinkScope ks(plus_rec);
        fplus = weighted(f());
      }
      {
        leaf->values[ci] = saved - eps;
        KinkScope ks(minus_rec);
        fminus = weighted(f());
      }
      leaf->values[ci] = saved;
      if (plus_rec.marks != minus_rec.marks) {
        ++rep.excluded;
        continue;
      }
      const real numeric = (fplus - fminus) / (2 * eps);
      const real e = rel_err(numeric, analytic[li][ci]);
      rep.max_rel_err = std::max(rep.max_rel_err, e);
      ++rep.checked;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace maaf

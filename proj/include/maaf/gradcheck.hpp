#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maaf/tensor.hpp"

namespace maaf {

struct GradCheckReport {
  real max_rel_err = 0;
  bool pass = false;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // coordinates skipped for kink proximity
};

// Compares reverse-mode gradients of sum(f() * W) against central finite
// differences, for a fixed random projection W. `leaves` are the tensors
// whose coordinates are perturbed; each must feed into f() by capture.
// Coordinates whose +eps/-eps evaluations cross a relu/maxpool kink are
// excluded rather than failed. f must be deterministic (dropout off).
// Requires the 64-bit build; finite differences are unreliable in float.
GradCheckReport gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& leaves, real eps,
                          real tol, std::size_t max_coords_per_leaf, Rng& rng);

real rel_err(real a, real b);

}  // namespace maaf

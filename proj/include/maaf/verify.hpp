#pragma once

#include <iosfwd>

#include "maaf/model.hpp"

namespace maaf {

// Finite-difference checks for every differentiable op, one line each.
bool run_gradcheck_ops(std::ostream& out);

// Finite-difference check of the full query-embedding -> batch-loss
// composition for a given model shape (dropout forced off).
bool run_gradcheck_model(std::ostream& out, int d, int blocks, int heads,
                         std::size_t coords_per_leaf);

}  // namespace maaf

#pragma once

#include <string>
#include <vector>

#include "maaf/rng.hpp"
#include "maaf/tensor.hpp"

namespace maaf {

// Learning-rate group: conv-stack weights train at the image rate,
// everything else (projections included) at the "other" rate.
enum class ParamGroup { Image, Other };

struct ParamEntry {
  std::string name;
  Tensor value;
  ParamGroup group;
};

// Registry of all trainable tensors in a model, in a deterministic
// creation order. Checkpointing and the optimizer both key off it.
class ParamStore {
 public:
  Tensor create(const std::string& name, std::vector<std::size_t> shape,
                ParamGroup group, Rng& rng, bool trainable = true);
  Tensor create_const(const std::string& name,
                      std::vector<std::size_t> shape, real fill,
                      ParamGroup group, bool trainable = true);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  std::size_t total_parameters() const;
  void zero_grads();

 private:
  std::vector<ParamEntry> entries_;
};

// Glorot-style uniform init in +-sqrt(6/(fan_in+fan_out)).
void glorot_init(Tensor& t, Rng& rng);

}  // namespace maaf

#include "maaf/params.hpp"

#include <cmath>

namespace maaf {

void glorot_init(Tensor& t, Rng& rng) {
  std::size_t fan_in = 1, fan_out = 1;
  const auto& s = t->shape;
  if (s.size() == 2) {
    fan_in = s[0];
    fan_out = s[1];
  } else if (s.size() == 4) {
    // conv [Co,Ci,kh,kw]
    fan_in = s[1] * s[2] * s[3];
    fan_out = s[0] * s[2] * s[3];
  } else {
    fan_in = fan_out = t->size();
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t->values)
    v = static_cast<real>(rng.uniform(-bound, bound));
}

namespace {

void require_unique(const std::vector<ParamEntry>& entries,
                    const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) {
      // names key the checkpoint tensor directory
      throw Error("ParamStore: duplicate parameter name " + name);
    }
  }
}

}  // namespace

Tensor ParamStore::create(const std::string& name,
                          std::vector<std::size_t> shape, ParamGroup group,
                          Rng& rng, bool trainable) {
  require_unique(entries_, name);
  auto t = zeros(std::move(shape), trainable);
  glorot_init(t, rng);
  entries_.push_back({name, t, group});
  return t;
}

Tensor ParamStore::create_const(const std::string& name,
                                std::vector<std::size_t> shape, real fill,
                                ParamGroup group, bool trainable) {
  require_unique(entries_, name);
  auto t = full(std::move(shape), fill, trainable);
  entries_.push_back({name, t, group});
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw Error("ParamStore: no parameter named " + name);
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value->size();
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& e : entries_) e.value->zero_grad();
}

}  // namespace maaf

#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ust/errors.hpp"
#include "ust/rng.hpp"
#include "ust/tensor.hpp"

namespace ust {

// Ordered, named collection of trainable tensors. Registration order is the
// canonical order for the optimizer and for checkpoint layout.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  const Tensor* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Dense layer; weight rows are inputs so forward is x * w + b.
struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  static Linear create(ParamRegistry& reg, const std::string& name, int64_t in, int64_t out,
                       Rng& rng) {
    Linear l;
    double scale = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = reg.add(name + ".w", Tensor::randn({in, out}, rng, scale));
    l.b = reg.add(name + ".b", Tensor({out}));
    return l;
  }

  Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

// Affine layer-norm parameters (the normalization itself is a primitive).
struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams create(ParamRegistry& reg, const std::string& name, int64_t dim) {
    LayerNormParams p;
    p.gamma = reg.add(name + ".g", Tensor({dim}, 1.0));
    p.beta = reg.add(name + ".b", Tensor({dim}));
    return p;
  }

  Tensor forward(const Tensor& x, double eps = 1e-5) const {
    return add_rowvec(mul_rowvec(layer_norm(x, 1, eps), gamma), beta);
  }
};

}  // namespace ust

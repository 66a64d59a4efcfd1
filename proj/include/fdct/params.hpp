#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fdct/rng.hpp"
#include "fdct/tensor.hpp"
#include "fdct/tensor_io.hpp"

namespace fdct {

// Ordered name -> tensor registry. Insertion order is the optimizer's
// iteration order, so it must be deterministic across runs.
template <typename Real>
class ParamRegistry {
 public:
  TensorT<Real> add(const std::string& name, TensorT<Real> t) {
    if (find(name)) throw ValueError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    items_.emplace_back(name, t);
    return t;
  }

  TensorT<Real>* find(const std::string& name) {
    for (auto& [n, t] : items_)
      if (n == name) return &t;
    return nullptr;
  }

  const std::vector<std::pair<std::string, TensorT<Real>>>& items() const { return items_; }

  std::size_t size() const { return items_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  void save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto& [name, t] : items_) save_fdt(t, (fs::path(dir) / (name + ".fdt")).string());
  }

  void load(const std::string& dir) {
    namespace fs = std::filesystem;
    for (auto& [name, t] : items_) {
      const std::string path = (fs::path(dir) / (name + ".fdt")).string();
      TensorT<Real> loaded = load_fdt<Real>(path);
      if (loaded.shape() != t.shape())
        throw IoError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) +
                      ", expected " + shape_str(t.shape()));
      t.values_mut() = loaded.values();
    }
  }

 private:
  std::vector<std::pair<std::string, TensorT<Real>>> items_;
};

// Uniform(-limit, limit) with limit = 1/sqrt(fan_in).
template <typename Real>
TensorT<Real> init_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
  const double limit = 1.0 / std::sqrt(double(fan_in > 0 ? fan_in : 1));
  TensorT<Real> t = TensorT<Real>::zeros(std::move(shape));
  for (auto& v : t.values_mut()) v = Real(rng.uniform(-limit, limit));
  return t;
}

template <typename Real>
TensorT<Real> init_normal(Rng& rng, Shape shape, double stddev) {
  TensorT<Real> t = TensorT<Real>::zeros(std::move(shape));
  for (auto& v : t.values_mut()) v = Real(rng.normal(0.0, stddev));
  return t;
}

}  // namespace fdct

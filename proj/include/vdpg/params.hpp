#pragma once

#include <map>
#include <string>
#include <utility>

#include "vdpg/autodiff.hpp"
#include "vdpg/tensor.hpp"

namespace vdpg {

// Named trainable state. std::map keeps iteration order deterministic, which
// every checksum, checkpoint and gradient accumulation below relies on.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };

  using const_iterator = std::map<std::string, Entry>::const_iterator;

  void add(std::string name, Tensor value, bool trainable = true) {
    auto [it, inserted] =
        items_.emplace(std::move(name), Entry{std::move(value), trainable});
    if (!inserted)
      throw ContractError("ParamStore::add: duplicate parameter '" + it->first + "'");
  }

  bool contains(const std::string& name) const { return items_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end())
      throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second.value;
  }

  const Tensor& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end())
      throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second.value;
  }

  bool trainable(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end())
      throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second.trainable;
  }

  void set_trainable(const std::string& name, bool t) {
    auto it = items_.find(name);
    if (it == items_.end())
      throw ContractError("ParamStore: unknown parameter '" + name + "'");
    it->second.trainable = t;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : items_) n += e.value.size();
    return n;
  }

  const_iterator begin() const { return items_.begin(); }
  const_iterator end() const { return items_.end(); }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, e] : items_) {
      h = fnv1a64(name.data(), name.size(), h);
      h = e.value.hash(h);
    }
    return h;
  }

 private:
  std::map<std::string, Entry> items_;
};

// Parameters bound into a tape as leaves; handles are looked up by name.
class BoundParams {
 public:
  BoundParams() = default;

  BoundParams(Tape& tape, const ParamStore& params) : tape_(&tape) {
    for (const auto& [name, e] : params)
      vars_.emplace(name, tape.leaf(e.value, e.trainable));
  }

  Var operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end())
      throw ContractError("BoundParams: unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Var>& vars() const { return vars_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_ = nullptr;
  std::map<std::string, Var> vars_;
};

using GradMap = std::map<std::string, Tensor>;

inline GradMap collect_grads(const BoundParams& bound, const Gradients& g,
                             const ParamStore& params) {
  GradMap out;
  for (const auto& [name, var] : bound.vars()) {
    if (params.trainable(name)) out.emplace(name, g.grad(var));
  }
  return out;
}

}  // namespace vdpg

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace gk {

// Named, ordered flattening of all model parameters into one coordinate
// vector. Registration order is fixed by the model constructor, so offsets,
// snapshot manifests, and RNG draw order are stable across runs of the same
// config.
struct ParamInfo {
  std::string name;
  int ndim = 0;
  Shape shape{1, 1, 1, 1};
  int64_t off = 0;
  int64_t n = 0;
  bool decay = true;  // weight decay applies (false for layernorm gains/biases)
};

class ParamSet {
 public:
  int add(const std::string& name, int ndim, Shape shape, bool decay) {
    if (index_.count(name)) {
      throw std::runtime_error("ParamSet: duplicate name " + name);
    }
    ParamInfo p;
    p.name = name;
    p.ndim = ndim;
    p.shape = shape;
    p.off = total_;
    p.n = 1;
    for (int i = 0; i < ndim; ++i) p.n *= shape[size_t(i)];
    p.decay = decay;
    total_ += p.n;
    index_[name] = static_cast<int>(infos_.size());
    infos_.push_back(p);
    return static_cast<int>(infos_.size()) - 1;
  }

  const ParamInfo& info(int i) const { return infos_[size_t(i)]; }
  const ParamInfo& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::runtime_error("ParamSet: unknown parameter " + name);
    }
    return infos_[size_t(it->second)];
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  int count() const { return static_cast<int>(infos_.size()); }
  int64_t total() const { return total_; }
  const std::vector<ParamInfo>& infos() const { return infos_; }

 private:
  std::vector<ParamInfo> infos_;
  std::unordered_map<std::string, int> index_;
  int64_t total_ = 0;
};

}  // namespace gk

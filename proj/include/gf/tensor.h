#pragma once

// Dense float32 tensor used for parameter storage and file payloads.
// Differentiable computation happens in Graph (graph.h), which promotes
// these values to float64 internally; this type is deliberately dumb.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gf/common.h"

namespace gf {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
  }
  Tensor(std::vector<int> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    check(static_cast<int64_t>(data.size()) == numel_of(shape),
          "tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) {
      check(e > 0, "tensor: shape extents must be positive");
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  // Row-major 2-D accessors; rank-1 tensors behave as a single row.
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.size() == 2 ? shape[1] : shape.empty() ? 0 : shape[0]; }
  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
};

// Ordered collection of named parameters.  Creation order is part of the
// contract: initialization draws and checkpoint layout follow it, which is
// what makes reruns bit-identical.
class ParamSet {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape) {
    check(index_.find(name) == index_.end(), "param '", name, "' already exists");
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape));
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), "param '", name, "' not found");
    return tensors_[it->second];
  }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "param '", name, "' not found");
    return tensors_[it->second];
  }

  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor& at(size_t i) { return tensors_[i]; }
  const Tensor& at(size_t i) const { return tensors_[i]; }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  // name -> position in names_/tensors_
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace gf

#pragma once

#include <cassert>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prism/core/matrix.hpp"

namespace prism {

// A trainable tensor. Optimizer state lives alongside the value so the
// checkpoint can capture everything in one place.
template <class T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  Mat<T> adam_m;
  Mat<T> adam_v;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns all parameters of a model, addressable by dotted path.
template <class T>
class ParamStore {
 public:
  Param<T>* create(const std::string& name, Mat<T> init) {
    if (by_name_.count(name))
      throw std::runtime_error("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = std::move(init);
    p->grad = Mat<T>::Zero(p->value.rows(), p->value.cols());
    Param<T>* raw = p.get();
    by_name_[name] = raw;
    params_.push_back(std::move(p));
    return raw;
  }

  Param<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Param<T>>>& all() const { return params_; }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::map<std::string, Param<T>*> by_name_;
};

// Lightweight handle into a Graph. Only valid for the graph that created it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape over dense matrices. Each op records a closure
// that scatters the output gradient back into its inputs.
template <class T>
class Graph {
 public:
  using BackFn = std::function<void(Graph<T>&)>;

  Var constant(Mat<T> v) { return push(std::move(v), false); }

  Var leaf(Mat<T> v, bool needs_grad) { return push(std::move(v), needs_grad); }

  Var param(Param<T>& p) {
    Var v = push(p.value, true);
    bindings_.emplace_back(v.id, &p);
    return v;
  }

  Var make(Mat<T> value, bool needs_grad, BackFn back) {
    Var v = push(std::move(value), needs_grad);
    nodes_[v.id].backward = std::move(back);
    return v;
  }

  const Mat<T>& val(Var v) const { return nodes_[v.id].value; }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() target w.r.t. v. Zero matrix if untouched.
  Mat<T>& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Mat<T>& g) {
    if (!nodes_[v.id].needs_grad) return;
    grad(v) += g;
  }

  // Reverse sweep from a 1x1 loss node. Parameter gradients are accumulated
  // into their Param<T>::grad, so repeated calls (e.g. over a batch) sum.
  void backward(Var loss) {
    const Node& ln = nodes_[loss.id];
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw std::runtime_error("backward: loss must be a 1x1 node");
    grad(loss)(0, 0) += T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this);
    }
    for (auto& [id, p] : bindings_) {
      Node& n = nodes_[id];
      if (n.grad.size() != 0) p->grad += n.grad;
    }
  }

  void clear() {
    nodes_.clear();
    bindings_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    BackFn backward;
    bool needs_grad = false;
  };

  Var push(Mat<T> v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param<T>*>> bindings_;
};

}  // namespace prism

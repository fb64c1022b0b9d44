#pragma once

#include "ucm/attention.hpp"
#include "ucm/pe_warp.hpp"

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ucm {

/// Named trainable tensor. Vectors are stored as 1×n matrices.
template <typename T>
struct Param {
  RowMatrix<T> value;
  RowMatrix<T> grad;
  bool decay = true;
};

/// Ordered parameter collection; iteration order is the name order, which
/// keeps checkpoints and optimizer updates deterministic.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, int rows, int cols, bool decay = true);
  Param<T>& at(const std::string& name);
  const Param<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::map<std::string, Param<T>>& all() { return params_; }
  const std::map<std::string, Param<T>>& all() const { return params_; }
  size_t scalar_count() const;
  void zero_grad();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()), p.decay);
      q.value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::map<std::string, Param<T>> params_;
};

/// Reverse-mode autodiff over row-major matrices. Nodes are appended in
/// evaluation order; backward() walks them in reverse.
template <typename T>
class Tape {
 public:
  using Mat = RowMatrix<T>;
  using Id = int;

  Id constant(Mat value);
  Id param(Param<T>& p);

  const Mat& value(Id id) const { return nodes_[id].value; }
  const Mat& grad(Id id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

  Id matmul(Id a, Id b);
  /// x·W + b with b broadcast over rows.
  Id linear(Id x, Id w, Id b);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, T s);
  Id add_row(Id a, Id row);
  Id mul_row(Id a, Id row);
  /// a ⊙ (1 + row) + shift, the adaptive-norm modulation.
  Id modulate(Id a, Id shift, Id scale);
  /// Row-wise layer norm without affine parameters.
  Id layer_norm(Id a, T eps = T(1e-6));
  Id silu(Id a);
  Id gelu(Id a);
  Id concat_rows(const std::vector<Id>& parts);
  Id slice_rows(Id a, int start, int count);
  Id slice_cols(Id a, int start, int count);
  /// Column block `index` of width a.cols()/parts, e.g. one of q, k, v.
  Id split_cols(Id a, int parts, int index) {
    const int w = static_cast<int>(value(a).cols()) / parts;
    return slice_cols(a, index * w, w);
  }
  /// Repeats the rows of `a` (used for per-replica key copies).
  Id gather_rows(Id a, std::vector<int> rows);
  Id rope(Id a, std::shared_ptr<const RopeTable> table);
  Id attention(Id q, Id k, Id v, std::shared_ptr<const BlockMask> mask, int heads);
  /// Mean squared error against a constant target, as a 1×1 node.
  Id mse(Id a, const Mat& target);

  /// Seeds d(root)=1 and propagates; parameter gradients accumulate into Param::grad.
  void backward(Id root);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Param<T>* param = nullptr;
    std::function<void()> back;
  };

  Id push(Mat value, bool needs_grad, std::function<void()> back = {});
  bool needs(Id id) const { return nodes_[id].needs_grad; }
  Mat& g(Id id);

  std::vector<Node> nodes_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

/// Decoupled weight decay Adam over a float parameter store.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  /// Applies one update with the given learning rate and returns the
  /// pre-clipping gradient norm.
  double step(ParamStore<float>& params, double lr);
  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::map<std::string, RowMatrix<float>> m_, v_;
};

}  // namespace ucm

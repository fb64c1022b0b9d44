#include "ucm/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ucm {

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, int rows, int cols, bool decay) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Param<T>& p = params_[name];
  p.value = RowMatrix<T>::Zero(rows, cols);
  p.grad = RowMatrix<T>::Zero(rows, cols);
  p.decay = decay;
  return p;
}

template <typename T>
Param<T>& ParamStore<T>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const Param<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
size_t ParamStore<T>::scalar_count() const {
  size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(Mat value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

template <typename T>
typename Tape<T>::Mat& Tape<T>::g(Id id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
typename Tape<T>::Id Tape<T>::constant(Mat value) {
  return push(std::move(value), false);
}

template <typename T>
typename Tape<T>::Id Tape<T>::param(Param<T>& p) {
  const Id id = push(p.value, true, [] {});
  nodes_[id].param = &p;
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
  if (value(a).cols() != value(b).rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat out = value(a) * value(b);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(a)) g(a).noalias() += go * value(b).transpose();
    if (needs(b)) g(b).noalias() += value(a).transpose() * go;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::linear(Id x, Id w, Id b) {
  if (value(x).cols() != value(w).rows() || value(b).rows() != 1 || value(b).cols() != value(w).cols())
    throw std::invalid_argument("linear: shape mismatch");
  Mat out = value(x) * value(w);
  out.rowwise() += value(b).row(0);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(x) || needs(w) || needs(b), [this, x, w, b, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(x)) g(x).noalias() += go * value(w).transpose();
    if (needs(w)) g(w).noalias() += value(x).transpose() * go;
    if (needs(b)) g(b) += go.colwise().sum();
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a) + value(b), needs(a) || needs(b), [this, a, b, id] {
    if (needs(a)) g(a) += nodes_[id].grad;
    if (needs(b)) g(b) += nodes_[id].grad;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("sub: shape mismatch");
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a) - value(b), needs(a) || needs(b), [this, a, b, id] {
    if (needs(a)) g(a) += nodes_[id].grad;
    if (needs(b)) g(b) -= nodes_[id].grad;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("mul: shape mismatch");
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [this, a, b, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(a)) g(a) += go.cwiseProduct(value(b));
    if (needs(b)) g(b) += go.cwiseProduct(value(a));
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, T s) {
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a) * s, needs(a), [this, a, s, id] { g(a) += nodes_[id].grad * s; });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_row(Id a, Id row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw std::invalid_argument("add_row: shape mismatch");
  Mat out = value(a);
  out.rowwise() += value(row).row(0);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [this, a, row, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(a)) g(a) += go;
    if (needs(row)) g(row) += go.colwise().sum();
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul_row(Id a, Id row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw std::invalid_argument("mul_row: shape mismatch");
  Mat out = value(a).array().rowwise() * value(row).row(0).array();
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [this, a, row, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(a)) g(a).array() += go.array().rowwise() * value(row).row(0).array();
    if (needs(row)) g(row) += go.cwiseProduct(value(a)).colwise().sum();
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::modulate(Id a, Id shift, Id scl) {
  const int c = static_cast<int>(value(a).cols());
  if (value(shift).rows() != 1 || value(shift).cols() != c || value(scl).rows() != 1 || value(scl).cols() != c)
    throw std::invalid_argument("modulate: shape mismatch");
  Mat out = value(a).array().rowwise() * (value(scl).row(0).array() + T(1));
  out.rowwise() += value(shift).row(0);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(shift) || needs(scl), [this, a, shift, scl, id] {
    const Mat& go = nodes_[id].grad;
    if (needs(a)) g(a).array() += go.array().rowwise() * (value(scl).row(0).array() + T(1));
    if (needs(shift)) g(shift) += go.colwise().sum();
    if (needs(scl)) g(scl) += go.cwiseProduct(value(a)).colwise().sum();
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::layer_norm(Id a, T eps) {
  const Mat& x = value(a);
  const int c = static_cast<int>(x.cols());
  Mat y(x.rows(), c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    y.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(y), needs(a), [this, a, id, inv_std, c] {
    const Mat& go = nodes_[id].grad;
    const Mat& yv = nodes_[id].value;
    Mat& ga = g(a);
    for (int i = 0; i < go.rows(); ++i) {
      const T mg = go.row(i).sum() / T(c);
      const T mgy = go.row(i).dot(yv.row(i)) / T(c);
      ga.row(i).array() += inv_std(i) * (go.row(i).array() - mg - yv.row(i).array() * mgy);
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::silu(Id a) {
  const Mat& x = value(a);
  Mat sig = (T(1) + (-x.array()).exp()).inverse().matrix();
  Mat out = x.cwiseProduct(sig);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, id, sig] {
    const auto& x = value(a).array();
    g(a).array() += nodes_[id].grad.array() * (sig.array() * (T(1) + x * (T(1) - sig.array())));
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gelu(Id a) {
  // tanh approximation
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const auto& x = value(a).array();
  Mat th = (k * (x + T(0.044715) * x.cube())).tanh().matrix();
  Mat out = (T(0.5) * x * (T(1) + th.array())).matrix();
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, id, th, k] {
    const auto& x = value(a).array();
    const auto& t = th.array();
    auto d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t.square()) * k * (T(1) + T(3 * 0.044715) * x.square());
    g(a).array() += nodes_[id].grad.array() * d;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const auto cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool any = false;
  for (Id p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += value(p).rows();
    any = any || needs(p);
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (Id p : parts) {
    out.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), any, [this, parts, id] {
    Eigen::Index r = 0;
    for (Id p : parts) {
      const auto n = value(p).rows();
      if (needs(p)) g(p) += nodes_[id].grad.middleRows(r, n);
      r += n;
    }
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::slice_rows(Id a, int start, int count) {
  if (start < 0 || count < 0 || start + count > value(a).rows()) throw std::out_of_range("slice_rows");
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a).middleRows(start, count), needs(a),
              [this, a, start, count, id] { g(a).middleRows(start, count) += nodes_[id].grad; });
}

template <typename T>
typename Tape<T>::Id Tape<T>::slice_cols(Id a, int start, int count) {
  if (start < 0 || count < 0 || start + count > value(a).cols()) throw std::out_of_range("slice_cols");
  const Id id = static_cast<Id>(nodes_.size());
  return push(value(a).middleCols(start, count), needs(a),
              [this, a, start, count, id] { g(a).middleCols(start, count) += nodes_[id].grad; });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gather_rows(Id a, std::vector<int> rows) {
  const Mat& x = value(a);
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw std::out_of_range("gather_rows");
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, rows = std::move(rows), id] {
    Mat& ga = g(a);
    const Mat& go = nodes_[id].grad;
    for (size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::rope(Id a, std::shared_ptr<const RopeTable> table) {
  if (value(a).rows() != table->tokens || value(a).cols() != 2 * table->pairs * table->heads)
    throw std::invalid_argument("rope: table does not match input");
  Mat out = value(a);
  rotate_rows(out, *table);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, table, id] {
    Mat go = nodes_[id].grad;
    rotate_rows(go, *table, true);
    g(a) += go;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::attention(Id q, Id k, Id v, std::shared_ptr<const BlockMask> mask, int heads) {
  const bool grad = needs(q) || needs(k) || needs(v);
  auto cache = grad ? std::make_shared<AttentionCache<T>>() : nullptr;
  Mat out = block_sparse_attention<T>(value(q), value(k), value(v), *mask, heads, cache.get());
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), grad, [this, q, k, v, mask, heads, cache, id] {
    Mat gq, gk, gv;
    block_sparse_attention_backward<T>(value(q), value(k), value(v), *mask, heads, *cache, nodes_[id].grad, gq, gk,
                                       gv);
    if (needs(q)) g(q) += gq;
    if (needs(k)) g(k) += gk;
    if (needs(v)) g(v) += gv;
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mse(Id a, const Mat& target) {
  if (value(a).rows() != target.rows() || value(a).cols() != target.cols())
    throw std::invalid_argument("mse: shape mismatch");
  Mat diff = value(a) - target;
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<T>(diff.size());
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, diff, id] {
    g(a) += diff * (T(2) * nodes_[id].grad(0, 0) / static_cast<T>(diff.size()));
  });
}

template <typename T>
void Tape<T>::backward(Id root) {
  if (value(root).size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  g(root).setOnes();
  for (Id i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) n.param->grad += n.grad;
    else if (n.back) n.back();
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

double AdamW::step(ParamStore<float>& params, double lr) {
  double sq = 0.0;
  for (auto& [_, p] : params.all()) sq += p.grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw std::runtime_error("AdamW: non-finite gradient norm");
  const float clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? static_cast<float>(cfg_.grad_clip / norm) : 1.0f;
  ++t_;
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const float c2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  const float lrf = static_cast<float>(lr), eps = static_cast<float>(cfg_.eps);
  const float wd = static_cast<float>(lr * cfg_.weight_decay);
  for (auto& [name, p] : params.all()) {
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() == 0) {
      m = RowMatrix<float>::Zero(p.value.rows(), p.value.cols());
      v = RowMatrix<float>::Zero(p.value.rows(), p.value.cols());
    }
    const auto gr = p.grad.array() * clip;
    m.array() = b1 * m.array() + (1.0f - b1) * gr;
    v.array() = b2 * v.array() + (1.0f - b2) * gr.square();
    if (p.decay) p.value.array() -= wd * p.value.array();
    p.value.array() -= lrf * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  return norm;
}

}  // namespace ucm

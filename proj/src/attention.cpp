#include "ucm/attention.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace ucm {

size_t BlockMask::true_blocks() const {
  size_t n = 0;
  for (auto a : allowed) n += a;
  return n;
}

size_t BlockMask::permitted_pairs() const {
  size_t pairs = 0;
  for (int c = 0; c < cols(); ++c) {
    size_t valid = 0;
    for (int t = col_offsets[c]; t < col_offsets[c + 1]; ++t) valid += key_is_valid(t);
    for (int r = 0; r < rows(); ++r)
      if (at(r, c)) pairs += valid * static_cast<size_t>(row_offsets[r + 1] - row_offsets[r]);
  }
  return pairs;
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> BlockMask::token_mask() const {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(query_tokens(), key_tokens(), false);
  for (int r = 0; r < rows(); ++r)
    for (int c = 0; c < cols(); ++c) {
      if (!at(r, c)) continue;
      for (int i = row_offsets[r]; i < row_offsets[r + 1]; ++i)
        for (int j = col_offsets[c]; j < col_offsets[c + 1]; ++j) m(i, j) = key_is_valid(j);
    }
  return m;
}

BlockMask BlockMask::full(std::span<const int> row_sizes, std::span<const int> col_sizes) {
  BlockMask m;
  for (int s : row_sizes) m.row_offsets.push_back(m.row_offsets.back() + s);
  for (int s : col_sizes) m.col_offsets.push_back(m.col_offsets.back() + s);
  m.allowed.assign(row_sizes.size() * col_sizes.size(), 1);
  return m;
}

BlockMask BlockMask::uniform(int row_blocks, int col_blocks, int tokens_per_block, bool value) {
  BlockMask m;
  for (int r = 0; r < row_blocks; ++r) m.row_offsets.push_back(m.row_offsets.back() + tokens_per_block);
  for (int c = 0; c < col_blocks; ++c) m.col_offsets.push_back(m.col_offsets.back() + tokens_per_block);
  m.allowed.assign(static_cast<size_t>(row_blocks) * col_blocks, value ? 1 : 0);
  return m;
}

BlockMask BlockMask::top_rows(int n) const {
  if (n < 0 || n > rows()) throw std::out_of_range("BlockMask::top_rows");
  BlockMask m;
  m.row_offsets.assign(row_offsets.begin(), row_offsets.begin() + n + 1);
  m.col_offsets = col_offsets;
  m.allowed.assign(allowed.begin(), allowed.begin() + static_cast<std::ptrdiff_t>(n) * cols());
  m.key_valid = key_valid;
  return m;
}

void BlockMask::validate() const {
  if (row_offsets.empty() || col_offsets.empty() || row_offsets[0] != 0 || col_offsets[0] != 0)
    throw std::invalid_argument("BlockMask: offsets must start at 0");
  for (size_t i = 1; i < row_offsets.size(); ++i)
    if (row_offsets[i] < row_offsets[i - 1]) throw std::invalid_argument("BlockMask: decreasing row offsets");
  for (size_t i = 1; i < col_offsets.size(); ++i)
    if (col_offsets[i] < col_offsets[i - 1]) throw std::invalid_argument("BlockMask: decreasing column offsets");
  if (allowed.size() != static_cast<size_t>(rows()) * cols())
    throw std::invalid_argument("BlockMask: allowed matrix has the wrong size");
  if (!key_valid.empty() && static_cast<int>(key_valid.size()) != key_tokens())
    throw std::invalid_argument("BlockMask: key validity vector has the wrong size");
}

BlockMask build_dual_stream_mask(int n, int m, std::span<const int> assignments, int tokens_per_frame) {
  if (n < 1 || m < 0 || tokens_per_frame < 1) throw std::invalid_argument("build_dual_stream_mask: bad sizes");
  if (static_cast<int>(assignments.size()) != m)
    throw std::invalid_argument("build_dual_stream_mask: need one assignment per memory frame");
  for (int j = 0; j < m; ++j)
    if (assignments[j] < 1 || assignments[j] > n)
      throw std::out_of_range("build_dual_stream_mask: assignment " + std::to_string(assignments[j]) +
                              " outside [1, " + std::to_string(n) + "]");
  const int blocks = 2 * n + m;
  BlockMask mask = BlockMask::uniform(blocks, blocks, tokens_per_frame, false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) mask.set(i, j, true);
    mask.set(i, n + i, true);
  }
  for (int j = 0; j < m; ++j) mask.set(assignments[j] - 1, 2 * n + j, true);
  for (int e = n; e < blocks; ++e) mask.set(e, e, true);
  return mask;
}

RowMatrix<double> dense_masked_attention(const RowMatrix<double>& q, const RowMatrix<double>& k,
                                         const RowMatrix<double>& v,
                                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                                         int heads) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || heads < 1 || q.cols() % heads || v.cols() % heads)
    throw std::invalid_argument("dense_masked_attention: shape mismatch");
  if (mask.rows() != q.rows() || mask.cols() != k.rows())
    throw std::invalid_argument("dense_masked_attention: mask does not cover all token pairs");
  const int dk = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  RowMatrix<double> out = RowMatrix<double>::Zero(q.rows(), v.cols());
  std::vector<double> logits(k.rows());
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < q.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k.rows(); ++j) {
        if (!mask(i, j)) {
          logits[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double s = 0.0;
        for (int c = 0; c < dk; ++c) s += q(i, h * dk + c) * k(j, h * dk + c);
        logits[j] = s * scale;
        mx = std::max(mx, logits[j]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (int j = 0; j < k.rows(); ++j) {
        logits[j] = mask(i, j) ? std::exp(logits[j] - mx) : 0.0;
        z += logits[j];
      }
      for (int j = 0; j < k.rows(); ++j) {
        if (logits[j] == 0.0) continue;
        const double w = logits[j] / z;
        for (int c = 0; c < dv; ++c) out(i, h * dv + c) += w * v(j, h * dv + c);
      }
    }
  }
  return out;
}

namespace {

template <typename T>
void check_shapes(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v, const BlockMask& mask,
                  int heads) {
  if (heads < 1 || q.cols() != k.cols() || k.rows() != v.rows() || q.cols() % heads || v.cols() % heads)
    throw std::invalid_argument("block_sparse_attention: shape mismatch");
  if (mask.query_tokens() != q.rows() || mask.key_tokens() != k.rows())
    throw std::invalid_argument("block_sparse_attention: mask does not match sequence lengths");
}

// Allowed key blocks of one query block, merged into contiguous token ranges.
std::vector<std::pair<int, int>> key_segments(const BlockMask& mask, int row) {
  std::vector<std::pair<int, int>> segs;
  for (int c = 0; c < mask.cols(); ++c) {
    const int start = mask.col_offsets[c], len = mask.col_offsets[c + 1] - start;
    if (!mask.at(row, c) || len == 0) continue;
    if (!segs.empty() && segs.back().first + segs.back().second == start) segs.back().second += len;
    else segs.emplace_back(start, len);
  }
  return segs;
}

int segment_length(const std::vector<std::pair<int, int>>& segs) {
  int n = 0;
  for (const auto& s : segs) n += s.second;
  return n;
}

// Row softmax in place over the columns not listed in `masked`. Rows
// without any admitted column become zero. Masked columns are zeroed
// explicitly: vectorized exp clamps -inf to a denormal rather than 0.
template <typename T>
void softmax_rows(RowMatrix<T>& s, const std::vector<int>& masked) {
  for (int c : masked) s.col(c).setConstant(-std::numeric_limits<T>::infinity());
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mx = s.rowwise().maxCoeff();
  for (int i = 0; i < s.rows(); ++i) {
    if (mx(i) == -std::numeric_limits<T>::infinity()) {
      s.row(i).setZero();
      continue;
    }
    s.row(i).array() = (s.row(i).array() - mx(i)).exp();
    for (int c : masked) s(i, c) = T(0);
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

template <typename T>
RowMatrix<T> block_sparse_attention(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v,
                                    const BlockMask& mask, int heads, AttentionCache<T>* cache) {
  check_shapes(q, k, v, mask, heads);
  const int dk = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  RowMatrix<T> out = RowMatrix<T>::Zero(q.rows(), v.cols());
  if (cache) {
    cache->segments.assign(mask.rows(), {});
    cache->probs.assign(static_cast<size_t>(mask.rows()) * heads, {});
  }
  RowMatrix<T> qh;
  for (int b = 0; b < mask.rows(); ++b) {
    const int r0 = mask.row_offsets[b];
    const int nr = mask.row_offsets[b + 1] - r0;
    auto segs = key_segments(mask, b);
    const int nk = segment_length(segs);
    std::vector<int> masked;
    if (!mask.key_valid.empty()) {
      int off = 0;
      for (const auto& [start, len] : segs) {
        for (int t = 0; t < len; ++t)
          if (!mask.key_valid[start + t]) masked.push_back(off + t);
        off += len;
      }
    }
    if (nr > 0 && nk > 0) {
      for (int h = 0; h < heads; ++h) {
        qh = q.block(r0, h * dk, nr, dk) * scale;
        RowMatrix<T> s(nr, nk);
        int off = 0;
        for (const auto& [start, len] : segs) {
          s.middleCols(off, len).noalias() = qh * k.block(start, h * dk, len, dk).transpose();
          off += len;
        }
        softmax_rows(s, masked);
        auto o = out.block(r0, h * dv, nr, dv);
        off = 0;
        for (const auto& [start, len] : segs) {
          o.noalias() += s.middleCols(off, len) * v.block(start, h * dv, len, dv);
          off += len;
        }
        if (cache) cache->probs[static_cast<size_t>(b) * heads + h] = std::move(s);
      }
    }
    if (cache) cache->segments[b] = std::move(segs);
  }
  return out;
}

template <typename T>
void block_sparse_attention_backward(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v,
                                     const BlockMask& mask, int heads, const AttentionCache<T>& cache,
                                     const RowMatrix<T>& grad_out, RowMatrix<T>& grad_q, RowMatrix<T>& grad_k,
                                     RowMatrix<T>& grad_v) {
  check_shapes(q, k, v, mask, heads);
  const int dk = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  grad_q = RowMatrix<T>::Zero(q.rows(), q.cols());
  grad_k = RowMatrix<T>::Zero(k.rows(), k.cols());
  grad_v = RowMatrix<T>::Zero(v.rows(), v.cols());
  for (int b = 0; b < mask.rows(); ++b) {
    const auto& segs = cache.segments[b];
    const int r0 = mask.row_offsets[b];
    const int nr = mask.row_offsets[b + 1] - r0;
    const int nk = segment_length(segs);
    if (nr == 0 || nk == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const RowMatrix<T>& p = cache.probs[static_cast<size_t>(b) * heads + h];
      const auto go = grad_out.block(r0, h * dv, nr, dv);
      RowMatrix<T> dp(nr, nk);
      int off = 0;
      for (const auto& [start, len] : segs) {
        grad_v.block(start, h * dv, len, dv).noalias() += p.middleCols(off, len).transpose() * go;
        dp.middleCols(off, len).noalias() = go * v.block(start, h * dv, len, dv).transpose();
        off += len;
      }
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = dp.cwiseProduct(p).rowwise().sum();
      dp.colwise() -= row_dot;
      dp.array() *= p.array() * scale;  // dS, scaled
      auto gq = grad_q.block(r0, h * dk, nr, dk);
      const auto qb = q.block(r0, h * dk, nr, dk);
      off = 0;
      for (const auto& [start, len] : segs) {
        gq.noalias() += dp.middleCols(off, len) * k.block(start, h * dk, len, dk);
        grad_k.block(start, h * dk, len, dk).noalias() += dp.middleCols(off, len).transpose() * qb;
        off += len;
      }
    }
  }
}

template <typename T>
RowMatrix<T> full_attention(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v, int heads) {
  const int lq = static_cast<int>(q.rows()), lk = static_cast<int>(k.rows());
  const BlockMask all = BlockMask::full(std::span<const int>(&lq, 1), std::span<const int>(&lk, 1));
  return block_sparse_attention(q, k, v, all, heads);
}

template RowMatrix<float> block_sparse_attention(const RowMatrix<float>&, const RowMatrix<float>&,
                                                 const RowMatrix<float>&, const BlockMask&, int,
                                                 AttentionCache<float>*);
template RowMatrix<double> block_sparse_attention(const RowMatrix<double>&, const RowMatrix<double>&,
                                                  const RowMatrix<double>&, const BlockMask&, int,
                                                  AttentionCache<double>*);
template void block_sparse_attention_backward(const RowMatrix<float>&, const RowMatrix<float>&,
                                              const RowMatrix<float>&, const BlockMask&, int,
                                              const AttentionCache<float>&, const RowMatrix<float>&,
                                              RowMatrix<float>&, RowMatrix<float>&, RowMatrix<float>&);
template void block_sparse_attention_backward(const RowMatrix<double>&, const RowMatrix<double>&,
                                              const RowMatrix<double>&, const BlockMask&, int,
                                              const AttentionCache<double>&, const RowMatrix<double>&,
                                              RowMatrix<double>&, RowMatrix<double>&, RowMatrix<double>&);
template RowMatrix<float> full_attention(const RowMatrix<float>&, const RowMatrix<float>&,
                                         const RowMatrix<float>&, int);
template RowMatrix<double> full_attention(const RowMatrix<double>&, const RowMatrix<double>&,
                                          const RowMatrix<double>&, int);

AttentionBenchmark benchmark_attention(int frames, int memories, int grid, int width, int heads, int repeats,
                                       uint64_t seed) {
  if (frames < 2 || memories < 0 || grid < 1 || heads < 1 || width % heads != 0 || repeats < 1)
    throw std::invalid_argument("benchmark_attention: invalid configuration");
  const int p = grid * grid;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(2, frames);
  std::vector<int> assignments(static_cast<size_t>(memories));
  for (int& a : assignments) a = pick(rng);
  const BlockMask mask = build_dual_stream_mask(frames, memories, assignments, p);
  const int tokens = mask.key_tokens();
  std::normal_distribution<float> g(0.0f, 1.0f);
  auto random = [&] {
    RowMatrix<float> m(tokens, width);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  const RowMatrix<float> q = random(), k = random(), v = random();

  AttentionBenchmark b;
  b.frames = frames;
  b.memories = memories;
  b.tokens_per_frame = p;
  b.heads = heads;
  b.width = width;
  b.sparse_blocks = mask.true_blocks();
  b.dense_blocks = static_cast<size_t>(mask.rows()) * mask.cols();
  auto best = [&](auto&& fn) {
    double t = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      const RowMatrix<float> out = fn();
      const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
      if (!std::isfinite(out(0, 0))) throw std::runtime_error("benchmark_attention: non-finite output");
      t = std::min(t, d.count());
    }
    return t;
  };
  b.sparse_seconds = best([&] { return block_sparse_attention<float>(q, k, v, mask, heads); });
  b.dense_seconds = best([&] { return full_attention<float>(q, k, v, heads); });
  return b;
}

}  // namespace ucm

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace ucm {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Boolean mask over query blocks × key blocks. Blocks are contiguous token
/// ranges given by the offset arrays. `key_valid`, when non-empty, removes
/// individual key tokens from every block that would otherwise admit them.
struct BlockMask {
  std::vector<int> row_offsets{0};
  std::vector<int> col_offsets{0};
  std::vector<uint8_t> allowed;
  std::vector<uint8_t> key_valid;

  int rows() const { return static_cast<int>(row_offsets.size()) - 1; }
  int cols() const { return static_cast<int>(col_offsets.size()) - 1; }
  int query_tokens() const { return row_offsets.back(); }
  int key_tokens() const { return col_offsets.back(); }

  bool at(int r, int c) const { return allowed[static_cast<size_t>(r) * cols() + c] != 0; }
  void set(int r, int c, bool v) { allowed[static_cast<size_t>(r) * cols() + c] = v ? 1 : 0; }
  bool key_is_valid(int token) const { return key_valid.empty() || key_valid[token] != 0; }

  size_t true_blocks() const;
  /// Query/key token pairs admitted by the mask, counting key validity.
  size_t permitted_pairs() const;
  /// Expanded token-level mask (query × key).
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> token_mask() const;

  /// Mask with every block of the given sizes allowed.
  static BlockMask full(std::span<const int> row_sizes, std::span<const int> col_sizes);
  static BlockMask uniform(int row_blocks, int col_blocks, int tokens_per_block, bool value);
  /// The first `n` query blocks, all key blocks.
  BlockMask top_rows(int n) const;
  void validate() const;
};

/// Dual-stream mask over [N noisy frames | N reference replicas | M memories],
/// every block `tokens_per_frame` tokens. Noisy frames see every noisy frame,
/// their own reference replica and the memories assigned to them; clean
/// entries see only themselves. `assignments` are 1-based target frames.
BlockMask build_dual_stream_mask(int n, int m, std::span<const int> assignments, int tokens_per_frame);

/// Reference implementation: explicit loops in double precision over a
/// token-level mask. Fully masked query rows produce zeros.
RowMatrix<double> dense_masked_attention(const RowMatrix<double>& q, const RowMatrix<double>& k,
                                         const RowMatrix<double>& v,
                                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                                         int heads = 1);

/// Saved state for the backward pass.
template <typename T>
struct AttentionCache {
  std::vector<std::vector<std::pair<int, int>>> segments;  // contiguous key ranges per query block
  std::vector<RowMatrix<T>> probs;                         // [block * heads + head]
};

/// Multi-head scaled dot-product attention that only visits permitted blocks.
/// Q: Lq × heads·dk, K: Lk × heads·dk, V: Lk × heads·dv.
template <typename T>
RowMatrix<T> block_sparse_attention(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v,
                                    const BlockMask& mask, int heads = 1, AttentionCache<T>* cache = nullptr);

/// Gradients of block_sparse_attention. Outputs are overwritten.
template <typename T>
void block_sparse_attention_backward(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v,
                                     const BlockMask& mask, int heads, const AttentionCache<T>& cache,
                                     const RowMatrix<T>& grad_out, RowMatrix<T>& grad_q, RowMatrix<T>& grad_k,
                                     RowMatrix<T>& grad_v);

/// Unmasked attention over the whole sequence (the non-sparse baseline).
template <typename T>
RowMatrix<T> full_attention(const RowMatrix<T>& q, const RowMatrix<T>& k, const RowMatrix<T>& v, int heads = 1);

struct AttentionBenchmark {
  int frames = 0;            // N
  int memories = 0;          // M
  int tokens_per_frame = 0;
  int heads = 0;
  int width = 0;
  size_t sparse_blocks = 0;  // true blocks of the dual-stream mask
  size_t dense_blocks = 0;   // blocks of full attention over the same tokens
  double sparse_seconds = 0.0;  // best of the repeats
  double dense_seconds = 0.0;
  double speedup() const { return dense_seconds / sparse_seconds; }
};

/// Times block-sparse dual-stream attention against full attention over the
/// same [noisy | reference | memory] sequence with random float inputs and
/// random assignments. Reports the best of `repeats` runs.
AttentionBenchmark benchmark_attention(int frames, int memories, int grid, int width, int heads, int repeats,
                                       uint64_t seed);

}  // namespace ucm

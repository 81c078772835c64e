#ifndef EMOSYNTH_TENSOR_HPP
#define EMOSYNTH_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emosynth {

/// Dense row-major matrix. Every value in the library is rank <= 2: a frame
/// matrix is L x D, a vector is 1 x n.
template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Tensor = MatrixR<double>;
using FrameMatrix = Tensor;
using Index = Eigen::Index;

/// Row ranges of stacked utterances: segment i covers rows
/// [offsets[i], offsets[i + 1]).
struct Segments {
  std::vector<Index> offsets{0};

  static Segments from_lengths(std::span<const Index> lengths);
  static Segments single(Index rows) { return from_lengths(std::span<const Index>(&rows, 1)); }

  [[nodiscard]] Index count() const { return static_cast<Index>(offsets.size()) - 1; }
  [[nodiscard]] Index rows() const { return offsets.back(); }
  [[nodiscard]] Index begin(Index i) const { return offsets[static_cast<std::size_t>(i)]; }
  [[nodiscard]] Index length(Index i) const {
    return offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)];
  }
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Element-wise exact equality, including shape.
template <typename A, typename B>
bool bitwise_equal(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.derived().array() == b.derived().array()).all();
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Seed for a named sub-stream of `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// 64-bit FNV-1a. Stable across platforms, used for fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t h = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

using Rng = std::mt19937_64;

/// x * W + b with the 1 x n bias broadcast over rows. Graph and graph-free
/// evaluation both go through this so their results agree bitwise.
Tensor affine_rows(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Row-wise softmax (max-shifted).
Tensor softmax_rows(const Tensor& logits);

/// rows x cols matrix of independent N(0, 1) draws.
Tensor standard_normal(Index rows, Index cols, Rng& rng);

}  // namespace emosynth

#endif  // EMOSYNTH_TENSOR_HPP

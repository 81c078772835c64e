#ifndef EMOSYNTH_NN_HPP
#define EMOSYNTH_NN_HPP

#include "emosynth/autodiff.hpp"

#include <string>

namespace emosynth {

enum class Activation { Tanh, Relu };

struct MlpShape {
  Index in = 0;
  Index hidden = 64;
  Index hidden_layers = 2;
  Index out = 0;
  Activation activation = Activation::Tanh;
  /// Adds a bias-free linear map of the input to the output.
  bool linear_skip = false;
};

/// Fully connected network; parameters live in a ParamStore under
/// "<prefix>.W<k>" / "<prefix>.b<k>" (and "<prefix>.skip" with a linear skip).
/// The output layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, MlpShape shape) : prefix_(std::move(prefix)), shape_(shape) {}

  void init(ad::ParamStore& store) const;

  ad::Node build(ad::Graph& graph, ad::ParamStore& store, ad::Node x) const;

  /// Graph-free evaluation, bitwise identical to build() + forward().
  [[nodiscard]] Tensor apply(const ad::ParamStore& store, const Tensor& x) const;

  [[nodiscard]] const MlpShape& shape() const { return shape_; }
  [[nodiscard]] const std::string& prefix() const { return prefix_; }

 private:
  [[nodiscard]] std::string weight(Index k) const { return prefix_ + ".W" + std::to_string(k); }
  [[nodiscard]] std::string bias(Index k) const { return prefix_ + ".b" + std::to_string(k); }
  [[nodiscard]] std::string skip() const { return prefix_ + ".skip"; }

  std::string prefix_;
  MlpShape shape_;
};

}  // namespace emosynth

#endif  // EMOSYNTH_NN_HPP

#include "emosynth/nn.hpp"

namespace emosynth {

void Mlp::init(ad::ParamStore& store) const {
  Index fan_in = shape_.in;
  for (Index k = 0; k <= shape_.hidden_layers; ++k) {
    const Index fan_out = (k == shape_.hidden_layers) ? shape_.out : shape_.hidden;
    store.add_uniform(weight(k), fan_in, fan_out);
    store.add_zeros(bias(k), 1, fan_out);
    fan_in = fan_out;
  }
  if (shape_.linear_skip) store.add_uniform(skip(), shape_.in, shape_.out);
}

ad::Node Mlp::build(ad::Graph& graph, ad::ParamStore& store, ad::Node x) const {
  ad::Node h = x;
  for (Index k = 0; k <= shape_.hidden_layers; ++k) {
    h = graph.affine(h, graph.param(store, weight(k)), graph.param(store, bias(k)));
    if (k < shape_.hidden_layers) h = shape_.activation == Activation::Tanh ? graph.tanh(h) : graph.relu(h);
  }
  if (shape_.linear_skip) {
    h = graph.add(h, graph.affine(x, graph.param(store, skip()), graph.constant(Tensor::Zero(1, shape_.out), "zero_bias")));
  }
  return h;
}

Tensor Mlp::apply(const ad::ParamStore& store, const Tensor& x) const {
  if (x.cols() != shape_.in) {
    throw std::invalid_argument(prefix_ + ": input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(shape_.in));
  }
  Tensor h = x;
  for (Index k = 0; k <= shape_.hidden_layers; ++k) {
    h = affine_rows(h, store.value(weight(k)), store.value(bias(k)));
    if (k < shape_.hidden_layers) {
      if (shape_.activation == Activation::Tanh) {
        h = h.array().tanh().matrix();
      } else {
        h = h.cwiseMax(0.0);
      }
    }
  }
  if (shape_.linear_skip) h = h + affine_rows(x, store.value(skip()), Tensor::Zero(1, shape_.out));
  return h;
}

}  // namespace emosynth

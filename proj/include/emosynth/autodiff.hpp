#ifndef EMOSYNTH_AUTODIFF_HPP
#define EMOSYNTH_AUTODIFF_HPP

// Minimal reverse-mode automatic differentiation over rank-2 double tensors.
//
// A Graph is built symbolically (inputs, parameters, constants and ops), then
// executed with forward() and differentiated with backward(). Nodes are kept
// in construction order, which is a topological order; backward visits them
// in exact reverse order so results are deterministic.

#include "emosynth/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emosynth::ad {

/// Raised for malformed graphs and execution failures. The message names the
/// offending node.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named parameter tensors with gradient accumulators.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Weight matrix drawn uniformly from +-sqrt(6 / (fan_in + fan_out)) using a
  /// stream derived from the store seed and the parameter name.
  Tensor& add_uniform(const std::string& name, Index rows, Index cols);
  Tensor& add_zeros(const std::string& name, Index rows, Index cols);
  Tensor& add(const std::string& name, Tensor value);

  [[nodiscard]] bool contains(std::string_view name) const;
  [[nodiscard]] std::size_t index_of(std::string_view name) const;

  Tensor& value(std::string_view name) { return entries_[index_of(name)].value; }
  [[nodiscard]] const Tensor& value(std::string_view name) const { return entries_[index_of(name)].value; }
  Tensor& grad(std::string_view name) { return entries_[index_of(name)].grad; }
  [[nodiscard]] const Tensor& grad(std::string_view name) const { return entries_[index_of(name)].grad; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  [[nodiscard]] const Entry& entry(std::size_t i) const { return entries_[i]; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::span<Entry> entries() { return entries_; }
  [[nodiscard]] std::span<const Entry> entries() const { return entries_; }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] Index parameter_count() const;

  void zero_grad();
  [[nodiscard]] double grad_squared_norm() const;

  /// Same names, shapes and values (gradients ignored).
  [[nodiscard]] bool same_values(const ParamStore& other) const;

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
};

/// Handle to a graph node.
struct Node {
  std::size_t id = static_cast<std::size_t>(-1);
  [[nodiscard]] bool valid() const { return id != static_cast<std::size_t>(-1); }
};

enum class Op {
  Input,
  Constant,
  Param,
  Affine,
  Tanh,
  Relu,
  Add,
  Sub,
  Mul,
  Scale,
  ConcatCols,
  ConcatRows,
  Sum,
  Mean,
  SegmentMean,
  SegmentBroadcast,
  Gather,
  SquaredError,
  Softmax,
  Log,
  SoftmaxCrossEntropy,
  GradReverse,
  StopGradient,
};

std::string_view op_name(Op op);

class Graph {
 public:
  /// Placeholder fed through forward(). rows < 0 means any row count.
  Node input(const std::string& name, Index cols, Index rows = -1);
  Node constant(Tensor value, std::string label = {});
  Node param(ParamStore& store, std::string_view name);

  /// x * W + b, with b a 1 x out row broadcast over the rows of x.
  Node affine(Node x, Node weight, Node bias);
  Node tanh(Node x);
  Node relu(Node x);
  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node mul(Node a, Node b);
  Node scale(Node x, double factor);
  Node concat_cols(std::span<const Node> parts);
  Node concat_rows(std::span<const Node> parts);
  /// 1 x 1 sum / mean of all entries.
  Node sum(Node x);
  Node mean(Node x);
  /// Mean over the rows of every segment: (rows x c) -> (segments x c).
  /// Rows are summed in sorted order, so the result does not depend on row
  /// order within a segment.
  Node segment_mean(Node x, Segments segments);
  /// Repeats row i of x over the rows of segment i.
  Node segment_broadcast(Node x, Segments segments);
  /// Row lookup: out.row(i) = table.row(indices[i]).
  Node gather(Node table, std::vector<Index> indices);
  /// Mean of squared differences over all entries (1 x 1).
  Node squared_error(Node a, Node b);
  /// Row-wise softmax.
  Node softmax(Node x);
  Node log(Node x);
  /// Mean over rows of -log softmax(logits)[label] (1 x 1).
  Node softmax_cross_entropy(Node logits, std::vector<Index> labels);
  /// Identity forward; backward multiplies the incoming gradient by -alpha.
  Node grad_reverse(Node x, double alpha);
  Node stop_gradient(Node x);

  void set_output(const std::string& name, Node node);
  [[nodiscard]] Node output(std::string_view name) const;

  /// Evaluates every node. Parameters are read, never written.
  std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& inputs = {});

  /// Back-propagates from a scalar node (seed gradient 1).
  void backward(Node loss);
  /// Back-propagates an explicit output gradient.
  void backward(Node out, const Tensor& out_grad);

  [[nodiscard]] const Tensor& value(Node n) const;
  [[nodiscard]] const Tensor& grad(Node n) const;
  /// Gradient with respect to a named input after backward().
  [[nodiscard]] const Tensor& input_grad(std::string_view name) const;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool has_forward() const { return forward_done_; }
  /// Parameter stores referenced by this graph, in first-use order.
  [[nodiscard]] std::vector<ParamStore*> stores() const;

 private:
  struct Record {
    Op op;
    std::vector<std::size_t> in;
    std::string label;
    Index rows = -1;
    Index cols = -1;
    Tensor value;
    Tensor grad;
    Tensor constant;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
    double scalar = 0.0;
    Segments segments;
    std::vector<Index> indices;
  };

  Node push(Record r);
  const Record& at(Node n) const;
  std::string describe(std::size_t id) const;
  void evaluate(std::size_t id, const std::map<std::string, Tensor>& inputs);
  void propagate(std::size_t id);
  void run_backward(std::size_t from, const Tensor& seed);

  std::vector<Record> nodes_;
  std::map<std::string, std::size_t, std::less<>> outputs_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

/// Analytic-versus-central-difference comparison for one tensor.
struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  Index count = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_relative_error = 0.0;

  [[nodiscard]] bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

/// Compares backward() gradients of the scalar `loss` node with central
/// differences for every parameter in `stores` and every named input in
/// `check_inputs`. Parameters and inputs are restored, and the graph is left
/// evaluated at the original point.
GradcheckReport gradcheck(Graph& graph, Node loss, std::span<ParamStore* const> stores,
                          const std::map<std::string, Tensor>& inputs, double epsilon,
                          std::span<const std::string> check_inputs = {});

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Plain SGD with global-norm clipping. Returns the pre-clip gradient norm.
double sgd_step(std::span<ParamStore* const> stores, double learning_rate, double clip_norm);

}  // namespace emosynth::ad

#endif  // EMOSYNTH_AUTODIFF_HPP

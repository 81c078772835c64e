#include "emosynth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace emosynth::ad {

// ---------------------------------------------------------------- ParamStore

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  if (value.size() == 0) throw std::invalid_argument("parameter '" + name + "' is empty");
  Tensor grad = Tensor::Zero(value.rows(), value.cols());
  entries_.push_back(Entry{name, std::move(value), std::move(grad)});
  return entries_.back().value;
}

Tensor& ParamStore::add_uniform(const std::string& name, Index rows, Index cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Rng rng(derive_seed(seed_, name));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w(rows, cols);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return add(name, std::move(w));
}

Tensor& ParamStore::add_zeros(const std::string& name, Index rows, Index cols) {
  return add(name, Tensor::Zero(rows, cols));
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t ParamStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
}

Index ParamStore::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

double ParamStore::grad_squared_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.grad.squaredNorm();
  return s;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!bitwise_equal(entries_[i].value, other.entries_[i].value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------- Graph

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SegmentMean: return "segment_mean";
    case Op::SegmentBroadcast: return "segment_broadcast";
    case Op::Gather: return "gather";
    case Op::SquaredError: return "squared_error";
    case Op::Softmax: return "softmax";
    case Op::Log: return "log";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::GradReverse: return "grad_reverse";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

Node Graph::push(Record r) {
  for (std::size_t in : r.in) {
    if (in >= nodes_.size()) throw GraphError("node input refers to a node that does not precede it");
  }
  nodes_.push_back(std::move(r));
  forward_done_ = false;
  backward_done_ = false;
  return Node{nodes_.size() - 1};
}

const Graph::Record& Graph::at(Node n) const {
  if (n.id >= nodes_.size()) throw GraphError("invalid node handle");
  return nodes_[n.id];
}

std::string Graph::describe(std::size_t id) const {
  const auto& r = nodes_[id];
  std::string s = "node #" + std::to_string(id) + " (" + std::string(op_name(r.op));
  if (!r.label.empty()) s += " '" + r.label + "'";
  return s + ")";
}

Node Graph::input(const std::string& name, Index cols, Index rows) {
  for (const auto& r : nodes_) {
    if (r.op == Op::Input && r.label == name) throw GraphError("duplicate input '" + name + "'");
  }
  Record r{.op = Op::Input};
  r.label = name;
  r.rows = rows;
  r.cols = cols;
  return push(std::move(r));
}

Node Graph::constant(Tensor value, std::string label) {
  Record r{.op = Op::Constant};
  r.label = std::move(label);
  r.constant = std::move(value);
  return push(std::move(r));
}

Node Graph::param(ParamStore& store, std::string_view name) {
  Record r{.op = Op::Param};
  r.label = std::string(name);
  r.store = &store;
  r.param_index = store.index_of(name);
  return push(std::move(r));
}

Node Graph::affine(Node x, Node weight, Node bias) {
  return push(Record{.op = Op::Affine, .in = {x.id, weight.id, bias.id}});
}
Node Graph::tanh(Node x) { return push(Record{.op = Op::Tanh, .in = {x.id}}); }
Node Graph::relu(Node x) { return push(Record{.op = Op::Relu, .in = {x.id}}); }
Node Graph::add(Node a, Node b) { return push(Record{.op = Op::Add, .in = {a.id, b.id}}); }
Node Graph::sub(Node a, Node b) { return push(Record{.op = Op::Sub, .in = {a.id, b.id}}); }
Node Graph::mul(Node a, Node b) { return push(Record{.op = Op::Mul, .in = {a.id, b.id}}); }

Node Graph::scale(Node x, double factor) {
  Record r{.op = Op::Scale, .in = {x.id}};
  r.scalar = factor;
  return push(std::move(r));
}

Node Graph::concat_cols(std::span<const Node> parts) {
  if (parts.empty()) throw GraphError("concat_cols of zero nodes");
  Record r{.op = Op::ConcatCols};
  for (Node p : parts) r.in.push_back(p.id);
  return push(std::move(r));
}

Node Graph::concat_rows(std::span<const Node> parts) {
  if (parts.empty()) throw GraphError("concat_rows of zero nodes");
  Record r{.op = Op::ConcatRows};
  for (Node p : parts) r.in.push_back(p.id);
  return push(std::move(r));
}

Node Graph::sum(Node x) { return push(Record{.op = Op::Sum, .in = {x.id}}); }
Node Graph::mean(Node x) { return push(Record{.op = Op::Mean, .in = {x.id}}); }

Node Graph::segment_mean(Node x, Segments segments) {
  Record r{.op = Op::SegmentMean, .in = {x.id}};
  r.segments = std::move(segments);
  return push(std::move(r));
}

Node Graph::segment_broadcast(Node x, Segments segments) {
  Record r{.op = Op::SegmentBroadcast, .in = {x.id}};
  r.segments = std::move(segments);
  return push(std::move(r));
}

Node Graph::gather(Node table, std::vector<Index> indices) {
  Record r{.op = Op::Gather, .in = {table.id}};
  r.indices = std::move(indices);
  return push(std::move(r));
}

Node Graph::squared_error(Node a, Node b) {
  return push(Record{.op = Op::SquaredError, .in = {a.id, b.id}});
}
Node Graph::softmax(Node x) { return push(Record{.op = Op::Softmax, .in = {x.id}}); }
Node Graph::log(Node x) { return push(Record{.op = Op::Log, .in = {x.id}}); }

Node Graph::softmax_cross_entropy(Node logits, std::vector<Index> labels) {
  Record r{.op = Op::SoftmaxCrossEntropy, .in = {logits.id}};
  r.indices = std::move(labels);
  return push(std::move(r));
}

Node Graph::grad_reverse(Node x, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("grad_reverse requires alpha > 0 (got " + std::to_string(alpha) + ")");
  }
  Record r{.op = Op::GradReverse, .in = {x.id}};
  r.scalar = alpha;
  return push(std::move(r));
}

Node Graph::stop_gradient(Node x) { return push(Record{.op = Op::StopGradient, .in = {x.id}}); }

void Graph::set_output(const std::string& name, Node node) {
  at(node);
  outputs_[name] = node.id;
}

Node Graph::output(std::string_view name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw GraphError("unknown output '" + std::string(name) + "'");
  return Node{it->second};
}

std::vector<ParamStore*> Graph::stores() const {
  std::vector<ParamStore*> out;
  for (const auto& r : nodes_) {
    if (r.op == Op::Param && std::find(out.begin(), out.end(), r.store) == out.end()) out.push_back(r.store);
  }
  return out;
}


void Graph::evaluate(std::size_t id, const std::map<std::string, Tensor>& inputs) {
  Record& r = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[r.in[k]].value; };
  auto fail = [&](const std::string& what) { throw GraphError(describe(id) + ": " + what); };
  auto same_shape = [&](const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      fail("shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
  };

  switch (r.op) {
    case Op::Input: {
      auto it = inputs.find(r.label);
      if (it == inputs.end()) fail("missing input");
      const Tensor& v = it->second;
      if (v.cols() != r.cols || (r.rows >= 0 && v.rows() != r.rows) || v.rows() == 0) {
        fail("shape mismatch: got " + shape_string(v) + ", declared " +
             (r.rows >= 0 ? std::to_string(r.rows) : std::string("*")) + "x" + std::to_string(r.cols));
      }
      r.value = v;
      break;
    }
    case Op::Constant: r.value = r.constant; break;
    case Op::Param: r.value = r.store->entry(r.param_index).value; break;
    case Op::Affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.cols() != w.rows()) fail("shape mismatch " + shape_string(x) + " * " + shape_string(w));
      if (b.rows() != 1 || b.cols() != w.cols()) fail("bias shape " + shape_string(b) + " for " + shape_string(w));
      r.value = affine_rows(x, w, b);
      break;
    }
    case Op::Tanh: r.value = in(0).array().tanh().matrix(); break;
    case Op::Relu: r.value = in(0).cwiseMax(0.0); break;
    case Op::Add: same_shape(in(0), in(1)); r.value = in(0) + in(1); break;
    case Op::Sub: same_shape(in(0), in(1)); r.value = in(0) - in(1); break;
    case Op::Mul: same_shape(in(0), in(1)); r.value = in(0).cwiseProduct(in(1)); break;
    case Op::Scale: r.value = r.scalar * in(0); break;
    case Op::ConcatCols: {
      Index cols = 0;
      const Index rows = in(0).rows();
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        if (in(k).rows() != rows) fail("row mismatch " + shape_string(in(0)) + " vs " + shape_string(in(k)));
        cols += in(k).cols();
      }
      r.value.resize(rows, cols);
      Index c = 0;
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        r.value.middleCols(c, in(k).cols()) = in(k);
        c += in(k).cols();
      }
      break;
    }
    case Op::ConcatRows: {
      Index rows = 0;
      const Index cols = in(0).cols();
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        if (in(k).cols() != cols) fail("column mismatch " + shape_string(in(0)) + " vs " + shape_string(in(k)));
        rows += in(k).rows();
      }
      r.value.resize(rows, cols);
      Index c = 0;
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        r.value.middleRows(c, in(k).rows()) = in(k);
        c += in(k).rows();
      }
      break;
    }
    case Op::Sum: r.value = Tensor::Constant(1, 1, in(0).sum()); break;
    case Op::Mean: r.value = Tensor::Constant(1, 1, in(0).mean()); break;
    case Op::SegmentMean: {
      const Tensor& x = in(0);
      if (r.segments.rows() != x.rows()) fail("segments cover " + std::to_string(r.segments.rows()) + " rows, input has " + std::to_string(x.rows()));
      r.value.resize(r.segments.count(), x.cols());
      std::vector<double> column;
      for (Index s = 0; s < r.segments.count(); ++s) {
        const Index b = r.segments.begin(s);
        const Index n = r.segments.length(s);
        for (Index c = 0; c < x.cols(); ++c) {
          column.resize(static_cast<std::size_t>(n));
          for (Index i = 0; i < n; ++i) column[static_cast<std::size_t>(i)] = x(b + i, c);
          std::sort(column.begin(), column.end());
          double acc = 0.0;
          for (double v : column) acc += v;
          r.value(s, c) = acc / static_cast<double>(n);
        }
      }
      break;
    }
    case Op::SegmentBroadcast: {
      const Tensor& x = in(0);
      if (r.segments.count() != x.rows()) fail(std::to_string(r.segments.count()) + " segments for " + std::to_string(x.rows()) + " rows");
      r.value.resize(r.segments.rows(), x.cols());
      for (Index s = 0; s < r.segments.count(); ++s) {
        r.value.middleRows(r.segments.begin(s), r.segments.length(s)).rowwise() = x.row(s);
      }
      break;
    }
    case Op::Gather: {
      const Tensor& t = in(0);
      r.value.resize(static_cast<Index>(r.indices.size()), t.cols());
      for (std::size_t i = 0; i < r.indices.size(); ++i) {
        const Index k = r.indices[i];
        if (k < 0 || k >= t.rows()) fail("index " + std::to_string(k) + " out of range for " + shape_string(t));
        r.value.row(static_cast<Index>(i)) = t.row(k);
      }
      break;
    }
    case Op::SquaredError:
      same_shape(in(0), in(1));
      r.value = Tensor::Constant(1, 1, (in(0) - in(1)).squaredNorm() / static_cast<double>(in(0).size()));
      break;
    case Op::Softmax: r.value = softmax_rows(in(0)); break;
    case Op::Log: r.value = in(0).array().log().matrix(); break;
    case Op::SoftmaxCrossEntropy: {
      const Tensor& z = in(0);
      if (static_cast<Index>(r.indices.size()) != z.rows()) fail("label count " + std::to_string(r.indices.size()) + " for " + std::to_string(z.rows()) + " rows");
      double acc = 0.0;
      for (Index i = 0; i < z.rows(); ++i) {
        const Index k = r.indices[static_cast<std::size_t>(i)];
        if (k < 0 || k >= z.cols()) fail("label " + std::to_string(k) + " out of range");
        const double m = z.row(i).maxCoeff();
        const double lse = m + std::log((z.row(i).array() - m).exp().sum());
        acc += lse - z(i, k);
      }
      r.value = Tensor::Constant(1, 1, acc / static_cast<double>(z.rows()));
      break;
    }
    case Op::GradReverse:
    case Op::StopGradient: r.value = in(0); break;
  }
  if (!all_finite(r.value)) fail("non-finite value");
}

std::map<std::string, Tensor> Graph::forward(const std::map<std::string, Tensor>& inputs) {
  forward_done_ = false;
  backward_done_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) evaluate(i, inputs);
  forward_done_ = true;
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out.emplace(name, nodes_[id].value);
  return out;
}

const Tensor& Graph::value(Node n) const {
  if (!forward_done_) throw GraphError("value() before forward()");
  return at(n).value;
}

const Tensor& Graph::grad(Node n) const {
  if (!backward_done_) throw GraphError("grad() before backward()");
  return at(n).grad;
}

const Tensor& Graph::input_grad(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Input && nodes_[i].label == name) return grad(Node{i});
  }
  throw GraphError("unknown input '" + std::string(name) + "'");
}

void Graph::backward(Node loss) {
  const Record& r = at(loss);
  if (!forward_done_) throw GraphError("backward() called before forward()");
  if (r.value.size() != 1) {
    throw GraphError(describe(loss.id) + ": non-scalar output " + shape_string(r.value) + " needs an explicit output gradient");
  }
  run_backward(loss.id, Tensor::Ones(1, 1));
}

void Graph::backward(Node out, const Tensor& out_grad) {
  const Record& r = at(out);
  if (!forward_done_) throw GraphError("backward() called before forward()");
  if (out_grad.rows() != r.value.rows() || out_grad.cols() != r.value.cols()) {
    throw GraphError(describe(out.id) + ": output gradient shape " + shape_string(out_grad) + " vs value " + shape_string(r.value));
  }
  run_backward(out.id, out_grad);
}

void Graph::run_backward(std::size_t from, const Tensor& seed) {
  for (auto& r : nodes_) r.grad = Tensor::Zero(r.value.rows(), r.value.cols());
  nodes_[from].grad = seed;
  for (std::size_t i = from + 1; i-- > 0;) propagate(i);
  backward_done_ = true;
}

void Graph::propagate(std::size_t id) {
  Record& r = nodes_[id];
  const Tensor& g = r.grad;
  auto in_value = [&](std::size_t k) -> const Tensor& { return nodes_[r.in[k]].value; };
  auto in_grad = [&](std::size_t k) -> Tensor& { return nodes_[r.in[k]].grad; };

  switch (r.op) {
    case Op::Input:
    case Op::Constant:
    case Op::StopGradient: break;
    case Op::Param: r.store->entry(r.param_index).grad += g; break;
    case Op::Affine:
      in_grad(0).noalias() += g * in_value(1).transpose();
      in_grad(1).noalias() += in_value(0).transpose() * g;
      in_grad(2) += g.colwise().sum();
      break;
    case Op::Tanh: in_grad(0).array() += g.array() * (1.0 - r.value.array().square()); break;
    case Op::Relu: in_grad(0).array() += (in_value(0).array() > 0.0).select(g.array(), 0.0); break;
    case Op::Add:
      in_grad(0) += g;
      in_grad(1) += g;
      break;
    case Op::Sub:
      in_grad(0) += g;
      in_grad(1) -= g;
      break;
    case Op::Mul:
      in_grad(0) += g.cwiseProduct(in_value(1));
      in_grad(1) += g.cwiseProduct(in_value(0));
      break;
    case Op::Scale: in_grad(0) += r.scalar * g; break;
    case Op::ConcatCols: {
      Index c = 0;
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        in_grad(k) += g.middleCols(c, in_value(k).cols());
        c += in_value(k).cols();
      }
      break;
    }
    case Op::ConcatRows: {
      Index c = 0;
      for (std::size_t k = 0; k < r.in.size(); ++k) {
        in_grad(k) += g.middleRows(c, in_value(k).rows());
        c += in_value(k).rows();
      }
      break;
    }
    case Op::Sum: in_grad(0).array() += g(0, 0); break;
    case Op::Mean: in_grad(0).array() += g(0, 0) / static_cast<double>(in_value(0).size()); break;
    case Op::SegmentMean:
      for (Index s = 0; s < r.segments.count(); ++s) {
        const double inv = 1.0 / static_cast<double>(r.segments.length(s));
        in_grad(0).middleRows(r.segments.begin(s), r.segments.length(s)).rowwise() += inv * g.row(s);
      }
      break;
    case Op::SegmentBroadcast:
      for (Index s = 0; s < r.segments.count(); ++s) {
        in_grad(0).row(s) += g.middleRows(r.segments.begin(s), r.segments.length(s)).colwise().sum();
      }
      break;
    case Op::Gather:
      for (std::size_t i = 0; i < r.indices.size(); ++i) in_grad(0).row(r.indices[i]) += g.row(static_cast<Index>(i));
      break;
    case Op::SquaredError: {
      const Tensor d = (2.0 * g(0, 0) / static_cast<double>(in_value(0).size())) * (in_value(0) - in_value(1));
      in_grad(0) += d;
      in_grad(1) -= d;
      break;
    }
    case Op::Softmax:
      for (Index i = 0; i < g.rows(); ++i) {
        const double dot = g.row(i).dot(r.value.row(i));
        in_grad(0).row(i).array() += r.value.row(i).array() * (g.row(i).array() - dot);
      }
      break;
    case Op::Log: in_grad(0).array() += g.array() / in_value(0).array(); break;
    case Op::SoftmaxCrossEntropy: {
      const Tensor p = softmax_rows(in_value(0));
      const double w = g(0, 0) / static_cast<double>(p.rows());
      for (Index i = 0; i < p.rows(); ++i) {
        in_grad(0).row(i) += w * p.row(i);
        in_grad(0)(i, r.indices[static_cast<std::size_t>(i)]) -= w;
      }
      break;
    }
    case Op::GradReverse: in_grad(0) += (-r.scalar) * g; break;
  }
}

// ---------------------------------------------------------------- gradcheck

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(Graph& graph, Node loss, std::span<ParamStore* const> stores,
                          const std::map<std::string, Tensor>& inputs, double epsilon,
                          std::span<const std::string> check_inputs) {
  if (!(epsilon > 1e-8 && epsilon < 1e-3)) throw std::invalid_argument("gradcheck epsilon must lie in (1e-8, 1e-3)");

  graph.forward(inputs);
  if (graph.value(loss).size() != 1) throw GraphError("gradcheck requires a scalar output");

  for (ParamStore* s : stores) s->zero_grad();
  graph.backward(loss);

  std::vector<Tensor> input_grads;
  for (const auto& name : check_inputs) input_grads.push_back(graph.input_grad(name));

  GradcheckReport report;
  auto evaluate = [&](const std::map<std::string, Tensor>& feed) { return graph.forward(feed), graph.value(loss)(0, 0); };
  auto record = [&](GradcheckEntry e) {
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
    report.entries.push_back(std::move(e));
  };

  for (ParamStore* s : stores) {
    std::vector<Tensor> analytic;
    for (const auto& e : s->entries()) analytic.push_back(e.grad);
    for (std::size_t p = 0; p < s->size(); ++p) {
      auto& entry = s->entry(p);
      GradcheckEntry rep{.name = entry.name};
      for (Index i = 0; i < entry.value.size(); ++i) {
        double& x = entry.value.data()[i];
        const double orig = x;
        x = orig + epsilon;
        const double fp = evaluate(inputs);
        x = orig - epsilon;
        const double fm = evaluate(inputs);
        x = orig;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double a = analytic[p].data()[i];
        rep.max_relative_error = std::max(rep.max_relative_error, relative_error(a, numeric));
        rep.max_absolute_error = std::max(rep.max_absolute_error, std::abs(a - numeric));
        ++rep.count;
      }
      record(std::move(rep));
    }
  }

  for (std::size_t k = 0; k < check_inputs.size(); ++k) {
    const std::string& name = check_inputs[k];
    auto feed = inputs;
    Tensor& x = feed.at(name);
    GradcheckEntry rep{.name = "input:" + name};
    for (Index i = 0; i < x.size(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + epsilon;
      const double fp = evaluate(feed);
      x.data()[i] = orig - epsilon;
      const double fm = evaluate(feed);
      x.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = input_grads[k].data()[i];
      rep.max_relative_error = std::max(rep.max_relative_error, relative_error(a, numeric));
      rep.max_absolute_error = std::max(rep.max_absolute_error, std::abs(a - numeric));
      ++rep.count;
    }
    record(std::move(rep));
  }

  // Leave the graph evaluated and differentiated at the unperturbed point.
  graph.forward(inputs);
  for (ParamStore* s : stores) s->zero_grad();
  graph.backward(loss);
  return report;
}

double sgd_step(std::span<ParamStore* const> stores, double learning_rate, double clip_norm) {
  double sq = 0.0;
  for (const ParamStore* s : stores) sq += s->grad_squared_norm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient norm");
  const double factor = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (ParamStore* s : stores) {
    for (auto& e : s->entries()) e.value -= (learning_rate * factor) * e.grad;
  }
  return norm;
}

}  // namespace emosynth::ad

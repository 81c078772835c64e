#include "emosynth/stylegen.hpp"

#include <algorithm>

namespace emosynth {

namespace {

constexpr const char* kTokenTable = "generator.tokens";
constexpr const char* kEmotionRows = "emotion.table";
constexpr const char* kEmotionNull = "emotion.null";

// Column mean of x, summing each column in sorted order.
RowVector<double> sorted_column_mean(const Tensor& x) {
  RowVector<double> out(x.cols());
  std::vector<double> column(static_cast<std::size_t>(x.rows()));
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index i = 0; i < x.rows(); ++i) column[static_cast<std::size_t>(i)] = x(i, c);
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out(c) = acc / static_cast<double>(x.rows());
  }
  return out;
}

}  // namespace

StyleEncoder::StyleEncoder(const ModelDims& dims, std::uint64_t seed)
    : params(derive_seed(seed, "style")),
      net_("style.mlp", MlpShape{.in = dims.dim, .hidden = dims.hidden, .hidden_layers = dims.hidden_layers, .out = dims.style,
                              .linear_skip = dims.linear_skip}) {
  net_.init(params);
}

StyleVector StyleEncoder::encode(const FrameMatrix& reference) const {
  if (reference.rows() == 0) throw std::invalid_argument("style reference has no frames");
  return sorted_column_mean(net_.apply(params, reference));
}

ad::Node StyleEncoder::build(ad::Graph& graph, ad::Node frames, const Segments& segments) {
  return graph.segment_mean(net_.build(graph, params, frames), segments);
}

EmotionTable::EmotionTable(const ModelDims& dims, std::uint64_t seed)
    : params(derive_seed(seed, "emotion")), emotions_(dims.emotions) {
  params.add_uniform(kEmotionRows, dims.emotions, dims.emotion_embed);
  params.add_uniform(kEmotionNull, 1, dims.emotion_embed);
}

void EmotionTable::check(Index label) const {
  if (label != kNullEmotion && (label < 0 || label >= emotions_)) {
    throw std::out_of_range("invalid emotion label " + std::to_string(label));
  }
}

RowVector<double> EmotionTable::embed(Index label) const {
  check(label);
  if (label == kNullEmotion) return params.value(kEmotionNull).row(0);
  return params.value(kEmotionRows).row(label);
}

ad::Node EmotionTable::build(ad::Graph& graph, std::span<const Index> labels) {
  std::vector<Index> rows;
  rows.reserve(labels.size());
  for (Index l : labels) {
    check(l);
    rows.push_back(l == kNullEmotion ? emotions_ : l);
  }
  const ad::Node parts[] = {graph.param(params, kEmotionRows), graph.param(params, kEmotionNull)};
  return graph.gather(graph.concat_rows(parts), std::move(rows));
}

Generator::Generator(const ModelDims& dims, std::uint64_t seed)
    : params(derive_seed(seed, "generator")),
      vocab_(dims.vocab),
      net_("generator.mlp", MlpShape{.in = dims.token_embed + dims.style + dims.emotion_embed,
                                     .hidden = dims.hidden,
                                     .hidden_layers = dims.hidden_layers,
                                     .out = dims.dim,
                                     .linear_skip = dims.linear_skip}) {
  params.add_uniform(kTokenTable, dims.vocab, dims.token_embed);
  net_.init(params);
}

void Generator::check_tokens(std::span<const Index> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("generator needs at least one token");
  for (Index x : tokens) {
    if (x < 0 || x >= vocab_) throw std::out_of_range("invalid token id " + std::to_string(x));
  }
}

FrameMatrix Generator::generate(std::span<const Index> tokens, const StyleVector& style,
                                const RowVector<double>& emotion) const {
  check_tokens(tokens);
  const Tensor& table = params.value(kTokenTable);
  const auto L = static_cast<Index>(tokens.size());
  Tensor x(L, table.cols() + style.size() + emotion.size());
  for (Index l = 0; l < L; ++l) {
    x.row(l) << table.row(tokens[static_cast<std::size_t>(l)]), style, emotion;
  }
  return net_.apply(params, x);
}

ad::Node Generator::build(ad::Graph& graph, std::span<const Index> tokens, ad::Node style, ad::Node emotion,
                          const Segments& segments) {
  check_tokens(tokens);
  if (static_cast<Index>(tokens.size()) != segments.rows()) {
    throw std::invalid_argument("token count does not match segment rows");
  }
  const ad::Node parts[] = {
      graph.gather(graph.param(params, kTokenTable), std::vector<Index>(tokens.begin(), tokens.end())),
      graph.segment_broadcast(style, segments),
      graph.segment_broadcast(emotion, segments),
  };
  return net_.build(graph, params, graph.concat_cols(parts));
}

}  // namespace emosynth

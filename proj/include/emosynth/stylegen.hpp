#ifndef EMOSYNTH_STYLEGEN_HPP
#define EMOSYNTH_STYLEGEN_HPP

// Reference-conditioned generator pair: a style encoder mapping reference
// frames to a style vector, a shared emotion embedding table with a separate
// null row, and a per-token generator producing the diffusion prior mean mu.
// Nothing here takes a speaker id; speakers enter only through references.

#include "emosynth/autodiff.hpp"
#include "emosynth/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace emosynth {

using StyleVector = RowVector<double>;

/// Label value selecting the null embedding.
inline constexpr Index kNullEmotion = -1;

struct ModelDims {
  Index dim = 8;
  Index vocab = 10;
  Index emotions = 4;
  Index style = 16;
  Index emotion_embed = 8;
  Index token_embed = 8;
  Index hidden = 64;
  Index hidden_layers = 2;
  /// Linear skip path in the style encoder and generator networks.
  bool linear_skip = true;
};

/// Per-frame MLP followed by mean pooling.
class StyleEncoder {
 public:
  StyleEncoder(const ModelDims& dims, std::uint64_t seed);

  /// Throws on an empty reference.
  [[nodiscard]] StyleVector encode(const FrameMatrix& reference) const;

  /// Style vectors (segments x style) for stacked reference frames.
  ad::Node build(ad::Graph& graph, ad::Node frames, const Segments& segments);

  ad::ParamStore params;

 private:
  Mlp net_;
};

class EmotionTable {
 public:
  EmotionTable(const ModelDims& dims, std::uint64_t seed);

  /// Row for `label`, or the null row for kNullEmotion.
  [[nodiscard]] RowVector<double> embed(Index label) const;

  /// labels.size() x emotion_embed lookup; kNullEmotion selects the null row.
  ad::Node build(ad::Graph& graph, std::span<const Index> labels);

  [[nodiscard]] Index emotions() const { return emotions_; }

  ad::ParamStore params;

 private:
  void check(Index label) const;
  Index emotions_;
};

class Generator {
 public:
  Generator(const ModelDims& dims, std::uint64_t seed);

  /// mu (L x D); row l depends only on tokens[l], style and emotion.
  [[nodiscard]] FrameMatrix generate(std::span<const Index> tokens, const StyleVector& style,
                                     const RowVector<double>& emotion) const;

  /// mu rows for stacked utterances. `style` and `emotion` hold one row per
  /// segment.
  ad::Node build(ad::Graph& graph, std::span<const Index> tokens, ad::Node style, ad::Node emotion,
                 const Segments& segments);

  ad::ParamStore params;

 private:
  void check_tokens(std::span<const Index> tokens) const;
  Index vocab_;
  Mlp net_;
};

}  // namespace emosynth

#endif  // EMOSYNTH_STYLEGEN_HPP

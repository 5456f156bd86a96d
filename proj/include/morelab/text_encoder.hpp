#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "morelab/config.hpp"
#include "morelab/layers.hpp"

namespace morelab {

/// Closed word vocabulary with fixed special-token ids.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kEntityOpen = 4;    // <s>
  static constexpr std::size_t kEntityClose = 5;   // </s>
  static constexpr std::size_t kObjectOpen = 6;    // <o>
  static constexpr std::size_t kObjectClose = 7;   // </o>

  Vocabulary();
  static Vocabulary from_words(std::span<const std::string> words);

  std::size_t add(const std::string& token);
  /// Unknown tokens map to kUnk.
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// One token per line; the line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);

/// Half-open token range [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const TokenSpan&) const = default;
};

struct TextInput {
  std::vector<std::string> tokens;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> segment_ids;
  std::vector<bool> pad_mask;  // true for real tokens
  std::size_t entity_marker_index = 0;
  std::optional<std::size_t> attribute_marker_index;

  std::size_t length() const { return token_ids.size(); }
};

/// Builds `[CLS] title-with-<s>..</s> [SEP] <o> caption </o>`; without a caption
/// the sequence ends at [SEP]. Over-long inputs lose caption tokens first,
/// then title tokens after the entity. `pad_to` appends [PAD] up to that length.
TextInput build_input(const Vocabulary& vocab, std::span<const std::string> title, TokenSpan entity,
                      std::optional<std::span<const std::string>> caption, std::size_t max_len = 96,
                      std::size_t pad_to = 0);

/// Hidden states of every layer, 0 (embeddings) through L_T.
struct TextEncoderState {
  std::vector<Var> hidden;
  const Var& last() const { return hidden.back(); }
};

/// Post-norm transformer: H' = LN(MHA(H)) + H, H = LN(FFN(H')) + H'.
class TextEncoder {
 public:
  TextEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng);

  Var embed(ForwardContext& ctx, const TextInput& input) const;
  TextEncoderState encode(ForwardContext& ctx, const TextInput& input) const;

 private:
  struct Layer {
    SelfAttention attention;
    LayerNorm attention_norm;
    FeedForward ffn;
    LayerNorm ffn_norm;
  };

  std::size_t max_tokens_;
  Tensor* token_embedding_;
  Tensor* position_embedding_;
  Tensor* segment_embedding_;
  LayerNorm embedding_norm_;
  std::vector<Layer> layers_;
};

}  // namespace morelab

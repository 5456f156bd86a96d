#include "morelab/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "morelab/errors.hpp"

namespace morelab {

Vocabulary::Vocabulary() {
  for (const char* special : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "<s>", "</s>", "<o>", "</o>"}) add(special);
}

Vocabulary Vocabulary::from_words(std::span<const std::string> words) {
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

std::size_t Vocabulary::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw InputError("vocabulary tokens must be non-empty and whitespace-free: '" + token + "'");
  }
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < v.size()) {
      if (line != v.token(line_no)) {
        throw IoError("vocabulary " + path.string() + ": line " + std::to_string(line_no) + " should be " +
                      v.token(line_no));
      }
    } else if (v.add(line) != line_no) {
      throw IoError("vocabulary " + path.string() + ": duplicate token " + line);
    }
    ++line_no;
  }
  return v;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

TextInput build_input(const Vocabulary& vocab, std::span<const std::string> title, TokenSpan entity,
                      std::optional<std::span<const std::string>> caption, std::size_t max_len, std::size_t pad_to) {
  if (title.empty()) throw InputError("build_input: empty title");
  if (entity.begin >= entity.end || entity.end > title.size()) {
    throw SpanError("build_input: entity span [" + std::to_string(entity.begin) + ", " + std::to_string(entity.end) +
                    ") outside title of " + std::to_string(title.size()) + " tokens");
  }
  // [CLS] title <s> </s> [SEP]
  std::size_t title_len = title.size();
  const std::size_t caption_overhead = caption ? 2 : 0;
  std::size_t fixed = title_len + 4 + caption_overhead;
  if (fixed > max_len) {
    const std::size_t excess = fixed - max_len;
    const std::size_t tail = title.size() - entity.end;
    if (excess > tail) {
      throw InputError("build_input: title of " + std::to_string(title.size()) + " tokens cannot fit in " +
                       std::to_string(max_len) + " without cutting the entity");
    }
    title_len -= excess;
    fixed -= excess;
  }
  std::size_t caption_len = caption ? std::min(caption->size(), max_len - fixed) : 0;

  TextInput in;
  auto push = [&](const std::string& tok, std::size_t id, std::size_t segment) {
    in.tokens.push_back(tok);
    in.token_ids.push_back(id);
    in.segment_ids.push_back(segment);
    in.pad_mask.push_back(true);
  };
  auto push_special = [&](std::size_t id, std::size_t segment) { push(vocab.token(id), id, segment); };
  auto push_word = [&](const std::string& w, std::size_t segment) { push(w, vocab.id(w), segment); };

  push_special(Vocabulary::kCls, 0);
  for (std::size_t i = 0; i < title_len; ++i) {
    if (i == entity.begin) {
      in.entity_marker_index = in.tokens.size();
      push_special(Vocabulary::kEntityOpen, 0);
    }
    push_word(title[i], 0);
    if (i + 1 == entity.end) push_special(Vocabulary::kEntityClose, 0);
  }
  push_special(Vocabulary::kSep, 0);
  if (caption) {
    in.attribute_marker_index = in.tokens.size();
    push_special(Vocabulary::kObjectOpen, 1);
    for (std::size_t i = 0; i < caption_len; ++i) push_word((*caption)[i], 1);
    push_special(Vocabulary::kObjectClose, 1);
  }
  if (pad_to > max_len) {
    throw InputError("build_input: pad_to " + std::to_string(pad_to) + " exceeds max length " +
                     std::to_string(max_len));
  }
  while (in.tokens.size() < pad_to) {
    push_special(Vocabulary::kPad, 0);
    in.pad_mask.back() = false;
  }
  return in;
}

TextEncoder::TextEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : max_tokens_(config.max_tokens) {
  const std::size_t d = config.hidden;
  token_embedding_ = &store.add("text.embeddings.token", {config.vocab_size, d}, Init::kNormal002, rng);
  position_embedding_ = &store.add("text.embeddings.position", {config.max_tokens, d}, Init::kNormal002, rng);
  segment_embedding_ = &store.add("text.embeddings.segment", {2, d}, Init::kNormal002, rng);
  embedding_norm_ = LayerNorm::create(store, "text.embeddings.norm", d, config.ln_eps, rng);
  for (std::size_t l = 0; l < config.text_layers; ++l) {
    const std::string p = "text.layer" + std::to_string(l);
    Layer layer;
    layer.attention = SelfAttention::create(store, p + ".attention", d, config.heads, rng);
    layer.attention_norm = LayerNorm::create(store, p + ".attention_norm", d, config.ln_eps, rng);
    layer.ffn = FeedForward::create(store, p + ".ffn", d, config.ffn, Activation::kGelu, rng);
    layer.ffn_norm = LayerNorm::create(store, p + ".ffn_norm", d, config.ln_eps, rng);
    layers_.push_back(layer);
  }
}

Var TextEncoder::embed(ForwardContext& ctx, const TextInput& input) const {
  Tape& t = ctx.tape;
  const std::size_t n = input.length();
  if (n == 0 || n > max_tokens_) {
    throw InputError("text input length " + std::to_string(n) + " outside [1, " + std::to_string(max_tokens_) + "]");
  }
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  Var tok = ops::gather_rows(t.leaf(*token_embedding_), input.token_ids);
  Var pos = ops::gather_rows(t.leaf(*position_embedding_), positions);
  Var seg = ops::gather_rows(t.leaf(*segment_embedding_), input.segment_ids);
  return embedding_norm_(t, ops::add(ops::add(tok, pos), seg));
}

TextEncoderState TextEncoder::encode(ForwardContext& ctx, const TextInput& input) const {
  Tape& t = ctx.tape;
  TextEncoderState state;
  state.hidden.push_back(embed(ctx, input));
  const bool padded = std::find(input.pad_mask.begin(), input.pad_mask.end(), false) != input.pad_mask.end();
  const std::vector<bool>* mask = padded ? &input.pad_mask : nullptr;
  for (const Layer& layer : layers_) {
    Var h = state.hidden.back();
    Var attended = ops::add(layer.attention_norm(t, layer.attention(ctx, h, mask)), h);
    state.hidden.push_back(ops::add(layer.ffn_norm(t, layer.ffn(t, attended)), attended));
  }
  return state;
}

}  // namespace morelab

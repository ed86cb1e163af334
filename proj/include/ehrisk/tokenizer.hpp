#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ehrisk {

inline constexpr std::size_t kMaxSequenceLength = 128;

/// Byte range of a token inside the source note.
struct TokenSpan {
    std::size_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const TokenSpan &, const TokenSpan &) = default;
};

struct TokenSequence {
    std::vector<std::int32_t> ids;
    /// Parallel to `ids`; the [EMPTY] token has a zero-length span.
    std::vector<TokenSpan> spans;

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
};

/// Token-to-id mapping. Ids 0 and 1 are always [EMPTY] and [UNK].
class Vocabulary {
  public:
    static constexpr std::int32_t kEmptyId = 0;
    static constexpr std::int32_t kUnknownId = 1;
    static constexpr std::string_view kEmptyToken = "[EMPTY]";
    static constexpr std::string_view kUnknownToken = "[UNK]";

    /// Reserved tokens only.
    Vocabulary();
    /// From an id-ordered token list; entries 0 and 1 must be the reserved tokens.
    explicit Vocabulary(std::vector<std::string> tokens);

    /// Tokens with frequency >= `min_frequency`, most frequent first, ties in
    /// lexicographic order, truncated to `max_size` entries including the reserved pair.
    static Vocabulary build(const std::vector<std::string> &corpus, std::size_t min_frequency = 2, std::size_t max_size = 20000);

    [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
    [[nodiscard]] std::int32_t id(std::string_view token) const;
    [[nodiscard]] const std::string &token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] const std::vector<std::string> &tokens() const noexcept { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

/// Lowercased words of `note` split on ASCII whitespace and punctuation, with their byte spans.
std::vector<std::pair<std::string, TokenSpan>> split_words(std::string_view note);

/// Maps `note` to ids, truncating at `max_length`. Never returns an empty sequence.
TokenSequence tokenize(std::string_view note, const Vocabulary &vocab, std::size_t max_length = kMaxSequenceLength);

}  // namespace ehrisk

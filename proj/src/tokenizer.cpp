#include "ehrisk/tokenizer.hpp"

#include "ehrisk/errors.hpp"

#include <algorithm>
#include <map>

namespace ehrisk {

namespace {

bool is_word_byte(unsigned char c) {
    // bytes >= 0x80 belong to multi-byte UTF-8 characters and stay inside words
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char ascii_lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{ std::string(kEmptyToken), std::string(kUnknownToken) }) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2 || tokens_[0] != kEmptyToken || tokens_[1] != kUnknownToken) {
        throw InvalidInputError("vocabulary must start with [EMPTY], [UNK]");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
            throw InvalidInputError("duplicate vocabulary entry '" + tokens_[i] + "'");
        }
    }
}

Vocabulary Vocabulary::build(const std::vector<std::string> &corpus, std::size_t min_frequency, std::size_t max_size) {
    std::map<std::string, std::size_t> counts;
    for (const auto &note : corpus) {
        for (auto &[word, span] : split_words(note)) {
            ++counts[word];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto &[word, count] : counts) {
        if (count >= min_frequency && word != kEmptyToken && word != kUnknownToken) {
            ranked.emplace_back(word, count);
        }
    }
    // std::map iteration is lexicographic, so a stable sort on count keeps ties ordered
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) { return a.second > b.second; });

    std::vector<std::string> tokens{ std::string(kEmptyToken), std::string(kUnknownToken) };
    for (auto &[word, count] : ranked) {
        if (tokens.size() >= max_size) {
            break;
        }
        tokens.push_back(word);
    }
    return Vocabulary(std::move(tokens));
}

std::int32_t Vocabulary::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnknownId : it->second;
}

std::vector<std::pair<std::string, TokenSpan>> split_words(std::string_view note) {
    std::vector<std::pair<std::string, TokenSpan>> words;
    std::size_t i = 0;
    while (i < note.size()) {
        while (i < note.size() && !is_word_byte(static_cast<unsigned char>(note[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < note.size() && is_word_byte(static_cast<unsigned char>(note[i]))) {
            ++i;
        }
        if (i > start) {
            std::string word(note.substr(start, i - start));
            std::transform(word.begin(), word.end(), word.begin(), ascii_lower);
            words.emplace_back(std::move(word), TokenSpan{ start, i - start });
        }
    }
    return words;
}

TokenSequence tokenize(std::string_view note, const Vocabulary &vocab, std::size_t max_length) {
    TokenSequence seq;
    for (auto &[word, span] : split_words(note)) {
        if (seq.ids.size() >= max_length) {
            break;
        }
        seq.ids.push_back(vocab.id(word));
        seq.spans.push_back(span);
    }
    if (seq.ids.empty()) {
        seq.ids.push_back(Vocabulary::kEmptyId);
        seq.spans.push_back(TokenSpan{});
    }
    return seq;
}

}  // namespace ehrisk

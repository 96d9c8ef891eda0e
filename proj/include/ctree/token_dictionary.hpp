#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctree/core.hpp"

namespace ctree {

/// Frozen word -> embedding table owned by a backend.
class BaseVocabulary {
public:
    virtual ~BaseVocabulary() = default;

    virtual std::size_t dim() const = 0;
    virtual std::optional<EmbeddingVector> lookup(std::string_view word) const = 0;
    /// Stable identity of the vocabulary contents; dictionaries only combine
    /// over equal fingerprints.
    virtual std::string fingerprint() const = 0;
    /// Hash over every entry, used to assert the vocabulary never changes.
    virtual std::string checksum() const = 0;
};

class StaticVocabulary final : public BaseVocabulary {
public:
    using WordMap = std::map<std::string, EmbeddingVector, std::less<>>;

    StaticVocabulary(std::size_t dim, WordMap words);

    std::size_t dim() const override { return dim_; }
    std::optional<EmbeddingVector> lookup(std::string_view word) const override;
    std::string fingerprint() const override { return checksum_; }
    std::string checksum() const override;

    const WordMap& words() const { return words_; }

private:
    std::size_t dim_;
    WordMap words_;
    std::string checksum_;
};

/// Base vocabulary plus injected placeholder tokens.
///
/// A value type: copies are independent, so a candidate job can own a clone
/// while other jobs read the original. The base layer is shared and never
/// written. A dictionary loaded from an archive may be detached (no base);
/// it still resolves every injected token and can be rebound later.
class TokenDictionary {
public:
    TokenDictionary() = default;
    explicit TokenDictionary(std::shared_ptr<const BaseVocabulary> base);
    static TokenDictionary detached(std::size_t dim, std::string base_fingerprint);

    std::size_t dim() const noexcept { return dim_; }
    const std::string& base_fingerprint() const noexcept { return base_fingerprint_; }
    bool has_base() const noexcept { return base_ != nullptr; }
    const std::shared_ptr<const BaseVocabulary>& base() const noexcept { return base_; }

    bool in_base(std::string_view word) const;
    bool is_injected(std::string_view token) const;
    bool resolves(std::string_view word) const { return is_injected(word) || in_base(word); }

    /// Injected tokens first, then the base layer.
    std::optional<EmbeddingVector> lookup(std::string_view word) const;
    const EmbeddingVector& injected_embedding(std::string_view token) const;

    const std::map<std::string, EmbeddingVector, std::less<>>& injected() const noexcept {
        return injected_;
    }

    /// In-place write of an injected token (used on owned clones).
    void set(std::string_view token, EmbeddingVector vector);
    /// Drops injected tokens; base layer untouched.
    void erase(std::string_view token);

    /// Attach a base vocabulary to a detached dictionary.
    TokenDictionary rebind(std::shared_ptr<const BaseVocabulary> base) const;

    friend bool operator==(const TokenDictionary& a, const TokenDictionary& b) {
        return a.dim_ == b.dim_ && a.base_fingerprint_ == b.base_fingerprint_ &&
               a.injected_ == b.injected_;
    }

private:
    std::shared_ptr<const BaseVocabulary> base_;
    std::size_t dim_ = 0;
    std::string base_fingerprint_;
    std::map<std::string, EmbeddingVector, std::less<>> injected_;
};

/// New dictionary with each token mapped to a copy of init_word's embedding.
TokenDictionary extend(const TokenDictionary& dict, std::span<const std::string> tokens,
                       std::string_view init_word);

/// Union of the injected layers over a shared base.
TokenDictionary merge(const TokenDictionary& a, const TokenDictionary& b);

/// Only `token` changes; every other entry is untouched.
TokenDictionary update_embedding(const TokenDictionary& dict, std::string_view token,
                                 EmbeddingVector vector);

/// Fills `{...}` slots positionally. Injected tokens are written as `<token>`
/// so the tokenizer sees them as one atomic word; base words are written bare.
std::string compose_prompt(std::string_view prompt_template, std::span<const std::string> tokens,
                           const TokenDictionary& dict);

/// Number of `{...}` slots in a template.
std::size_t count_slots(std::string_view prompt_template);

/// "<tree-id>_v<node-id>"
std::string placeholder_name(std::string_view tree_id, int node_id);

struct PromptWord {
    std::string text;
    bool placeholder = false;
};

/// Whitespace split; `<...>` words are placeholders, other words are
/// lower-cased with surrounding punctuation stripped.
std::vector<PromptWord> tokenize_prompt(std::string_view prompt);

}  // namespace ctree

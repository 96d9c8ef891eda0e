#include "ctree/token_dictionary.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"

namespace ctree {

StaticVocabulary::StaticVocabulary(std::size_t dim, WordMap words)
    : dim_(dim), words_(std::move(words)) {
    for (const auto& [word, vec] : words_) {
        if (vec.size() != dim_) {
            fail(ErrorCode::invalid_argument, "vocabulary word '" + word + "' has dimension " +
                                                  std::to_string(vec.size()) + ", expected " +
                                                  std::to_string(dim_));
        }
    }
    // computed once; the map is never written after construction
    std::uint64_t h = fnv1a64(std::to_string(dim_));
    for (const auto& [word, vec] : words_) {
        h = fnv1a64(word, h);
        h = fnv1a64(std::as_bytes(vec.values()), h);
    }
    checksum_ = to_hex(h);
}

std::optional<EmbeddingVector> StaticVocabulary::lookup(std::string_view word) const {
    const auto it = words_.find(word);
    if (it == words_.end()) return std::nullopt;
    return it->second;
}

std::string StaticVocabulary::checksum() const {
    return checksum_;
}

TokenDictionary::TokenDictionary(std::shared_ptr<const BaseVocabulary> base)
    : base_(std::move(base)) {
    if (!base_) {
        fail(ErrorCode::invalid_argument, "dictionary needs a base vocabulary");
    }
    dim_ = base_->dim();
    base_fingerprint_ = base_->fingerprint();
}

TokenDictionary TokenDictionary::detached(std::size_t dim, std::string base_fingerprint) {
    TokenDictionary d;
    d.dim_ = dim;
    d.base_fingerprint_ = std::move(base_fingerprint);
    return d;
}

bool TokenDictionary::in_base(std::string_view word) const {
    return base_ && base_->lookup(word).has_value();
}

bool TokenDictionary::is_injected(std::string_view token) const {
    return injected_.find(token) != injected_.end();
}

std::optional<EmbeddingVector> TokenDictionary::lookup(std::string_view word) const {
    if (const auto it = injected_.find(word); it != injected_.end()) {
        return it->second;
    }
    if (base_) return base_->lookup(word);
    return std::nullopt;
}

const EmbeddingVector& TokenDictionary::injected_embedding(std::string_view token) const {
    const auto it = injected_.find(token);
    if (it == injected_.end()) {
        fail(ErrorCode::unknown_token, "token '" + std::string(token) + "' is not injected");
    }
    return it->second;
}

void TokenDictionary::set(std::string_view token, EmbeddingVector vector) {
    if (in_base(token)) {
        fail(ErrorCode::frozen_token, "'" + std::string(token) + "' belongs to the frozen base vocabulary");
    }
    if (vector.size() != dim_) {
        fail(ErrorCode::invalid_argument, "embedding for '" + std::string(token) + "' has dimension " +
                                              std::to_string(vector.size()) + ", expected " +
                                              std::to_string(dim_));
    }
    if (const auto it = injected_.find(token); it != injected_.end()) {
        it->second = std::move(vector);
    } else {
        injected_.emplace(std::string(token), std::move(vector));
    }
}

void TokenDictionary::erase(std::string_view token) {
    if (const auto it = injected_.find(token); it != injected_.end()) {
        injected_.erase(it);
    }
}

TokenDictionary TokenDictionary::rebind(std::shared_ptr<const BaseVocabulary> base) const {
    TokenDictionary out(std::move(base));
    if (out.dim_ != dim_ || out.base_fingerprint_ != base_fingerprint_) {
        fail(ErrorCode::base_mismatch, "base vocabulary " + out.base_fingerprint_ +
                                           " does not match dictionary base " + base_fingerprint_);
    }
    for (const auto& [token, vec] : injected_) {
        if (out.in_base(token)) {
            fail(ErrorCode::key_collision, "injected token '" + token + "' shadows a base word");
        }
        out.injected_.emplace(token, vec);
    }
    return out;
}

TokenDictionary extend(const TokenDictionary& dict, std::span<const std::string> tokens,
                       std::string_view init_word) {
    if (tokens.empty()) {
        fail(ErrorCode::invalid_argument, "extend needs at least one token");
    }
    std::set<std::string_view> seen;
    for (const auto& t : tokens) {
        if (t.empty()) fail(ErrorCode::invalid_argument, "empty token name");
        if (!seen.insert(t).second || dict.resolves(t)) {
            fail(ErrorCode::duplicate_token, "token '" + t + "' already present");
        }
    }
    std::optional<EmbeddingVector> init;
    if (dict.has_base()) init = dict.base()->lookup(init_word);
    if (!init) {
        fail(ErrorCode::unknown_init_word,
             "init word '" + std::string(init_word) + "' is not in the base vocabulary");
    }
    TokenDictionary out = dict;
    for (const auto& t : tokens) {
        out.set(t, *init);
    }
    return out;
}

TokenDictionary merge(const TokenDictionary& a, const TokenDictionary& b) {
    if (a.dim() != b.dim() || a.base_fingerprint() != b.base_fingerprint()) {
        fail(ErrorCode::base_mismatch, "dictionaries are built over different base vocabularies");
    }
    std::string collisions;
    for (const auto& [token, vec] : b.injected()) {
        if (a.is_injected(token)) {
            collisions += (collisions.empty() ? "" : ", ") + token;
        }
    }
    if (!collisions.empty()) {
        fail(ErrorCode::key_collision, "tokens present in both dictionaries: " + collisions);
    }
    TokenDictionary out = a.has_base() || !b.has_base() ? a : a.rebind(b.base());
    for (const auto& [token, vec] : b.injected()) {
        out.set(token, vec);
    }
    return out;
}

TokenDictionary update_embedding(const TokenDictionary& dict, std::string_view token,
                                 EmbeddingVector vector) {
    if (dict.in_base(token)) {
        fail(ErrorCode::frozen_token, "'" + std::string(token) + "' belongs to the frozen base vocabulary");
    }
    if (!dict.is_injected(token)) {
        fail(ErrorCode::unknown_token, "token '" + std::string(token) + "' is not injected");
    }
    TokenDictionary out = dict;
    out.set(token, std::move(vector));
    return out;
}

std::size_t count_slots(std::string_view tpl) {
    std::size_t n = 0;
    for (std::size_t pos = 0; (pos = tpl.find('{', pos)) != std::string_view::npos;) {
        const auto close = tpl.find('}', pos);
        if (close == std::string_view::npos) break;
        ++n;
        pos = close + 1;
    }
    return n;
}

std::string compose_prompt(std::string_view tpl, std::span<const std::string> tokens,
                           const TokenDictionary& dict) {
    const std::size_t slots = count_slots(tpl);
    if (slots != tokens.size()) {
        fail(ErrorCode::arity_mismatch, "template has " + std::to_string(slots) + " slots but " +
                                            std::to_string(tokens.size()) + " tokens were given");
    }
    std::string out;
    std::size_t next = 0;
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        const auto open = tpl.find('{', pos);
        const auto close = open == std::string_view::npos ? open : tpl.find('}', open);
        if (close == std::string_view::npos) {
            out.append(tpl.substr(pos));
            break;
        }
        out.append(tpl.substr(pos, open - pos));
        const std::string& token = tokens[next++];
        if (dict.is_injected(token)) {
            out += "<" + token + ">";
        } else if (dict.in_base(token)) {
            out += token;
        } else {
            fail(ErrorCode::unknown_token, "token '" + token + "' does not resolve");
        }
        pos = close + 1;
    }
    return out;
}

std::string placeholder_name(std::string_view tree_id, int node_id) {
    return std::string(tree_id) + "_v" + std::to_string(node_id);
}

std::vector<PromptWord> tokenize_prompt(std::string_view prompt) {
    std::vector<PromptWord> words;
    std::size_t pos = 0;
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (pos < prompt.size()) {
        while (pos < prompt.size() && is_space(prompt[pos])) ++pos;
        std::size_t end = pos;
        while (end < prompt.size() && !is_space(prompt[end])) ++end;
        std::string_view raw = prompt.substr(pos, end - pos);
        pos = end;
        if (raw.empty()) continue;

        // "<tok>," and "(<tok>)" are still placeholders
        if (const auto open = raw.find('<'); open != std::string_view::npos) {
            const auto close = raw.find('>', open);
            if (close != std::string_view::npos && close > open + 1) {
                words.push_back({std::string(raw.substr(open + 1, close - open - 1)), true});
                continue;
            }
        }
        auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
        std::size_t b = 0;
        std::size_t e = raw.size();
        while (b < e && !keep(raw[b])) ++b;
        while (e > b && !keep(raw[e - 1])) --e;
        if (b == e) continue;
        std::string w(raw.substr(b, e - b));
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.push_back({std::move(w), false});
    }
    return words;
}

}  // namespace ctree

#pragma once

// Caption and word-embedding table types shared by the encoders and the
// text attack.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmi/errors.hpp"
#include "cmi/tensor.hpp"

namespace cmi {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline bool has_punctuation(const std::string& s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::ispunct(c) != 0; });
}

inline std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

// A caption under attack. original_words is frozen at construction;
// replaced_positions is exactly the set of positions where the current word
// differs from the original.
class Caption {
  public:
    Caption() = default;
    explicit Caption(std::vector<std::string> words) : words_(words), original_(std::move(words)) {}
    static Caption from_text(const std::string& text) { return Caption(split_words(text)); }

    const std::vector<std::string>& words() const { return words_; }
    const std::vector<std::string>& original_words() const { return original_; }
    const std::set<std::size_t>& replaced_positions() const { return replaced_; }
    std::size_t size() const { return words_.size(); }
    bool empty() const { return words_.empty(); }
    std::size_t words_changed() const { return replaced_.size(); }

    std::string text() const {
        std::string out;
        for (std::size_t i = 0; i < words_.size(); ++i) {
            if (i) out += ' ';
            out += words_[i];
        }
        return out;
    }

    Caption with_replacement(std::size_t position, const std::string& token) const {
        if (position >= words_.size()) throw InvalidInputError("replacement position out of range");
        Caption next = *this;
        next.words_[position] = token;
        if (token == original_[position]) {
            next.replaced_.erase(position);
        } else {
            next.replaced_.insert(position);
        }
        return next;
    }

    // Current words with one position dropped.
    std::vector<std::string> words_without(std::size_t position) const {
        std::vector<std::string> out;
        out.reserve(words_.size());
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (i != position) out.push_back(words_[i]);
        return out;
    }

    friend bool operator==(const Caption&, const Caption&) = default;

  private:
    std::vector<std::string> words_;
    std::vector<std::string> original_;
    std::set<std::size_t> replaced_;
};

using CaptionSet = std::vector<Caption>;

// Token -> dense vector lookup. Tokens are unique; vectors finite and nonzero.
class WordEmbeddingTable {
  public:
    explicit WordEmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::span<const double> vector(std::size_t row) const { return {vectors_.data() + row * dim_, dim_}; }

    // Returns false (and keeps the existing row) when the token is already present.
    bool add(const std::string& token, std::span<const double> values) {
        if (token.empty()) throw InvalidInputError("embedding table token is empty");
        if (dim_ == 0) dim_ = values.size();
        if (values.size() != dim_) {
            throw InvalidInputError("embedding for '" + token + "' has dimension " + std::to_string(values.size()) +
                                    ", table dimension is " + std::to_string(dim_));
        }
        if (index_.contains(token)) return false;
        bool nonzero = false;
        for (double v : values) {
            if (!std::isfinite(v)) throw InvalidInputError("embedding for '" + token + "' has a non-finite entry");
            nonzero = nonzero || v != 0.0;
        }
        if (!nonzero) throw InvalidInputError("embedding for '" + token + "' is the zero vector");
        index_.emplace(token, tokens_.size());
        tokens_.push_back(token);
        vectors_.insert(vectors_.end(), values.begin(), values.end());
        return true;
    }

    std::optional<std::size_t> find_exact(const std::string& token) const {
        if (auto it = index_.find(token); it != index_.end()) return it->second;
        return std::nullopt;
    }

    // Plain words are looked up lowercased. Tokens carrying punctuation are
    // tried verbatim first, then lowercased.
    std::optional<std::size_t> find(const std::string& token) const {
        if (has_punctuation(token)) {
            if (auto row = find_exact(token)) return row;
        }
        return find_exact(to_lower(token));
    }

    bool contains(const std::string& token) const { return find(token).has_value(); }

  private:
    std::size_t dim_;
    std::vector<std::string> tokens_;
    std::vector<double> vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace cmi

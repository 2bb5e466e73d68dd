#pragma once

// Embedding-guided caption attack: rank words by drop-one loss delta, build
// substitute candidates from word-embedding neighbours (falling back to a
// filler model for out-of-table words), and keep the substitute that pushes
// the caption furthest from the image.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cmi/attack_math.hpp"
#include "cmi/backend.hpp"
#include "cmi/errors.hpp"
#include "cmi/text.hpp"

namespace cmi {

// Masked-word predictor contract. Implementations return up to k vocabulary
// tokens ordered by score, never the original token, deterministically.
class FillerModel {
  public:
    virtual ~FillerModel() = default;
    virtual std::vector<std::string> predict(const Caption& caption, std::size_t position, std::size_t k) const = 0;
};

// Context-free stand-in for a masked language model: every position gets the
// same vocabulary ranking by a fixed unigram score.
class UnigramFiller final : public FillerModel {
  public:
    UnigramFiller(std::vector<std::string> vocabulary, std::vector<double> scores) {
        if (vocabulary.size() != scores.size()) throw InvalidInputError("unigram filler: vocabulary/score size mismatch");
        order_.resize(vocabulary.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::stable_sort(order_.begin(), order_.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        vocab_ = std::move(vocabulary);
    }

    static UnigramFiller seeded(std::vector<std::string> vocabulary, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::vector<double> scores(vocabulary.size());
        for (auto& s : scores) s = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return UnigramFiller(std::move(vocabulary), std::move(scores));
    }

    std::vector<std::string> predict(const Caption& caption, std::size_t position, std::size_t k) const override {
        if (position >= caption.size()) throw InvalidInputError("filler position out of range");
        const std::string original = to_lower(caption.original_words()[position]);
        const std::string current = to_lower(caption.words()[position]);
        std::vector<std::string> out;
        for (std::size_t idx : order_) {
            if (out.size() >= k) break;
            const std::string token = to_lower(vocab_[idx]);
            if (token == original || token == current) continue;
            out.push_back(token);
        }
        return out;
    }

  private:
    std::vector<std::string> vocab_;
    std::vector<std::size_t> order_;
};

// Candidates from a user-supplied synonym list (token -> synonyms).
class SynonymFiller final : public FillerModel {
  public:
    explicit SynonymFiller(std::map<std::string, std::vector<std::string>> synonyms) {
        for (auto& [token, list] : synonyms) synonyms_[to_lower(token)] = std::move(list);
    }

    std::vector<std::string> predict(const Caption& caption, std::size_t position, std::size_t k) const override {
        if (position >= caption.size()) throw InvalidInputError("synonym position out of range");
        const std::string original = to_lower(caption.original_words()[position]);
        std::vector<std::string> out;
        auto it = synonyms_.find(original);
        if (it == synonyms_.end()) return out;
        for (const auto& s : it->second) {
            if (out.size() >= k) break;
            const std::string token = to_lower(s);
            if (token == original || std::find(out.begin(), out.end(), token) != out.end()) continue;
            out.push_back(token);
        }
        return out;
    }

    const std::map<std::string, std::vector<std::string>>& entries() const { return synonyms_; }

  private:
    std::map<std::string, std::vector<std::string>> synonyms_;
};

enum class CandidateSource { embedding_table, filler_model };

struct SubstituteCandidateSet {
    std::size_t position = 0;
    std::vector<std::string> candidates;
    CandidateSource source = CandidateSource::embedding_table;
};

struct SubstituteChoice {
    std::string token;
    double loss = 0.0;
};

// Positions by descending importance, where importance is the loss increase
// from dropping that word. Ties go to the lower index.
inline std::vector<std::size_t> rank_words(const ModelBackend& backend, const Caption& caption,
                                           const EmbeddingVector& image_emb) {
    if (caption.empty()) throw InvalidInputError("cannot rank words of an empty caption");
    if (caption.size() == 1) return {0};
    const double base = pair_loss(backend.encode_text(caption), image_emb);
    std::vector<double> importance(caption.size());
    for (std::size_t p = 0; p < caption.size(); ++p) {
        try {
            importance[p] = pair_loss(backend.encode_words(caption.words_without(p)), image_emb) - base;
        } catch (const DegenerateError&) {
            importance[p] = -std::numeric_limits<double>::infinity();
        }
    }
    std::vector<std::size_t> order(caption.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
    return order;
}

// Table neighbours with cosine > tau when the word is in the table, otherwise
// the filler model's top k. nullopt when nothing survives.
inline std::optional<SubstituteCandidateSet> build_substitutes(const WordEmbeddingTable& table,
                                                               const FillerModel& filler, const Caption& caption,
                                                               std::size_t position, double tau, std::size_t k) {
    if (position >= caption.size()) throw InvalidInputError("substitute position out of range");
    if (!(tau >= 0.0 && tau < 1.0)) throw InvalidInputError("tau must lie in [0,1)");
    if (k == 0) throw InvalidInputError("k must be at least 1");

    const std::string& word = caption.original_words()[position];
    SubstituteCandidateSet out{position, {}, CandidateSource::embedding_table};
    if (const auto row = table.find(word)) {
        const auto target = table.vector(*row);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t r = 0; r < table.size(); ++r) {
            if (r == *row) continue;
            const double sim = cosine_similarity(table.vector(r), target);
            if (sim > tau) scored.emplace_back(sim, r);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        const std::string original = to_lower(word);
        for (const auto& [sim, r] : scored) {
            if (out.candidates.size() >= k) break;
            std::string token = to_lower(table.tokens()[r]);
            if (token == original || std::find(out.candidates.begin(), out.candidates.end(), token) != out.candidates.end())
                continue;
            out.candidates.push_back(std::move(token));
        }
    } else {
        out.source = CandidateSource::filler_model;
        out.candidates = filler.predict(caption, position, k);
    }
    if (out.candidates.empty()) return std::nullopt;
    return out;
}

// Embedding-table branch only; words missing from the table get no candidates.
inline std::optional<SubstituteCandidateSet> table_substitutes(const WordEmbeddingTable& table, const Caption& caption,
                                                               std::size_t position, double tau, std::size_t k) {
    if (!table.contains(caption.original_words()[position])) return std::nullopt;
    struct NoFiller final : FillerModel {
        std::vector<std::string> predict(const Caption&, std::size_t, std::size_t) const override { return {}; }
    } none;
    return build_substitutes(table, none, caption, position, tau, k);
}

inline std::optional<SubstituteCandidateSet> filler_substitutes(const FillerModel& filler, const Caption& caption,
                                                                std::size_t position, std::size_t k) {
    SubstituteCandidateSet out{position, filler.predict(caption, position, k), CandidateSource::filler_model};
    if (out.candidates.empty()) return std::nullopt;
    return out;
}

// argmax over candidates of pair_loss(caption with candidate, image). The
// earlier candidate wins ties. Candidates whose caption cannot be encoded
// score -inf.
inline SubstituteChoice select_substitute(const ModelBackend& backend, const Caption& caption, std::size_t position,
                                          const SubstituteCandidateSet& candidates, const EmbeddingVector& image_emb) {
    if (candidates.candidates.empty()) throw InvalidInputError("select_substitute needs at least one candidate");
    SubstituteChoice best{candidates.candidates.front(), -std::numeric_limits<double>::infinity()};
    bool first = true;
    for (const auto& token : candidates.candidates) {
        double loss = -std::numeric_limits<double>::infinity();
        try {
            loss = pair_loss(backend.encode_text(caption.with_replacement(position, token)), image_emb);
        } catch (const DegenerateError&) {
        }
        if (first || loss > best.loss) {
            best = SubstituteChoice{token, loss};
            first = false;
        }
    }
    return best;
}

using CandidateProvider = std::function<std::optional<SubstituteCandidateSet>(const Caption&, std::size_t)>;

// Greedy walk over ranked positions. A replacement is committed only when it
// strictly increases the loss; existing replacements count against eps_t and
// their positions are not revisited.
inline Caption attack_caption_with(const ModelBackend& backend, const CandidateProvider& provider,
                                   const Caption& caption, const EmbeddingVector& image_emb, std::size_t eps_t) {
    if (eps_t == 0 || caption.words_changed() >= eps_t) return caption;
    Caption current = caption;
    double current_loss = pair_loss(backend.encode_text(current), image_emb);
    for (std::size_t p : rank_words(backend, current, image_emb)) {
        if (current.words_changed() >= eps_t) break;
        if (current.replaced_positions().contains(p)) continue;
        const auto candidates = provider(current, p);
        if (!candidates) continue;
        const auto choice = select_substitute(backend, current, p, *candidates, image_emb);
        if (choice.loss > current_loss) {
            current = current.with_replacement(p, choice.token);
            current_loss = choice.loss;
        }
    }
    return current;
}

inline Caption attack_caption(const ModelBackend& backend, const WordEmbeddingTable& table, const FillerModel& filler,
                              const Caption& caption, const EmbeddingVector& image_emb, std::size_t eps_t, double tau,
                              std::size_t k) {
    return attack_caption_with(
        backend,
        [&](const Caption& c, std::size_t p) { return build_substitutes(table, filler, c, p, tau, k); },
        caption, image_emb, eps_t);
}

} // namespace cmi

#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cmi/backend.hpp"
#include "cmi/cmi_engine.hpp"
#include "cmi/eval_retrieval.hpp"
#include "cmi/text.hpp"
#include "cmi/toy_corpus.hpp"

namespace cmi::testing {

inline std::shared_ptr<WordEmbeddingTable> random_table(std::uint64_t seed, std::size_t n_tokens, std::size_t dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    auto table = std::make_shared<WordEmbeddingTable>(dim);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        std::vector<double> v(dim);
        for (auto& x : v) x = n(rng);
        table->add("t" + std::to_string(i), v);
    }
    return table;
}

inline std::vector<std::string> random_words(std::mt19937_64& rng, const WordEmbeddingTable& table, std::size_t len) {
    std::uniform_int_distribution<std::size_t> pick(0, table.size() - 1);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.push_back(table.tokens()[pick(rng)]);
    return words;
}

inline ImageTensor random_image(std::mt19937_64& rng, Shape3 s, double lo = 0.1, double hi = 0.9) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor3 t(s);
    for (auto& v : t.values()) v = u(rng);
    return ImageTensor(std::move(t));
}

// Generated corpus plus everything an attack needs, wired the same way the
// CLI wires it.
struct ToyRig {
    explicit ToyRig(const ToyCorpusSpec& spec)
        : toy(generate_toy_corpus(spec)),
          backend(spec.seed, spec.image_shape, spec.embedding_dim, toy.table),
          filler(UnigramFiller::seeded(toy.table->tokens(), spec.seed)),
          synonyms(toy.synonyms),
          corpus(corpus_from_manifest(toy.manifest)) {}

    AttackResources resources() const { return {backend, *toy.table, filler, &synonyms}; }

    ToyCorpus toy;
    ToyAlignedBackend backend;
    UnigramFiller filler;
    SynonymFiller synonyms;
    RetrievalCorpus corpus;
};

} // namespace cmi::testing

#pragma once

// Seeded desk-scale corpus for the toy backend. Every pair belongs to a latent
// word cluster; its captions draw words from that cluster and its image is
// solved so the toy image encoder lands on the pair's mean caption direction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cmi/backend.hpp"
#include "cmi/errors.hpp"
#include "cmi/io.hpp"
#include "cmi/text.hpp"

namespace cmi {

struct ToyCorpusSpec {
    std::uint64_t seed = 0;
    std::size_t n_pairs = 100;
    Shape3 image_shape{3, 16, 16};
    std::size_t vocab_size = 200;
    std::size_t caption_len = 5;
    std::size_t captions_per_pair = 2;
    std::size_t n_clusters = 10;
    std::size_t embedding_dim = 16;
    std::size_t word_dim = 32;
    // Fraction of the vocabulary left out of the embedding table, so the
    // filler fallback is exercised.
    double oov_fraction = 0.1;
};

struct ToyCorpus {
    DatasetManifest manifest;
    std::shared_ptr<const WordEmbeddingTable> table;
    SynonymMap synonyms;
    double matched_mean_sim = 0.0;
    double mismatched_mean_sim = 0.0;
};

inline std::string toy_token(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%03zu", i);
    return buf;
}

inline ToyCorpus generate_toy_corpus(const ToyCorpusSpec& spec) {
    if (spec.n_pairs == 0 || spec.vocab_size == 0 || spec.caption_len == 0 || spec.captions_per_pair == 0 ||
        spec.n_clusters == 0 || spec.image_shape.size() == 0 || spec.word_dim == 0) {
        throw DataError("toy corpus sizes must all be positive");
    }
    if (spec.embedding_dim < 2) throw DataError("toy corpus embedding_dim must be at least 2");
    if (spec.vocab_size < spec.caption_len * spec.n_clusters) {
        throw DataError("vocab_size " + std::to_string(spec.vocab_size) + " is smaller than caption_len * clusters = " +
                        std::to_string(spec.caption_len * spec.n_clusters));
    }
    const std::size_t d = spec.embedding_dim;
    const auto weights = make_toy_weights(spec.seed, spec.image_shape, d, spec.word_dim);
    SeededNormal normal(spec.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::vector<double>> latents(spec.n_clusters, std::vector<double>(d));
    for (auto& z : latents) {
        for (auto& v : z) v = normal();
        const double n = l2_norm(z);
        for (auto& v : z) v /= n;
    }

    // Word w belongs to cluster w mod n_clusters; its vector is the cluster
    // direction pulled back through W_txt plus noise.
    const std::size_t n_oov = static_cast<std::size_t>(std::floor(spec.oov_fraction * static_cast<double>(spec.vocab_size)));
    std::vector<std::vector<std::size_t>> cluster_words(spec.n_clusters);
    std::vector<bool> in_table(spec.vocab_size, true);
    auto table = std::make_shared<WordEmbeddingTable>(spec.word_dim);
    for (std::size_t w = 0; w < spec.vocab_size; ++w) {
        cluster_words[w % spec.n_clusters].push_back(w);
        const auto base = weights.text.multiply_transposed(latents[w % spec.n_clusters]);
        std::vector<double> v(spec.word_dim);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = base[k] + 0.15 * normal() / std::sqrt(double(spec.word_dim));
        // the last n_oov words (one stride over clusters) are left out of the table
        if (w + n_oov >= spec.vocab_size) {
            in_table[w] = false;
            continue;
        }
        table->add(toy_token(w), v);
    }

    ToyCorpus out;
    ToyAlignedBackend backend(spec.seed, spec.image_shape, d, table);

    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w_img(
        weights.image.values.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(spec.image_shape.size()));
    const Eigen::MatrixXd gram = w_img * w_img.transpose();
    const auto gram_solver = gram.ldlt();
    const Eigen::VectorXd offset = w_img * Eigen::VectorXd::Constant(w_img.cols(), 0.5);

    auto draw = [&](std::size_t n) {
        return static_cast<std::size_t>(normal.uniform() * static_cast<double>(n)) % n;
    };

    std::vector<ImageTensor> images;
    std::vector<std::vector<EmbeddingVector>> caption_embs;
    for (std::size_t p = 0; p < spec.n_pairs; ++p) {
        const auto& pool = cluster_words[p % spec.n_clusters];
        ManifestEntry entry;
        entry.pair_id = "pair" + std::to_string(p);
        Eigen::VectorXd target = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        std::vector<EmbeddingVector> embs;
        for (std::size_t c = 0; c < spec.captions_per_pair; ++c) {
            std::vector<std::string> words;
            bool any_in_table = false;
            while (!any_in_table) {
                words.clear();
                for (std::size_t i = 0; i < spec.caption_len; ++i) {
                    const std::size_t w = pool[draw(pool.size())];
                    any_in_table = any_in_table || in_table[w];
                    words.push_back(toy_token(w));
                }
            }
            const auto e = backend.encode_words(words);
            for (std::size_t k = 0; k < d; ++k) target[static_cast<Eigen::Index>(k)] += e[k];
            embs.push_back(e);
            std::string text;
            for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
            entry.captions.push_back(text);
        }
        target.normalize();
        // Minimum-norm pixel offset delta with W_img (0.5 + delta) = gain * target.
        double gain = 2.0;
        Eigen::VectorXd delta;
        for (;;) {
            delta = w_img.transpose() * gram_solver.solve(gain * target - offset);
            if (delta.cwiseAbs().maxCoeff() <= 0.45 || gain < 0.05) break;
            gain *= 0.8;
        }
        InlineImage img{spec.image_shape, std::vector<std::uint8_t>(spec.image_shape.size())};
        for (std::size_t i = 0; i < img.u8.size(); ++i) {
            const double v = std::clamp(0.5 + delta[static_cast<Eigen::Index>(i)] + 0.02 * (normal.uniform() - 0.5), 0.0, 1.0);
            img.u8[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        images.push_back(decode_inline(img));
        caption_embs.push_back(std::move(embs));
        entry.image = std::move(img);
        out.manifest.entries.push_back(std::move(entry));
    }

    // Separation sanity: matched pairs must be closer than mismatched ones.
    double matched = 0.0;
    double mismatched = 0.0;
    std::size_t n_matched = 0;
    std::size_t n_mismatched = 0;
    for (std::size_t p = 0; p < spec.n_pairs; ++p) {
        const auto e_i = backend.encode_image(images[p]);
        for (std::size_t q = 0; q < spec.n_pairs; ++q) {
            for (const auto& e_t : caption_embs[q]) {
                const double s = cosine_similarity(e_t, e_i);
                if (p == q) {
                    matched += s;
                    ++n_matched;
                } else {
                    mismatched += s;
                    ++n_mismatched;
                }
            }
        }
    }
    out.matched_mean_sim = matched / static_cast<double>(n_matched);
    out.mismatched_mean_sim = n_mismatched ? mismatched / static_cast<double>(n_mismatched) : -1.0;
    if (!(out.matched_mean_sim > out.mismatched_mean_sim)) {
        throw DataError("generated toy corpus is not aligned: matched mean similarity does not exceed mismatched");
    }

    // Word-level synonym lists: up to five same-cluster words, in vocabulary order.
    for (std::size_t w = 0; w < spec.vocab_size; ++w) {
        auto& list = out.synonyms[toy_token(w)];
        for (std::size_t other : cluster_words[w % spec.n_clusters]) {
            if (other == w) continue;
            list.push_back(toy_token(other));
            if (list.size() == 5) break;
        }
    }
    out.table = std::move(table);
    return out;
}

} // namespace cmi

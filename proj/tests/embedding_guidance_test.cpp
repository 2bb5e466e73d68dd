#include <algorithm>
#include <memory>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "cmi/embedding_guidance.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace cmi {
namespace {

using testing::random_image;
using testing::random_table;
using testing::random_words;

const Shape3 kShape{3, 4, 4};

std::shared_ptr<WordEmbeddingTable> animal_table() {
    auto t = std::make_shared<WordEmbeddingTable>(2);
    t->add("cat", std::vector<double>{1.0, 0.0});
    t->add("feline", std::vector<double>{0.9, 0.1});
    t->add("rock", std::vector<double>{0.0, 1.0});
    return t;
}

// Oracle loss: -cos(normalize(W_txt mean(vecs)), image_emb), with unknown
// words contributing zero to the mean.
double oracle_loss(const ToyAlignedBackend& be, const std::vector<std::string>& words, const EmbeddingVector& img) {
    const auto& t = be.table();
    std::vector<double> mean(t.dim(), 0.0);
    for (const auto& w : words) {
        if (const auto row = t.find(w)) {
            const auto v = t.vector(*row);
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += v[k];
        }
    }
    for (auto& v : mean) v /= static_cast<double>(words.size());
    return -oracle::naive_cos(oracle::dense_encode(be.weights().text, mean), img);
}

TEST(Substitutes, NearestNeighbourAboveThreshold) {
    const auto table = animal_table();
    const UnigramFiller filler({"x"}, {1.0});
    const auto set = build_substitutes(*table, filler, Caption({"cat"}), 0, 0.5, 10);
    ASSERT_TRUE(set.has_value());
    EXPECT_EQ(set->candidates, std::vector<std::string>{"feline"});
    EXPECT_EQ(set->source, CandidateSource::embedding_table);
}

TEST(Substitutes, NothingAboveStrictThreshold) {
    const auto table = animal_table();
    const UnigramFiller filler({"x"}, {1.0});
    EXPECT_FALSE(build_substitutes(*table, filler, Caption({"cat"}), 0, 0.999, 10).has_value());
}

TEST(Substitutes, OutOfTableWordUsesFiller) {
    const auto table = animal_table();
    const UnigramFiller filler({"dog", "bird", "zebra"}, {0.1, 0.9, 0.5});
    const Caption cap({"cat", "unicorn"});
    const auto set = build_substitutes(*table, filler, cap, 1, 0.5, 2);
    ASSERT_TRUE(set.has_value());
    EXPECT_EQ(set->source, CandidateSource::filler_model);
    EXPECT_EQ(set->candidates, (std::vector<std::string>{"bird", "zebra"}));
}

TEST(Substitutes, SortedByDescendingSimilarityAndCappedAtK) {
    const auto table = random_table(3, 60, 4);
    const UnigramFiller filler({"x"}, {1.0});
    const Caption cap({"t0"});
    const auto set = build_substitutes(*table, filler, cap, 0, 0.0, 5);
    ASSERT_TRUE(set.has_value());
    EXPECT_LE(set->candidates.size(), 5u);
    const auto target = table->vector(*table->find("t0"));
    double prev = 2.0;
    for (const auto& tok : set->candidates) {
        EXPECT_NE(tok, "t0");
        const double s = cosine_similarity(table->vector(*table->find(tok)), target);
        EXPECT_GT(s, 0.0);
        EXPECT_LE(s, prev);
        prev = s;
    }
}

TEST(Substitutes, RejectsBadArguments) {
    const auto table = animal_table();
    const UnigramFiller filler({"x"}, {1.0});
    EXPECT_THROW(build_substitutes(*table, filler, Caption({"cat"}), 1, 0.5, 10), InvalidInputError);
    EXPECT_THROW(build_substitutes(*table, filler, Caption({"cat"}), 0, 1.0, 10), InvalidInputError);
    EXPECT_THROW(build_substitutes(*table, filler, Caption({"cat"}), 0, 0.5, 0), InvalidInputError);
}

TEST(Fillers, UnigramSkipsOriginalToken) {
    const UnigramFiller filler({"a", "b", "c"}, {3.0, 2.0, 1.0});
    EXPECT_EQ(filler.predict(Caption({"a"}), 0, 2), (std::vector<std::string>{"b", "c"}));
    EXPECT_THROW(filler.predict(Caption({"a"}), 3, 2), InvalidInputError);
}

TEST(Fillers, SeededUnigramIsDeterministic) {
    std::vector<std::string> vocab;
    for (int i = 0; i < 20; ++i) vocab.push_back("v" + std::to_string(i));
    const auto a = UnigramFiller::seeded(vocab, 11);
    const auto b = UnigramFiller::seeded(vocab, 11);
    EXPECT_EQ(a.predict(Caption({"v1"}), 0, 10), b.predict(Caption({"v1"}), 0, 10));
}

TEST(Fillers, SynonymListLookupIsCaseInsensitive) {
    const SynonymFiller filler({{"Cat", {"feline", "Kitty", "cat"}}});
    EXPECT_EQ(filler.predict(Caption({"CAT"}), 0, 5), (std::vector<std::string>{"feline", "kitty"}));
    EXPECT_TRUE(filler.predict(Caption({"dog"}), 0, 5).empty());
}

TEST(RankWords, SingleWordCaption) {
    const ToyAlignedBackend be(1, kShape, 4, random_table(2, 10, 3));
    std::mt19937_64 rng(3);
    EXPECT_EQ(rank_words(be, Caption({"t1"}), be.encode_image(random_image(rng, kShape))),
              std::vector<std::size_t>{0});
}

TEST(RankWords, MatchesDropOneOracle) {
    const ToyAlignedBackend be(1, kShape, 6, random_table(2, 25, 4));
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto img = be.encode_image(random_image(rng, kShape));
        const Caption cap(random_words(rng, be.table(), 4));
        const double base = oracle_loss(be, cap.words(), img);
        std::vector<double> delta;
        for (std::size_t p = 0; p < cap.size(); ++p) delta.push_back(oracle_loss(be, cap.words_without(p), img) - base);
        const auto order = rank_words(be, cap, img);
        ASSERT_EQ(order.size(), cap.size());
        for (std::size_t i = 1; i < order.size(); ++i) {
            EXPECT_GE(delta[order[i - 1]] + 1e-12, delta[order[i]]);
        }
    }
}

TEST(SelectSubstitute, MatchesBruteForce) {
    const ToyAlignedBackend be(5, kShape, 6, random_table(6, 40, 5));
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto img = be.encode_image(random_image(rng, kShape));
        const Caption cap(random_words(rng, be.table(), 1 + trial % 5));
        const std::size_t pos = trial % cap.size();
        SubstituteCandidateSet set{pos, random_words(rng, be.table(), 6), CandidateSource::embedding_table};
        std::string best;
        double best_loss = -1e300;
        for (const auto& tok : set.candidates) {
            auto words = cap.words();
            words[pos] = tok;
            const double l = oracle_loss(be, words, img);
            if (best.empty() || l > best_loss + 1e-12) {
                best = tok;
                best_loss = l;
            }
        }
        const auto choice = select_substitute(be, cap, pos, set, img);
        EXPECT_NEAR(choice.loss, best_loss, 1e-9);
        EXPECT_EQ(choice.token, best);
    }
}

TEST(SelectSubstitute, TiesGoToEarlierCandidate) {
    auto table = std::make_shared<WordEmbeddingTable>(2);
    table->add("a", std::vector<double>{1.0, 0.5});
    table->add("b", std::vector<double>{1.0, 0.5});
    table->add("c", std::vector<double>{0.2, 1.0});
    const ToyAlignedBackend be(2, kShape, 3, table);
    std::mt19937_64 rng(8);
    const auto img = be.encode_image(random_image(rng, kShape));
    const Caption cap({"c", "c"});
    EXPECT_EQ(select_substitute(be, cap, 0, {0, {"b", "a"}, CandidateSource::embedding_table}, img).token, "b");
    EXPECT_EQ(select_substitute(be, cap, 0, {0, {"a", "b"}, CandidateSource::embedding_table}, img).token, "a");
    EXPECT_THROW(select_substitute(be, cap, 0, {0, {}, CandidateSource::embedding_table}, img), InvalidInputError);
}

TEST(AttackCaption, ZeroBudgetReturnsInput) {
    const ToyAlignedBackend be(1, kShape, 6, random_table(9, 30, 4));
    const auto filler = UnigramFiller::seeded(be.table().tokens(), 1);
    std::mt19937_64 rng(9);
    const Caption cap(random_words(rng, be.table(), 4));
    const auto out = attack_caption(be, be.table(), filler, cap, be.encode_image(random_image(rng, kShape)), 0, 0.0, 10);
    EXPECT_EQ(out.words(), cap.words());
    EXPECT_EQ(out.words_changed(), 0u);
}

TEST(AttackCaption, RespectsBudgetAndNeverLowersLoss) {
    const ToyAlignedBackend be(1, kShape, 6, random_table(10, 40, 4));
    const auto filler = UnigramFiller::seeded(be.table().tokens(), 2);
    std::mt19937_64 rng(10);
    std::size_t any_change = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto img = be.encode_image(random_image(rng, kShape));
        const Caption cap(random_words(rng, be.table(), 2 + trial % 4));
        const std::size_t eps_t = 1 + trial % 3;
        const auto out = attack_caption(be, be.table(), filler, cap, img, eps_t, 0.3, 10);
        std::size_t diff = 0;
        for (std::size_t i = 0; i < cap.size(); ++i) diff += out.words()[i] != cap.words()[i];
        EXPECT_LE(diff, eps_t);
        EXPECT_EQ(diff, out.words_changed());
        EXPECT_GE(pair_loss(be.encode_text(out), img), pair_loss(be.encode_text(cap), img) - 1e-12);
        any_change += diff > 0;
    }
    EXPECT_GT(any_change, 0u);
}

TEST(AttackCaption, ExhaustedBudgetIsNotExtended) {
    const ToyAlignedBackend be(1, kShape, 6, random_table(11, 40, 4));
    const auto filler = UnigramFiller::seeded(be.table().tokens(), 3);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const auto img = be.encode_image(random_image(rng, kShape));
        const Caption cap(random_words(rng, be.table(), 4));
        const auto once = attack_caption(be, be.table(), filler, cap, img, 1, 0.0, 10);
        const auto twice = attack_caption(be, be.table(), filler, once, img, 1, 0.0, 10);
        EXPECT_LE(twice.words_changed(), 1u);
        if (once.words_changed() == 1) {
            EXPECT_EQ(twice.words(), once.words());
        }
    }
}

} // namespace
} // namespace cmi

#include <algorithm>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "cmi/eval_retrieval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace cmi {
namespace {

using testing::ToyRig;

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n;
    std::vector<double> v(d);
    for (auto& x : v) x = n(rng);
    const double s = l2_norm(v);
    for (auto& x : v) x /= s;
    return v;
}

RetrievalRanks ranks(const std::string& id, std::size_t tr, std::size_t ir) { return {id, tr, ir}; }

TEST(RankGallery, MatchesBruteForce) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial * 49 / 19;
        std::vector<EmbeddingVector> gallery;
        for (std::size_t i = 0; i < n; ++i) gallery.push_back(random_unit(rng, 8));
        const auto q = random_unit(rng, 8);
        EXPECT_EQ(rank_gallery(q, gallery), oracle::brute_force_rank(q, gallery));
    }
}

TEST(RankGallery, TiesKeepGalleryOrder) {
    const std::vector<EmbeddingVector> gallery{{0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}};
    EXPECT_EQ(rank_gallery({1.0, 0.0}, gallery), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(RetrievalRanks, HandBuiltGallery) {
    CorpusEmbeddings emb;
    emb.images = {{1.0, 0.0}, {0.0, 1.0}};
    // pair 0 owns captions 0 and 1; pair 1 owns caption 2
    emb.captions = {{0.0, 1.0}, {0.9, 0.1}, {0.6, 0.8}};
    emb.caption_owner = {0, 0, 1};
    const std::vector<std::string> ids{"p0", "p1"};
    const auto r = retrieval_ranks(emb, ids);
    ASSERT_EQ(r.size(), 2u);
    // image 0 ranks captions 1, 2, 0: own caption 1 at rank 1
    EXPECT_EQ(r[0].tr_rank, 1u);
    // image 1 ranks captions 0, 2, 1: own caption 2 at rank 2
    EXPECT_EQ(r[1].tr_rank, 2u);
    // caption 0 retrieves image 1 first, caption 1 retrieves image 0 first
    EXPECT_EQ(r[0].ir_rank, 1u);
    EXPECT_EQ(r[1].ir_rank, 1u);
}

TEST(Recall, CountsMisses) {
    const std::vector<RetrievalRanks> r{ranks("a", 1, 3), ranks("b", 2, 1), ranks("c", 5, 1)};
    EXPECT_DOUBLE_EQ(recall_at_k(r, 1, Direction::TR), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(recall_at_k(r, 5, Direction::TR), 0.0);
    EXPECT_DOUBLE_EQ(recall_at_k(r, 1, Direction::IR), 1.0 / 3.0);
    EXPECT_THROW(recall_at_k(std::vector<RetrievalRanks>{}, 1, Direction::TR), UndefinedMetricError);
    EXPECT_THROW(recall_at_k(r, 0, Direction::TR), InvalidInputError);
}

TEST(Recall, NonIncreasingInK) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> rank(1, 30);
    std::vector<RetrievalRanks> r;
    for (int i = 0; i < 50; ++i) r.push_back(ranks("p" + std::to_string(i), rank(rng), rank(rng)));
    for (auto d : {Direction::TR, Direction::IR}) {
        double prev = 1.0;
        for (std::size_t k = 1; k <= 30; ++k) {
            const double m = recall_at_k(r, k, d);
            EXPECT_LE(m, prev);
            prev = m;
        }
        EXPECT_EQ(prev, 0.0);
    }
}

// Ten pairs, eight retrieved correctly before the attack, three of those
// pushed out of the top 1 by it.
std::pair<std::vector<RetrievalRanks>, std::vector<RetrievalRanks>> asr_scenario() {
    std::vector<RetrievalRanks> clean, adv;
    for (int i = 0; i < 10; ++i) {
        const std::string id = "p" + std::to_string(i);
        const bool was_correct = i < 8;
        const bool broken = i < 3;
        clean.push_back(ranks(id, was_correct ? 1 : 4, 1));
        adv.push_back(ranks(id, !was_correct ? 6 : (broken ? 2 : 1), 1));
    }
    return {clean, adv};
}

TEST(AttackSuccessRate, PrefilteredScenario) {
    const auto [clean, adv] = asr_scenario();
    EXPECT_DOUBLE_EQ(attack_success_rate(clean, adv, Direction::TR, 1), 0.375);
    EXPECT_DOUBLE_EQ(attack_success_rate(clean, adv, Direction::TR, 1, AsrBase::all), 0.5);
    EXPECT_DOUBLE_EQ(attack_success_rate(clean, adv, Direction::IR, 1), 0.0);
}

TEST(AttackSuccessRate, InvariantToRecordOrder) {
    auto [clean, adv] = asr_scenario();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(clean.begin(), clean.end(), rng);
        std::shuffle(adv.begin(), adv.end(), rng);
        EXPECT_DOUBLE_EQ(attack_success_rate(clean, adv, Direction::TR, 1), 0.375);
    }
}

TEST(AttackSuccessRate, ErrorCases) {
    const auto [clean, adv] = asr_scenario();
    std::vector<RetrievalRanks> short_adv(adv.begin(), adv.end() - 1);
    EXPECT_THROW(attack_success_rate(clean, short_adv, Direction::TR, 1), PairingError);
    const std::vector<RetrievalRanks> none_correct{ranks("x", 3, 3)};
    EXPECT_THROW(attack_success_rate(none_correct, none_correct, Direction::TR, 1), UndefinedMetricError);
    EXPECT_THROW(attack_success_rate(clean, adv, Direction::TR, 0), InvalidInputError);
}

TEST(EvalRecords, JoinById) {
    const auto [clean, adv] = asr_scenario();
    std::vector<RetrievalRanks> reversed(adv.rbegin(), adv.rend());
    const auto rec = make_eval_records(clean, reversed);
    ASSERT_EQ(rec.size(), 10u);
    EXPECT_EQ(rec[0].pair_id, "p0");
    EXPECT_EQ(rec[0].tr_rank_adv, 2u);
    EXPECT_EQ(rec[9].tr_rank_clean, 4u);
}

ToyCorpusSpec small_spec() {
    ToyCorpusSpec spec;
    spec.seed = 3;
    spec.n_pairs = 12;
    spec.image_shape = {3, 8, 8};
    spec.vocab_size = 60;
    spec.n_clusters = 4;
    return spec;
}

TEST(CorpusAttack, WorkerCountDoesNotChangeResults) {
    const ToyRig rig(small_spec());
    const AttackConfig cfg;
    const auto one = attack_corpus(rig.resources(), rig.corpus, cfg, 1);
    const auto four = attack_corpus(rig.resources(), rig.corpus, cfg, 4);
    ASSERT_EQ(one.adv_images.size(), four.adv_images.size());
    for (std::size_t i = 0; i < one.adv_images.size(); ++i) {
        EXPECT_EQ(one.adv_images[i].tensor(), four.adv_images[i].tensor());
        for (std::size_t j = 0; j < one.adv_captions[i].size(); ++j)
            EXPECT_EQ(one.adv_captions[i][j].words(), four.adv_captions[i][j].words());
    }
    EXPECT_EQ(one.failures, 0u);
}

TEST(CorpusAttack, FailedPairKeepsCleanInputs) {
    ToyRig rig(small_spec());
    rig.corpus.items[2].image = ImageTensor(Tensor3(Shape3{3, 4, 4}, 0.5));
    const auto out = attack_corpus(rig.resources(), rig.corpus, AttackConfig{});
    EXPECT_EQ(out.failures, 1u);
    ASSERT_TRUE(std::holds_alternative<AttackFailure>(out.outcomes[2]));
    EXPECT_EQ(out.adv_images[2].tensor(), rig.corpus.items[2].image.tensor());
}

TEST(Evaluate, CleanInputsHaveZeroAsr) {
    const ToyRig rig(small_spec());
    std::vector<ImageTensor> images;
    std::vector<CaptionSet> caps;
    for (const auto& it : rig.corpus.items) {
        images.push_back(it.image);
        caps.push_back(it.captions);
    }
    const auto ev = evaluate_corpus(rig.backend, rig.corpus, images, caps);
    ASSERT_TRUE(ev.metrics.tr_r1_asr.has_value());
    EXPECT_EQ(*ev.metrics.tr_r1_asr, 0.0);
    EXPECT_EQ(*ev.metrics.ir_r1_asr, 0.0);
    EXPECT_EQ(ev.metrics.tr_r1_clean, ev.metrics.tr_r1_adv);
}

TEST(Ablation, ReportShape) {
    const ToyRig rig(small_spec());
    AttackConfig cfg;
    cfg.steps_image = 3;
    const auto report = run_ablation(rig.resources(), rig.corpus, cfg);
    ASSERT_EQ(report.cells.size(), 4u);
    EXPECT_TRUE(report.cells[0].eg && report.cells[0].ie);
    EXPECT_TRUE(!report.cells[3].eg && !report.cells[3].ie);
    ASSERT_EQ(report.text_strategy.size(), 4u);
    EXPECT_EQ(report.text_strategy[0].label, "MLM");
    EXPECT_EQ(report.text_strategy[3].label, "Ours");
    ASSERT_EQ(report.steps_interact.size(), 3u);
    EXPECT_EQ(report.steps_interact[2].steps_interact, 5u);
    EXPECT_EQ(report.config_digest, config_digest(cfg));

    std::size_t failures = 0;
    const auto baseline = evaluate_config(rig.resources(), rig.corpus, reduction_config(cfg), {}, failures);
    EXPECT_EQ(report.cells[3].metrics.tr_r1_asr, baseline.tr_r1_asr);
    EXPECT_EQ(report.cells[3].metrics.ir_r1_asr, baseline.ir_r1_asr);
}

TEST(Ablation, NeedsSynonyms) {
    const ToyRig rig(small_spec());
    const AttackResources res{rig.backend, *rig.toy.table, rig.filler, nullptr};
    EXPECT_THROW(run_ablation(res, rig.corpus, AttackConfig{}), ConfigError);
}

} // namespace
} // namespace cmi

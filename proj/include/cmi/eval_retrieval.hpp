#pragma once

// Retrieval evaluation (TR: image -> captions, IR: caption -> images), miss
// rates at k, attack success rates, and the EG/IE, text-strategy and N
// ablation runs.

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cmi/attack_math.hpp"
#include "cmi/backend.hpp"
#include "cmi/cmi_engine.hpp"
#include "cmi/config.hpp"
#include "cmi/errors.hpp"
#include "cmi/parallel.hpp"
#include "cmi/text.hpp"

namespace cmi {

struct CorpusItem {
    std::string pair_id;
    ImageTensor image;
    CaptionSet captions;
};

struct RetrievalCorpus {
    std::vector<CorpusItem> items;

    void validate() const {
        if (items.empty()) throw DataError("retrieval corpus is empty");
        std::set<std::string> ids;
        for (const auto& it : items) {
            if (!ids.insert(it.pair_id).second) throw DataError("duplicate pair_id '" + it.pair_id + "'");
            if (it.captions.empty()) throw DataError("pair '" + it.pair_id + "' has no captions");
        }
    }
};

enum class Direction { TR, IR };

enum class AsrBase {
    prefiltered, // pairs retrieved within top-k before the attack
    all,
};

inline const char* to_string(AsrBase b) { return b == AsrBase::prefiltered ? "prefiltered" : "all"; }

inline AsrBase asr_base_from_string(const std::string& s) {
    if (s == "prefiltered") return AsrBase::prefiltered;
    if (s == "all") return AsrBase::all;
    throw ConfigError("asr_base: unknown value '" + s + "'");
}

// Gallery indices by cosine similarity to the query, descending; ties keep
// the lower index first.
inline std::vector<std::size_t> rank_gallery(const EmbeddingVector& query, std::span<const EmbeddingVector> gallery) {
    if (gallery.empty()) throw InvalidInputError("cannot rank an empty gallery");
    std::vector<double> sims(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) sims[i] = cosine_similarity(query, gallery[i]);
    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    return order;
}

struct CorpusEmbeddings {
    std::vector<EmbeddingVector> images;       // one per pair
    std::vector<EmbeddingVector> captions;     // flattened over pairs
    std::vector<std::size_t> caption_owner;    // pair index of each caption
};

inline CorpusEmbeddings embed_corpus(const ModelBackend& backend, std::span<const ImageTensor> images,
                                     std::span<const CaptionSet> captions) {
    if (images.size() != captions.size()) throw PairingError("image and caption-set counts differ");
    CorpusEmbeddings out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        out.images.push_back(backend.encode_image(fit_to_backend(backend, images[i])));
        for (const auto& c : captions[i]) {
            out.captions.push_back(backend.encode_text(c));
            out.caption_owner.push_back(i);
        }
    }
    return out;
}

struct RetrievalRanks {
    std::string pair_id;
    std::size_t tr_rank = 0; // best 1-based rank of any own caption for the image query
    std::size_t ir_rank = 0; // best 1-based rank of the own image over the pair's caption queries
};

inline std::vector<RetrievalRanks> retrieval_ranks(const CorpusEmbeddings& emb, std::span<const std::string> pair_ids) {
    if (pair_ids.size() != emb.images.size()) throw PairingError("pair id count differs from image count");
    std::vector<RetrievalRanks> out(emb.images.size());
    for (std::size_t i = 0; i < emb.images.size(); ++i) {
        out[i].pair_id = pair_ids[i];
        const auto order = rank_gallery(emb.images[i], emb.captions);
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (emb.caption_owner[order[r]] == i) {
                out[i].tr_rank = r + 1;
                break;
            }
        }
    }
    for (std::size_t c = 0; c < emb.captions.size(); ++c) {
        const std::size_t owner = emb.caption_owner[c];
        const auto order = rank_gallery(emb.captions[c], emb.images);
        const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), owner) - order.begin()) + 1;
        if (out[owner].ir_rank == 0 || pos < out[owner].ir_rank) out[owner].ir_rank = pos;
    }
    for (const auto& r : out) {
        if (r.tr_rank == 0 || r.ir_rank == 0) throw DataError("pair '" + r.pair_id + "' has no captions");
    }
    return out;
}

inline std::size_t rank_of(const RetrievalRanks& r, Direction d) { return d == Direction::TR ? r.tr_rank : r.ir_rank; }

// Fraction of queries whose correct match is absent from the top k (the
// reports label this R@k).
inline double recall_at_k(std::span<const RetrievalRanks> records, std::size_t k, Direction direction) {
    if (k < 1) throw InvalidInputError("k must be at least 1");
    if (records.empty()) throw UndefinedMetricError("R@k over an empty record set");
    std::size_t misses = 0;
    for (const auto& r : records)
        if (rank_of(r, direction) > k) ++misses;
    return static_cast<double>(misses) / static_cast<double>(records.size());
}

inline double attack_success_rate(std::span<const RetrievalRanks> clean, std::span<const RetrievalRanks> adv,
                                  Direction direction, std::size_t k, AsrBase base = AsrBase::prefiltered) {
    if (k < 1) throw InvalidInputError("k must be at least 1");
    std::map<std::string, std::size_t> adv_rank;
    for (const auto& r : adv) adv_rank[r.pair_id] = rank_of(r, direction);
    std::size_t eligible = 0;
    std::size_t broken = 0;
    for (const auto& r : clean) {
        const auto it = adv_rank.find(r.pair_id);
        if (it == adv_rank.end()) throw PairingError("pair '" + r.pair_id + "' missing from adversarial records");
        if (base == AsrBase::prefiltered && rank_of(r, direction) > k) continue;
        ++eligible;
        if (it->second > k) ++broken;
    }
    if (eligible == 0) throw UndefinedMetricError("no eligible pairs for the attack success rate");
    return static_cast<double>(broken) / static_cast<double>(eligible);
}

struct EvalRecord {
    std::string pair_id;
    std::size_t tr_rank_clean = 0;
    std::size_t tr_rank_adv = 0;
    std::size_t ir_rank_clean = 0;
    std::size_t ir_rank_adv = 0;
    bool succeeded_tr_r1 = false;
    bool succeeded_ir_r1 = false;
};

inline std::vector<EvalRecord> make_eval_records(std::span<const RetrievalRanks> clean,
                                                 std::span<const RetrievalRanks> adv) {
    std::map<std::string, const RetrievalRanks*> by_id;
    for (const auto& r : adv) by_id[r.pair_id] = &r;
    std::vector<EvalRecord> out;
    for (const auto& c : clean) {
        const auto it = by_id.find(c.pair_id);
        if (it == by_id.end()) throw PairingError("pair '" + c.pair_id + "' missing from adversarial records");
        const auto& a = *it->second;
        out.push_back(EvalRecord{c.pair_id, c.tr_rank, a.tr_rank, c.ir_rank, a.ir_rank,
                                 c.tr_rank == 1 && a.tr_rank > 1, c.ir_rank == 1 && a.ir_rank > 1});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attacking a corpus

struct CorpusAttack {
    std::vector<ImageTensor> adv_images;
    std::vector<CaptionSet> adv_captions;
    std::vector<std::variant<AttackResult, AttackFailure>> outcomes;
    std::size_t failures = 0;
};

// Failed pairs keep their clean image and captions.
inline CorpusAttack attack_corpus(const AttackResources& res, const RetrievalCorpus& corpus, const AttackConfig& cfg,
                                  std::size_t workers = 1) {
    CorpusAttack out;
    const std::size_t n = corpus.items.size();
    out.outcomes.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        out.outcomes[i] = attempt_cmi_attack(res, corpus.items[i].image, corpus.items[i].captions, cfg);
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (const auto* r = std::get_if<AttackResult>(&out.outcomes[i])) {
            out.adv_images.push_back(r->adv_image);
            out.adv_captions.push_back(r->adv_captions);
        } else {
            out.adv_images.push_back(corpus.items[i].image);
            out.adv_captions.push_back(corpus.items[i].captions);
            ++out.failures;
        }
    }
    return out;
}

struct RetrievalMetrics {
    std::optional<double> tr_r1_asr;
    std::optional<double> ir_r1_asr;
    std::optional<double> combined_avg;
    double tr_r1_clean = 0.0; // miss rate at 1
    double ir_r1_clean = 0.0;
    double tr_r1_adv = 0.0;
    double ir_r1_adv = 0.0;
};

struct CorpusEvaluation {
    std::vector<RetrievalRanks> clean;
    std::vector<RetrievalRanks> adv;
    RetrievalMetrics metrics;
};

inline std::optional<double> optional_asr(std::span<const RetrievalRanks> clean, std::span<const RetrievalRanks> adv,
                                          Direction d, AsrBase base) {
    try {
        return attack_success_rate(clean, adv, d, 1, base);
    } catch (const UndefinedMetricError&) {
        return std::nullopt;
    }
}

inline CorpusEvaluation evaluate_corpus(const ModelBackend& backend, const RetrievalCorpus& corpus,
                                        std::span<const ImageTensor> adv_images,
                                        std::span<const CaptionSet> adv_captions, AsrBase base = AsrBase::prefiltered) {
    corpus.validate();
    std::vector<std::string> ids;
    std::vector<ImageTensor> images;
    std::vector<CaptionSet> captions;
    for (const auto& it : corpus.items) {
        ids.push_back(it.pair_id);
        images.push_back(it.image);
        captions.push_back(it.captions);
    }
    CorpusEvaluation out;
    out.clean = retrieval_ranks(embed_corpus(backend, images, captions), ids);
    out.adv = retrieval_ranks(embed_corpus(backend, adv_images, adv_captions), ids);
    auto& m = out.metrics;
    m.tr_r1_asr = optional_asr(out.clean, out.adv, Direction::TR, base);
    m.ir_r1_asr = optional_asr(out.clean, out.adv, Direction::IR, base);
    if (m.tr_r1_asr && m.ir_r1_asr) m.combined_avg = (*m.tr_r1_asr + *m.ir_r1_asr) / 2.0;
    m.tr_r1_clean = recall_at_k(out.clean, 1, Direction::TR);
    m.ir_r1_clean = recall_at_k(out.clean, 1, Direction::IR);
    m.tr_r1_adv = recall_at_k(out.adv, 1, Direction::TR);
    m.ir_r1_adv = recall_at_k(out.adv, 1, Direction::IR);
    return out;
}

// ---------------------------------------------------------------------------
// Ablation

// Plain iterative sign attack: no text attack, no interaction momentum, no
// momentum, single scale.
inline AttackConfig reduction_config(AttackConfig base) {
    base.eg_enabled = false;
    base.ie_enabled = false;
    base.steps_interact = 0;
    base.lambda_ = 0.0;
    base.scales = {1.0};
    return base;
}

struct AblationCell {
    bool eg = false;
    bool ie = false;
    RetrievalMetrics metrics;
    std::size_t failures = 0;
};

struct StrategyRow {
    std::string label; // row name as in the text-strategy comparison
    TextStrategy strategy = TextStrategy::embedding_guidance;
    RetrievalMetrics metrics;
    std::size_t failures = 0;
};

struct StepsRow {
    std::size_t steps_interact = 0;
    RetrievalMetrics metrics;
    std::size_t failures = 0;
};

struct AblationReport {
    std::string config_digest;
    AsrBase asr_base = AsrBase::prefiltered;
    std::vector<AblationCell> cells;
    std::vector<StrategyRow> text_strategy;
    std::vector<StepsRow> steps_interact;
    std::string timestamp; // filled by the caller; excluded from determinism checks
};

struct AblationOptions {
    std::vector<std::size_t> n_sweep{1, 3, 5};
    AsrBase asr_base = AsrBase::prefiltered;
    std::size_t workers = 1;
};

inline RetrievalMetrics evaluate_config(const AttackResources& res, const RetrievalCorpus& corpus,
                                        const AttackConfig& cfg, const AblationOptions& opt, std::size_t& failures) {
    const auto attacked = attack_corpus(res, corpus, cfg, opt.workers);
    failures = attacked.failures;
    return evaluate_corpus(res.backend, corpus, attacked.adv_images, attacked.adv_captions, opt.asr_base).metrics;
}

// EG x IE grid (the all-off cell is the reduction configuration), the four
// text strategies, and the interaction-step sweep.
inline AblationReport run_ablation(const AttackResources& res, const RetrievalCorpus& corpus,
                                   const AttackConfig& base_cfg, const AblationOptions& opt = {}) {
    corpus.validate();
    validate(base_cfg);
    if (res.synonyms == nullptr) throw ConfigError("ablation: the text-strategy sweep needs a synonym file");

    AblationReport report;
    report.config_digest = config_digest(base_cfg);
    report.asr_base = opt.asr_base;

    for (bool eg : {true, false}) {
        for (bool ie : {true, false}) {
            AttackConfig cfg = base_cfg;
            cfg.eg_enabled = eg;
            cfg.ie_enabled = ie;
            if (!eg && !ie) cfg = reduction_config(base_cfg);
            AblationCell cell{eg, ie, {}, 0};
            cell.metrics = evaluate_config(res, corpus, cfg, opt, cell.failures);
            report.cells.push_back(cell);
        }
    }

    const std::pair<const char*, TextStrategy> rows[] = {{"MLM", TextStrategy::filler_only},
                                                         {"Wordnet", TextStrategy::synonym_file},
                                                         {"Glove", TextStrategy::embedding_only},
                                                         {"Ours", TextStrategy::embedding_guidance}};
    for (const auto& [label, strategy] : rows) {
        AttackConfig cfg = base_cfg;
        cfg.eg_enabled = true;
        cfg.text_strategy = strategy;
        StrategyRow row{label, strategy, {}, 0};
        row.metrics = evaluate_config(res, corpus, cfg, opt, row.failures);
        report.text_strategy.push_back(row);
    }

    for (std::size_t n : opt.n_sweep) {
        AttackConfig cfg = base_cfg;
        cfg.steps_interact = n;
        StepsRow row{n, {}, 0};
        row.metrics = evaluate_config(res, corpus, cfg, opt, row.failures);
        report.steps_interact.push_back(row);
    }
    return report;
}

} // namespace cmi

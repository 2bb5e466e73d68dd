#pragma once

// Persisted run records. Everything goes through canonical_dump, so two runs
// with equal inputs produce byte-identical files apart from `timestamp`.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cmi/backend.hpp"
#include "cmi/canonical_json.hpp"
#include "cmi/cmi_engine.hpp"
#include "cmi/config.hpp"
#include "cmi/eval_retrieval.hpp"
#include "cmi/io.hpp"

namespace cmi {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json to_json(const BackendDescriptor& d) {
    return json{{"name", d.name},
                {"image_shape", shape_to_json(d.image_shape)},
                {"embedding_dim", d.embedding_dim},
                {"vocabulary_size", d.vocabulary.size()},
                {"deterministic", d.deterministic},
                {"seed", d.seed}};
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const RetrievalMetrics& m) {
    return json{{"tr_r1_asr", optional_number(m.tr_r1_asr)},
                {"ir_r1_asr", optional_number(m.ir_r1_asr)},
                {"combined_avg", optional_number(m.combined_avg)},
                {"tr_r1_clean", m.tr_r1_clean},
                {"ir_r1_clean", m.ir_r1_clean},
                {"tr_r1_adv", m.tr_r1_adv},
                {"ir_r1_adv", m.ir_r1_adv}};
}

inline json image_to_json(const ImageTensor& img) {
    return json{{"shape", shape_to_json(img.shape())}, {"pixels", img.tensor().data()}};
}

inline ImageTensor image_from_json(const json& j) {
    const Shape3 shape = shape_from_json(j.at("shape"));
    return ImageTensor(shape, j.at("pixels").get<std::vector<double>>());
}

// Per-pair summary; the full tensors of the trace stay in memory only.
inline json to_json(const std::string& pair_id, const std::variant<AttackResult, AttackFailure>& outcome) {
    if (const auto* f = std::get_if<AttackFailure>(&outcome)) {
        return json{{"pair_id", pair_id}, {"status", "failed"}, {"error", {{"kind", f->kind}, {"message", f->message}}}};
    }
    const auto& r = std::get<AttackResult>(outcome);
    json captions = json::array();
    for (const auto& c : r.adv_captions) captions.push_back(c.text());
    json trace = json::array();
    for (const auto& t : r.trace) {
        trace.push_back(json{{"phase", to_string(t.phase)},
                             {"iteration", t.iteration},
                             {"loss", t.loss},
                             {"grad_l1", t.grad_l1},
                             {"momentum_l1", t.momentum_l1}});
    }
    return json{{"pair_id", pair_id},
                {"status", "ok"},
                {"clean_sim", r.clean_sim},
                {"adv_sim", r.adv_sim},
                {"linf", r.linf},
                {"words_changed", r.words_changed},
                {"initial_set_loss", r.initial_set_loss},
                {"final_set_loss", r.final_set_loss},
                {"adv_captions", captions},
                {"adv_image", image_to_json(r.adv_image)},
                {"trace", trace}};
}

struct RunArtifact {
    json config_snapshot;
    json backend;
    json inputs; // digests of the manifest / embedding files
    json pairs = json::array();
    json aggregate = json::object();
    std::string tool_version = kToolVersion;
    std::uint64_t seed = 0;
    std::string timestamp;
};

inline json to_json(const RunArtifact& a) {
    return json{{"config_snapshot", a.config_snapshot},
                {"backend", a.backend},
                {"inputs", a.inputs},
                {"pairs", a.pairs},
                {"aggregate", a.aggregate},
                {"tool_version", a.tool_version},
                {"seed", a.seed},
                {"timestamp", a.timestamp}};
}

inline RunArtifact run_artifact_from_json(const json& j) {
    try {
        RunArtifact a;
        a.config_snapshot = j.at("config_snapshot");
        a.backend = j.at("backend");
        a.inputs = j.at("inputs");
        a.pairs = j.at("pairs");
        a.aggregate = j.at("aggregate");
        a.tool_version = j.at("tool_version").get<std::string>();
        a.seed = j.at("seed").get<std::uint64_t>();
        a.timestamp = j.at("timestamp").get<std::string>();
        return a;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed run artifact: ") + e.what());
    }
}

inline json aggregate_results(std::span<const std::variant<AttackResult, AttackFailure>> outcomes) {
    std::size_t ok = 0;
    std::size_t below = 0;
    double clean = 0.0;
    double adv = 0.0;
    double max_linf = 0.0;
    std::size_t max_words = 0;
    for (const auto& o : outcomes) {
        const auto* r = std::get_if<AttackResult>(&o);
        if (!r) continue;
        ++ok;
        clean += r->clean_sim;
        adv += r->adv_sim;
        if (r->adv_sim < r->clean_sim) ++below;
        max_linf = std::max(max_linf, r->linf);
        for (auto w : r->words_changed) max_words = std::max(max_words, w);
    }
    json agg{{"n_pairs", outcomes.size()},
             {"n_failed", outcomes.size() - ok},
             {"n_adv_sim_below_clean", below},
             {"max_linf", max_linf},
             {"max_words_changed", max_words}};
    agg["mean_clean_sim"] = ok ? json(clean / static_cast<double>(ok)) : json(nullptr);
    agg["mean_adv_sim"] = ok ? json(adv / static_cast<double>(ok)) : json(nullptr);
    return agg;
}

inline std::string serialize_artifact(const RunArtifact& a) { return canonical_dump(to_json(a)) + "\n"; }

// Refuses non-finite numbers before touching the file.
inline void persist_run(const RunArtifact& a, const std::string& out_path) {
    std::string text;
    try {
        text = serialize_artifact(a);
    } catch (const ValidationError& e) {
        throw ValidationError("run artifact for '" + out_path + "' rejected: " + e.what());
    }
    write_file(out_path, text);
}

inline RunArtifact load_run(const std::string& path) {
    try {
        return run_artifact_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw DataError("run artifact '" + path + "' is not valid JSON: " + e.what());
    }
}

inline json to_json(const AblationReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        cells.push_back(json{{"toggles", {{"eg", c.eg}, {"ie", c.ie}}},
                             {"tr_r1_asr", optional_number(c.metrics.tr_r1_asr)},
                             {"ir_r1_asr", optional_number(c.metrics.ir_r1_asr)},
                             {"combined_avg", optional_number(c.metrics.combined_avg)},
                             {"failures", c.failures},
                             {"metrics", to_json(c.metrics)}});
    }
    json strategies = json::array();
    for (const auto& s : r.text_strategy) {
        strategies.push_back(json{{"label", s.label},
                                  {"strategy", to_string(s.strategy)},
                                  {"tr_r1_asr", optional_number(s.metrics.tr_r1_asr)},
                                  {"ir_r1_asr", optional_number(s.metrics.ir_r1_asr)},
                                  {"combined_avg", optional_number(s.metrics.combined_avg)},
                                  {"failures", s.failures}});
    }
    json steps = json::array();
    for (const auto& s : r.steps_interact) {
        steps.push_back(json{{"steps_interact", s.steps_interact},
                             {"tr_r1_asr", optional_number(s.metrics.tr_r1_asr)},
                             {"ir_r1_asr", optional_number(s.metrics.ir_r1_asr)},
                             {"combined_avg", optional_number(s.metrics.combined_avg)},
                             {"failures", s.failures}});
    }
    return json{{"config_digest", r.config_digest},
                {"asr_base", to_string(r.asr_base)},
                {"cells", cells},
                {"sweeps", {{"text_strategy", strategies}, {"steps_interact", steps}}},
                {"timestamp", r.timestamp}};
}

} // namespace cmi

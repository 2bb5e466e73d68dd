#pragma once

// The full collaborative attack: an interaction phase that perturbs captions
// against the image while accumulating normalized image gradients, then an
// image phase whose momentum is seeded from those gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <typeinfo>
#include <variant>
#include <vector>

#include "cmi/attack_math.hpp"
#include "cmi/backend.hpp"
#include "cmi/embedding_guidance.hpp"
#include "cmi/errors.hpp"
#include "cmi/tensor.hpp"
#include "cmi/text.hpp"

namespace cmi {

enum class TextStrategy {
    embedding_guidance, // table neighbours, filler fallback for out-of-table words
    embedding_only,     // table neighbours, no fallback
    filler_only,
    synonym_file,
};

inline const char* to_string(TextStrategy s) {
    switch (s) {
    case TextStrategy::embedding_guidance: return "embedding_guidance";
    case TextStrategy::embedding_only: return "embedding_only";
    case TextStrategy::filler_only: return "filler_only";
    case TextStrategy::synonym_file: return "synonym_file";
    }
    return "?";
}

inline TextStrategy text_strategy_from_string(const std::string& s) {
    if (s == "embedding_guidance") return TextStrategy::embedding_guidance;
    if (s == "embedding_only") return TextStrategy::embedding_only;
    if (s == "filler_only") return TextStrategy::filler_only;
    if (s == "synonym_file") return TextStrategy::synonym_file;
    throw ConfigError("text_strategy: unknown value '" + s + "'");
}

struct AttackConfig {
    double eps_image = 2.0 / 255.0;
    double alpha = 0.5 / 255.0;
    std::size_t steps_image = 10;   // M
    std::size_t steps_interact = 1; // N
    double lambda_ = 0.9;
    std::size_t eps_text = 1;
    double tau = 0.5;
    std::size_t k_substitutes = 10;
    std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5};
    std::uint64_t seed = 0;
    bool eg_enabled = true;
    bool ie_enabled = true;
    TextStrategy text_strategy = TextStrategy::embedding_guidance;
    SetLossSpec image_set_loss{SetLossKind::cross_product_mean, 1.0};
    // Start the image phase from the interaction phase's image instead of
    // the clean one.
    bool carry_interaction_image = false;

    friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

inline void validate(const AttackConfig& cfg) {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    if (!(cfg.eps_image >= 0.0) || !std::isfinite(cfg.eps_image)) fail("eps_image", "must be finite and >= 0");
    if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) fail("alpha", "must be finite and > 0");
    if (cfg.steps_image < 1) fail("steps_image", "must be >= 1");
    if (!(cfg.lambda_ >= 0.0) || !std::isfinite(cfg.lambda_)) fail("lambda_", "must be finite and >= 0");
    if (!(cfg.tau >= 0.0 && cfg.tau < 1.0)) fail("tau", "must lie in [0,1)");
    if (cfg.k_substitutes < 1) fail("k_substitutes", "must be >= 1");
    if (cfg.scales.empty()) fail("scales", "must be non-empty");
    for (double s : cfg.scales)
        if (!(s > 0.0) || !std::isfinite(s)) fail("scales", "every scale must be finite and > 0");
    if (!std::isfinite(cfg.image_set_loss.weight)) fail("image_set_loss", "weight must be finite");
}

// What the text attack actually uses. Turning EG off replaces the embedding
// strategies with the filler model.
inline TextStrategy effective_text_strategy(const AttackConfig& cfg) {
    if (!cfg.eg_enabled &&
        (cfg.text_strategy == TextStrategy::embedding_guidance || cfg.text_strategy == TextStrategy::embedding_only)) {
        return TextStrategy::filler_only;
    }
    return cfg.text_strategy;
}

// Scale 1.0 (if present) moves to the front; the rest keep their order.
inline std::vector<double> interaction_scale_order(const std::vector<double>& scales) {
    std::vector<double> out = scales;
    std::stable_partition(out.begin(), out.end(), [](double s) { return s == 1.0; });
    return out;
}

struct AttackResources {
    const ModelBackend& backend;
    const WordEmbeddingTable& table;
    const FillerModel& filler;
    const FillerModel* synonyms = nullptr;
};

inline CandidateProvider make_candidate_provider(const AttackResources& res, const AttackConfig& cfg) {
    const double tau = cfg.tau;
    const std::size_t k = cfg.k_substitutes;
    switch (effective_text_strategy(cfg)) {
    case TextStrategy::embedding_guidance:
        return [&res, tau, k](const Caption& c, std::size_t p) {
            return build_substitutes(res.table, res.filler, c, p, tau, k);
        };
    case TextStrategy::embedding_only:
        return [&res, tau, k](const Caption& c, std::size_t p) { return table_substitutes(res.table, c, p, tau, k); };
    case TextStrategy::filler_only:
        return [&res, k](const Caption& c, std::size_t p) { return filler_substitutes(res.filler, c, p, k); };
    case TextStrategy::synonym_file:
        if (res.synonyms == nullptr) throw ConfigError("text_strategy: synonym_file requested but no synonym file loaded");
        return [&res, k](const Caption& c, std::size_t p) { return filler_substitutes(*res.synonyms, c, p, k); };
    }
    throw ConfigError("text_strategy: unhandled value");
}

enum class Phase { interaction, image };

inline const char* to_string(Phase p) { return p == Phase::interaction ? "interaction" : "image"; }

// One record per iteration per phase. `loss` is evaluated at the image before
// the step; `image` is the iterate after it.
struct TraceRecord {
    Phase phase = Phase::interaction;
    std::size_t iteration = 0;
    double loss = 0.0;
    double grad_l1 = 0.0;
    double momentum_l1 = 0.0;
    Tensor3 normalized_grad;
    Tensor3 momentum;
    ImageTensor image;
};

struct InteractionResult {
    CaptionSet captions;
    ImageTensor image;
    MomentumState momentum;
    std::vector<TraceRecord> trace;
};

struct ImagePhaseResult {
    ImageTensor image;
    MomentumState initial_momentum;
    MomentumState momentum;
    std::vector<TraceRecord> trace;
};

inline TraceRecord make_record(Phase phase, std::size_t iteration, double loss, const Tensor3& step_grad,
                               const MomentumState& m, const ImageTensor& image) {
    return TraceRecord{phase, iteration, loss, l1_norm(step_grad.values()), l1_norm(m.g.values()), step_grad, m.g,
                       image};
}

inline InteractionResult interaction_phase(const AttackResources& res, const ImageTensor& image,
                                           const CaptionSet& captions, const AttackConfig& cfg) {
    validate(cfg);
    if (captions.empty()) throw InvalidInputError("caption set is empty");
    const auto order = interaction_scale_order(cfg.scales);
    InteractionResult out{captions, image, MomentumState::zeros(image.shape(), cfg.lambda_), {}};
    if (cfg.steps_interact == 0) return out;

    const auto provider = make_candidate_provider(res, cfg);
    const SetLossSpec pair_spec{SetLossKind::pair_negcos, 1.0};
    for (std::size_t k = 0; k < cfg.steps_interact; ++k) {
        const auto image_emb = encode_scaled(res.backend, out.image, order[k % order.size()]);
        for (auto& caption : out.captions) {
            caption = attack_caption_with(res.backend, provider, caption, image_emb, cfg.eps_text);
        }

        Tensor3 accumulated(image.shape());
        double loss = 0.0;
        for (std::size_t j = 0; j < out.captions.size(); ++j) {
            const double scale[] = {order[j % order.size()]};
            const auto lg = image_loss_and_gradient(res.backend, pair_spec, out.image,
                                                    std::span<const Caption>(&out.captions[j], 1), scale);
            loss += lg.loss;
            accumulated += normalize_gradient(lg.grad);
        }
        out.momentum = momentum_update(out.momentum, accumulated);
        out.image = sign_step_project(out.image, image, out.momentum.g, cfg.alpha, cfg.eps_image);
        out.trace.push_back(make_record(Phase::interaction, k + 1, loss, accumulated, out.momentum, out.image));
    }
    return out;
}

// Scales fed to the image-phase set loss. Paired kinds pair caption j with
// scale j mod |scales|.
inline std::vector<double> image_phase_scales(const AttackConfig& cfg, std::size_t n_captions) {
    const auto order = interaction_scale_order(cfg.scales);
    if (cfg.image_set_loss.kind == SetLossKind::cross_product_mean) return order;
    std::vector<double> paired(n_captions);
    for (std::size_t j = 0; j < n_captions; ++j) paired[j] = order[j % order.size()];
    return paired;
}

inline ImagePhaseResult image_phase(const ModelBackend& backend, const ImageTensor& adv_start,
                                    const ImageTensor& clean_image, const CaptionSet& adv_captions,
                                    const MomentumState& seed_momentum, const AttackConfig& cfg) {
    validate(cfg);
    Tensor3::require_same_shape(adv_start.tensor(), clean_image.tensor(), "image phase start");
    Tensor3::require_same_shape(seed_momentum.g, clean_image.tensor(), "image phase seed momentum");
    MomentumState g = cfg.ie_enabled ? MomentumState{seed_momentum.g, cfg.lambda_, 0}
                                     : MomentumState::zeros(clean_image.shape(), cfg.lambda_);
    ImagePhaseResult out{adv_start, g, g, {}};
    const auto scales = image_phase_scales(cfg, adv_captions.size());
    for (std::size_t k = 0; k < cfg.steps_image; ++k) {
        const auto lg = image_loss_and_gradient(backend, cfg.image_set_loss, out.image, adv_captions, scales);
        const Tensor3 step = normalize_gradient(lg.grad);
        out.momentum = momentum_update(out.momentum, step);
        out.image = sign_step_project(out.image, clean_image, out.momentum.g, cfg.alpha, cfg.eps_image);
        out.trace.push_back(make_record(Phase::image, k + 1, lg.loss, step, out.momentum, out.image));
    }
    return out;
}

struct AttackResult {
    ImageTensor adv_image;
    CaptionSet adv_captions;
    double clean_sim = 0.0;
    double adv_sim = 0.0;
    double linf = 0.0;
    std::vector<std::size_t> words_changed;
    // Image-phase set loss at the clean image and at the final image, both
    // against the adversarial captions.
    double initial_set_loss = 0.0;
    double final_set_loss = 0.0;
    std::vector<TraceRecord> trace;
};

inline double mean_caption_similarity(const ModelBackend& backend, const ImageTensor& image,
                                      const CaptionSet& captions) {
    const auto e_i = backend.encode_image(fit_to_backend(backend, image));
    double s = 0.0;
    for (const auto& c : captions) s += cosine_similarity(backend.encode_text(c), e_i);
    return s / static_cast<double>(captions.size());
}

inline AttackResult run_cmi_attack(const AttackResources& res, const ImageTensor& image, const CaptionSet& captions,
                                   const AttackConfig& cfg) {
    validate(cfg);
    if (captions.empty()) throw InvalidInputError("caption set is empty");
    if (image.shape() != res.backend.descriptor().image_shape) {
        throw ShapeMismatchError("image shape " + to_string(image.shape()) + " does not match backend shape " +
                                 to_string(res.backend.descriptor().image_shape));
    }

    auto inter = interaction_phase(res, image, captions, cfg);
    const ImageTensor& start = cfg.carry_interaction_image ? inter.image : image;
    auto img = image_phase(res.backend, start, image, inter.captions, inter.momentum, cfg);

    AttackResult out;
    out.adv_image = img.image;
    out.adv_captions = inter.captions;
    out.clean_sim = mean_caption_similarity(res.backend, image, captions);
    out.adv_sim = mean_caption_similarity(res.backend, out.adv_image, out.adv_captions);
    out.linf = linf_distance(out.adv_image.tensor(), image.tensor());
    for (const auto& c : out.adv_captions) out.words_changed.push_back(c.words_changed());

    const auto scales = image_phase_scales(cfg, out.adv_captions.size());
    const auto caption_embs = encode_captions(res.backend, out.adv_captions);
    auto set_loss_at = [&](const ImageTensor& x) {
        std::vector<EmbeddingVector> image_embs;
        for (double s : scales) image_embs.push_back(encode_scaled(res.backend, x, s));
        return set_loss(cfg.image_set_loss, caption_embs, image_embs);
    };
    out.initial_set_loss = set_loss_at(image);
    out.final_set_loss = set_loss_at(out.adv_image);

    out.trace = std::move(inter.trace);
    out.trace.insert(out.trace.end(), std::make_move_iterator(img.trace.begin()),
                     std::make_move_iterator(img.trace.end()));
    return out;
}

struct AttackFailure {
    std::string kind;
    std::string message;
};

inline std::string error_kind(const Error& e) {
    if (dynamic_cast<const ShapeMismatchError*>(&e)) return "shape_mismatch";
    if (dynamic_cast<const InvalidInputError*>(&e)) return "invalid_input";
    if (dynamic_cast<const DegenerateError*>(&e)) return "degenerate";
    if (dynamic_cast<const CapabilityError*>(&e)) return "capability";
    if (dynamic_cast<const PairingError*>(&e)) return "pairing";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    return "error";
}

// run_cmi_attack with library errors turned into a failure record. Config
// and capability errors still propagate: they are not per-pair failures.
inline std::variant<AttackResult, AttackFailure> attempt_cmi_attack(const AttackResources& res,
                                                                    const ImageTensor& image,
                                                                    const CaptionSet& captions,
                                                                    const AttackConfig& cfg) {
    try {
        return run_cmi_attack(res, image, captions, cfg);
    } catch (const ConfigError&) {
        throw;
    } catch (const CapabilityError&) {
        throw;
    } catch (const Error& e) {
        return AttackFailure{error_kind(e), e.what()};
    }
}

} // namespace cmi

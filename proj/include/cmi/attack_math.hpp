#pragma once

// Numerical kernels of the attack: cosine losses over pairs and sets,
// gradient normalization, the momentum recurrence, the projected sign step
// and differentiable multi-scale resizing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cmi/errors.hpp"
#include "cmi/tensor.hpp"

namespace cmi {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeMismatchError("cosine similarity of vectors with lengths " + std::to_string(a.size()) + " and " +
                                 std::to_string(b.size()));
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (!std::isfinite(na) || !std::isfinite(nb)) throw InvalidInputError("cosine similarity of non-finite vector");
    if (na == 0.0 || nb == 0.0) throw DegenerateError("cosine similarity of zero-norm vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Larger is better for the attacker: -cos(e_t, e_i).
inline double pair_loss(std::span<const double> text_emb, std::span<const double> image_emb) {
    return -cosine_similarity(text_emb, image_emb);
}

// d pair_loss / d image_emb (unclamped cosine).
inline EmbeddingVector pair_loss_image_grad(std::span<const double> text_emb, std::span<const double> image_emb) {
    const double nt = l2_norm(text_emb);
    const double ni = l2_norm(image_emb);
    if (nt == 0.0 || ni == 0.0) throw DegenerateError("pair loss gradient at zero-norm vector");
    const double c = dot(text_emb, image_emb) / (nt * ni);
    EmbeddingVector g(image_emb.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        g[k] = -(text_emb[k] / (nt * ni) - c * image_emb[k] / (ni * ni));
    }
    return g;
}

enum class SetLossKind {
    pair_negcos,        // exactly one caption and one image
    paired_sum,         // sum_j L(t_j, i_j)
    cross_product_mean, // mean_{j,k} L(t_j, i_k)
};

struct SetLossSpec {
    SetLossKind kind = SetLossKind::cross_product_mean;
    // Multiplies the reduced loss. Zero gives a loss that ignores the image.
    double weight = 1.0;

    friend bool operator==(const SetLossSpec&, const SetLossSpec&) = default;
};

inline const char* to_string(SetLossKind k) {
    switch (k) {
    case SetLossKind::pair_negcos: return "pair_negcos";
    case SetLossKind::paired_sum: return "paired_sum";
    case SetLossKind::cross_product_mean: return "cross_product_mean";
    }
    return "?";
}

inline SetLossKind set_loss_kind_from_string(const std::string& s) {
    if (s == "pair_negcos") return SetLossKind::pair_negcos;
    if (s == "paired_sum") return SetLossKind::paired_sum;
    if (s == "cross_product_mean") return SetLossKind::cross_product_mean;
    throw ConfigError("unknown set loss kind '" + s + "'");
}

namespace detail {

inline void check_set_sizes(const SetLossSpec& spec, std::size_t n_captions, std::size_t n_images) {
    if (n_captions == 0 || n_images == 0) throw PairingError("set loss over an empty list");
    switch (spec.kind) {
    case SetLossKind::pair_negcos:
        if (n_captions != 1 || n_images != 1) {
            throw PairingError("pair_negcos needs exactly one caption and one image, got " +
                               std::to_string(n_captions) + " and " + std::to_string(n_images));
        }
        break;
    case SetLossKind::paired_sum:
        if (n_captions != n_images) {
            throw PairingError("paired_sum needs equal list lengths, got " + std::to_string(n_captions) + " and " +
                               std::to_string(n_images));
        }
        break;
    case SetLossKind::cross_product_mean: break;
    }
}

} // namespace detail

inline double set_loss(const SetLossSpec& spec, std::span<const EmbeddingVector> caption_embs,
                       std::span<const EmbeddingVector> image_embs) {
    detail::check_set_sizes(spec, caption_embs.size(), image_embs.size());
    double total = 0.0;
    if (spec.kind == SetLossKind::cross_product_mean) {
        for (const auto& t : caption_embs)
            for (const auto& i : image_embs) total += pair_loss(t, i);
        total /= static_cast<double>(caption_embs.size() * image_embs.size());
    } else {
        for (std::size_t j = 0; j < caption_embs.size(); ++j) total += pair_loss(caption_embs[j], image_embs[j]);
    }
    return spec.weight * total;
}

// Gradient of set_loss with respect to each image embedding.
inline std::vector<EmbeddingVector> set_loss_image_grads(const SetLossSpec& spec,
                                                         std::span<const EmbeddingVector> caption_embs,
                                                         std::span<const EmbeddingVector> image_embs) {
    detail::check_set_sizes(spec, caption_embs.size(), image_embs.size());
    std::vector<EmbeddingVector> grads(image_embs.size(), EmbeddingVector(image_embs.front().size(), 0.0));
    if (spec.kind == SetLossKind::cross_product_mean) {
        const double w = spec.weight / static_cast<double>(caption_embs.size() * image_embs.size());
        for (std::size_t k = 0; k < image_embs.size(); ++k) {
            for (const auto& t : caption_embs) {
                const auto g = pair_loss_image_grad(t, image_embs[k]);
                for (std::size_t d = 0; d < g.size(); ++d) grads[k][d] += w * g[d];
            }
        }
    } else {
        for (std::size_t j = 0; j < caption_embs.size(); ++j) {
            const auto g = pair_loss_image_grad(caption_embs[j], image_embs[j]);
            for (std::size_t d = 0; d < g.size(); ++d) grads[j][d] = spec.weight * g[d];
        }
    }
    return grads;
}

// grad / ||grad||_1; the zero gradient maps to itself.
inline Tensor3 normalize_gradient(const Tensor3& grad) {
    if (!grad.all_finite()) throw InvalidInputError("normalize_gradient: non-finite gradient entry");
    const double n = l1_norm(grad.values());
    if (n == 0.0) return grad;
    Tensor3 out = grad;
    for (auto& v : out.values()) v /= n;
    return out;
}

struct MomentumState {
    Tensor3 g;
    double lambda_ = 0.0;
    std::size_t step_count = 0;

    static MomentumState zeros(Shape3 shape, double lambda) { return MomentumState{Tensor3(shape), lambda, 0}; }
};

inline MomentumState momentum_update(const MomentumState& state, const Tensor3& normalized_grad) {
    Tensor3::require_same_shape(state.g, normalized_grad, "momentum update");
    MomentumState next{state.g, state.lambda_, state.step_count + 1};
    for (std::size_t i = 0; i < next.g.size(); ++i) {
        next.g[i] = state.lambda_ * state.g[i] + normalized_grad[i];
    }
    if (!next.g.all_finite()) throw InvalidInputError("momentum update produced a non-finite entry");
    return next;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// adv + alpha * sign(g), projected onto the L-inf ball of radius eps around
// clean, then onto [0,1].
inline ImageTensor sign_step_project(const ImageTensor& adv, const ImageTensor& clean, const Tensor3& g, double alpha,
                                     double eps) {
    Tensor3::require_same_shape(adv.tensor(), clean.tensor(), "sign step (adv vs clean)");
    Tensor3::require_same_shape(adv.tensor(), g, "sign step (adv vs gradient)");
    if (!(alpha > 0.0)) throw InvalidInputError("sign step needs alpha > 0");
    if (!(eps >= 0.0)) throw InvalidInputError("sign step needs eps >= 0");
    Tensor3 out(adv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double stepped = adv[i] + alpha * sign_of(g[i]);
        const double projected = std::clamp(stepped, clean[i] - eps, clean[i] + eps);
        out[i] = std::clamp(projected, 0.0, 1.0);
    }
    return ImageTensor::clamped(std::move(out));
}

// ---------------------------------------------------------------------------
// Bilinear resize with half-pixel centers (align_corners = false).

inline std::size_t scaled_side(std::size_t side, double scale) {
    const auto s = static_cast<std::size_t>(std::floor(static_cast<double>(side) * scale + 0.5));
    return std::max<std::size_t>(1, s);
}

namespace detail {

struct AxisTap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double w_lo = 1.0;
    double w_hi = 0.0;
};

inline std::vector<AxisTap> axis_taps(std::size_t in, std::size_t out) {
    std::vector<AxisTap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        const double frac = src - static_cast<double>(lo);
        taps[o] = AxisTap{lo, hi, 1.0 - frac, frac};
    }
    return taps;
}

} // namespace detail

inline Tensor3 resize_bilinear(const Tensor3& in, std::size_t out_h, std::size_t out_w) {
    const auto& s = in.shape();
    if (out_h == s.height && out_w == s.width) return in;
    const auto ty = detail::axis_taps(s.height, out_h);
    const auto tx = detail::axis_taps(s.width, out_w);
    Tensor3 out(Shape3{s.channels, out_h, out_w});
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& a = ty[y];
                const auto& b = tx[x];
                out(c, y, x) = a.w_lo * (b.w_lo * in(c, a.lo, b.lo) + b.w_hi * in(c, a.lo, b.hi)) +
                               a.w_hi * (b.w_lo * in(c, a.hi, b.lo) + b.w_hi * in(c, a.hi, b.hi));
            }
        }
    }
    return out;
}

// Adjoint of resize_bilinear: maps a gradient at the output resolution back
// to the input resolution.
inline Tensor3 resize_bilinear_adjoint(const Tensor3& grad_out, std::size_t in_h, std::size_t in_w) {
    const auto& s = grad_out.shape();
    if (in_h == s.height && in_w == s.width) return grad_out;
    const auto ty = detail::axis_taps(in_h, s.height);
    const auto tx = detail::axis_taps(in_w, s.width);
    Tensor3 grad_in(Shape3{s.channels, in_h, in_w});
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                const double g = grad_out(c, y, x);
                const auto& a = ty[y];
                const auto& b = tx[x];
                grad_in(c, a.lo, b.lo) += a.w_lo * b.w_lo * g;
                grad_in(c, a.lo, b.hi) += a.w_lo * b.w_hi * g;
                grad_in(c, a.hi, b.lo) += a.w_hi * b.w_lo * g;
                grad_in(c, a.hi, b.hi) += a.w_hi * b.w_hi * g;
            }
        }
    }
    return grad_in;
}

inline void require_positive_scales(std::span<const double> scales) {
    if (scales.empty()) throw InvalidInputError("scale list is empty");
    for (double s : scales) {
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidInputError("scale must be positive, got " + std::to_string(s));
    }
}

inline ImageTensor scale_image(const ImageTensor& base, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw InvalidInputError("scale must be positive, got " + std::to_string(scale));
    }
    if (scale == 1.0) return base;
    const auto& s = base.shape();
    return ImageTensor::clamped(resize_bilinear(base.tensor(), scaled_side(s.height, scale), scaled_side(s.width, scale)));
}

struct ScaledImageSet {
    ImageTensor base;
    std::vector<double> scales;
    std::vector<ImageTensor> members;
};

inline ScaledImageSet multi_scale_set(const ImageTensor& base, std::span<const double> scales) {
    require_positive_scales(scales);
    ScaledImageSet set{base, std::vector<double>(scales.begin(), scales.end()), {}};
    set.members.reserve(scales.size());
    for (double s : scales) set.members.push_back(scale_image(base, s));
    return set;
}

} // namespace cmi

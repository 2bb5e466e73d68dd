#pragma once

// Encoder contract consumed by every attack, the set-loss image gradient built
// on top of it, and a deterministic toy aligned backend.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmi/attack_math.hpp"
#include "cmi/errors.hpp"
#include "cmi/tensor.hpp"
#include "cmi/text.hpp"

namespace cmi {

struct BackendDescriptor {
    std::string name;
    Shape3 image_shape;
    std::size_t embedding_dim = 0;
    std::vector<std::string> vocabulary;
    bool deterministic = true;
    std::uint64_t seed = 0;
};

class ModelBackend {
  public:
    virtual ~ModelBackend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    // Image must have the backend's native shape (see fit_to_backend).
    virtual EmbeddingVector encode_image(const ImageTensor& image) const = 0;
    virtual EmbeddingVector encode_words(std::span<const std::string> words) const = 0;

    EmbeddingVector encode_text(const Caption& caption) const {
        if (caption.empty()) throw InvalidInputError("cannot encode an empty caption");
        return encode_words(caption.words());
    }

    virtual bool supports_gradient() const { return false; }

    // Vector-Jacobian product of encode_image at `image`: J^T * upstream.
    virtual Tensor3 image_vjp(const ImageTensor& /*image*/, std::span<const double> /*upstream*/) const {
        throw CapabilityError("backend '" + descriptor().name + "' does not provide image gradients");
    }
};

// Resizes an image of any spatial size to the backend's native resolution.
inline ImageTensor fit_to_backend(const ModelBackend& backend, const ImageTensor& image) {
    const auto& native = backend.descriptor().image_shape;
    if (image.shape().channels != native.channels) {
        throw ShapeMismatchError("image has " + std::to_string(image.shape().channels) + " channels, backend expects " +
                                 std::to_string(native.channels));
    }
    if (image.shape() == native) return image;
    return ImageTensor::clamped(resize_bilinear(image.tensor(), native.height, native.width));
}

// E_I of the `scale`-resized image, as seen by the backend.
inline EmbeddingVector encode_scaled(const ModelBackend& backend, const ImageTensor& image, double scale) {
    return backend.encode_image(fit_to_backend(backend, scale_image(image, scale)));
}

inline std::vector<EmbeddingVector> encode_captions(const ModelBackend& backend, std::span<const Caption> captions) {
    std::vector<EmbeddingVector> out;
    out.reserve(captions.size());
    for (const auto& c : captions) out.push_back(backend.encode_text(c));
    return out;
}

struct LossGradient {
    double loss = 0.0;
    Tensor3 grad;
};

// Set loss between caption embeddings and the embeddings of `image` rescaled
// by each entry of `scales`, plus its gradient with respect to `image` at
// base resolution. For paired kinds, captions[j] pairs with scales[j].
inline LossGradient image_loss_and_gradient(const ModelBackend& backend, const SetLossSpec& spec,
                                            const ImageTensor& image, std::span<const Caption> captions,
                                            std::span<const double> scales) {
    if (!backend.supports_gradient()) {
        throw CapabilityError("backend '" + backend.descriptor().name + "' does not provide image gradients");
    }
    require_positive_scales(scales);
    const auto caption_embs = encode_captions(backend, captions);

    std::vector<ImageTensor> members;
    std::vector<ImageTensor> fitted;
    std::vector<EmbeddingVector> image_embs;
    for (double s : scales) {
        members.push_back(scale_image(image, s));
        fitted.push_back(fit_to_backend(backend, members.back()));
        image_embs.push_back(backend.encode_image(fitted.back()));
    }

    LossGradient out{set_loss(spec, caption_embs, image_embs), Tensor3(image.shape())};
    const auto upstream = set_loss_image_grads(spec, caption_embs, image_embs);
    for (std::size_t k = 0; k < scales.size(); ++k) {
        Tensor3 g = backend.image_vjp(fitted[k], upstream[k]);
        const auto& ms = members[k].shape();
        g = resize_bilinear_adjoint(g, ms.height, ms.width);
        g = resize_bilinear_adjoint(g, image.shape().height, image.shape().width);
        out.grad += g;
    }
    return out;
}

inline Tensor3 image_gradient(const ModelBackend& backend, const SetLossSpec& spec, const ImageTensor& image,
                              std::span<const Caption> captions, std::span<const double> scales) {
    return image_loss_and_gradient(backend, spec, image, captions, scales).grad;
}

inline Tensor3 image_gradient(const ModelBackend& backend, const SetLossSpec& spec, const ImageTensor& image,
                              std::span<const Caption> captions) {
    const double unit[] = {1.0};
    return image_gradient(backend, spec, image, captions, unit);
}

// ---------------------------------------------------------------------------
// Toy aligned backend

// Row-major d x n matrix.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::vector<double> multiply(std::span<const double> x) const {
        std::vector<double> y(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = values.data() + r * cols;
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
            y[r] = s;
        }
        return y;
    }

    std::vector<double> multiply_transposed(std::span<const double> y) const {
        std::vector<double> x(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = values.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) x[c] += row[c] * y[r];
        }
        return x;
    }
};

// Standard normal draws from mt19937_64 via Box-Muller. std::normal_distribution
// is implementation-defined, which would break cross-platform reproducibility.
class SeededNormal {
  public:
    explicit SeededNormal(std::uint64_t seed) : rng_(seed) {}

    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::mt19937_64& engine() { return rng_; }

  private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct ToyWeights {
    DenseMatrix image;  // d x (C*H*W)
    DenseMatrix text;   // d x word_dim
};

// Weights are a pure function of the arguments: N(0,1) / sqrt(fan_in),
// image matrix drawn first.
inline ToyWeights make_toy_weights(std::uint64_t seed, Shape3 image_shape, std::size_t embedding_dim,
                                   std::size_t word_dim) {
    SeededNormal normal(seed);
    ToyWeights w;
    w.image = DenseMatrix{embedding_dim, image_shape.size(), std::vector<double>(embedding_dim * image_shape.size())};
    const double si = 1.0 / std::sqrt(static_cast<double>(image_shape.size()));
    for (auto& v : w.image.values) v = normal() * si;
    w.text = DenseMatrix{embedding_dim, word_dim, std::vector<double>(embedding_dim * word_dim)};
    const double st = 1.0 / std::sqrt(static_cast<double>(word_dim));
    for (auto& v : w.text.values) v = normal() * st;
    return w;
}

// encode_image(x) = normalize(W_img * flatten(x))
// encode_text(t)  = normalize(W_txt * mean(word vectors of t))
// Out-of-vocabulary words contribute the zero vector (the UNK vector).
class ToyAlignedBackend final : public ModelBackend {
  public:
    ToyAlignedBackend(std::uint64_t seed, Shape3 image_shape, std::size_t embedding_dim,
                      const std::shared_ptr<const WordEmbeddingTable>& table)
        : ToyAlignedBackend(seed, image_shape, table,
                            make_toy_weights(seed, image_shape, embedding_dim, table ? table->dim() : 0)) {}

    // Explicit weights, for hand-sized test fixtures.
    ToyAlignedBackend(std::uint64_t seed, Shape3 image_shape, std::shared_ptr<const WordEmbeddingTable> table,
                      ToyWeights weights)
        : table_(std::move(table)), weights_(std::move(weights)) {
        if (!table_ || table_->empty()) throw InvalidInputError("toy backend needs a non-empty embedding table");
        if (image_shape.size() == 0) throw InvalidInputError("toy backend image shape has a zero extent");
        const std::size_t d = weights_.image.rows;
        if (d < 2) throw InvalidInputError("toy backend embedding dimension must be at least 2");
        if (weights_.image.cols != image_shape.size() || weights_.text.rows != d ||
            weights_.text.cols != table_->dim()) {
            throw ShapeMismatchError("toy backend weight shapes do not match image shape / table dimension");
        }
        desc_ = BackendDescriptor{"toy", image_shape, d, table_->tokens(), true, seed};
        unk_.assign(table_->dim(), 0.0);
    }

    const BackendDescriptor& descriptor() const override { return desc_; }
    const ToyWeights& weights() const { return weights_; }
    const WordEmbeddingTable& table() const { return *table_; }
    std::span<const double> unk_vector() const { return unk_; }

    EmbeddingVector encode_image(const ImageTensor& image) const override {
        check_image(image);
        return normalized(weights_.image.multiply(image.values()), "image");
    }

    EmbeddingVector encode_words(std::span<const std::string> words) const override {
        if (words.empty()) throw InvalidInputError("cannot encode an empty caption");
        return normalized(weights_.text.multiply(mean_word_vector(words)), "caption");
    }

    std::vector<double> mean_word_vector(std::span<const std::string> words) const {
        std::vector<double> mean(table_->dim(), 0.0);
        for (const auto& w : words) {
            const auto row = table_->find(w);
            const auto v = row ? table_->vector(*row) : std::span<const double>(unk_);
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += v[k];
        }
        for (auto& m : mean) m /= static_cast<double>(words.size());
        return mean;
    }

    bool supports_gradient() const override { return true; }

    Tensor3 image_vjp(const ImageTensor& image, std::span<const double> upstream) const override {
        check_image(image);
        if (upstream.size() != desc_.embedding_dim) throw ShapeMismatchError("upstream gradient has wrong length");
        const auto u = weights_.image.multiply(image.values());
        const double n = l2_norm(u);
        if (n == 0.0) throw DegenerateError("image embedding is zero before normalization");
        // d(u/|u|)^T v = (v - e (e.v)) / |u|
        std::vector<double> du(u.size());
        double ev = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) ev += (u[k] / n) * upstream[k];
        for (std::size_t k = 0; k < u.size(); ++k) du[k] = (upstream[k] - (u[k] / n) * ev) / n;
        return Tensor3(image.shape(), weights_.image.multiply_transposed(du));
    }

  private:
    void check_image(const ImageTensor& image) const {
        if (image.shape() != desc_.image_shape) {
            throw ShapeMismatchError("image shape " + to_string(image.shape()) + " does not match backend shape " +
                                     to_string(desc_.image_shape));
        }
    }

    static EmbeddingVector normalized(std::vector<double> u, const char* what) {
        const double n = l2_norm(u);
        if (!std::isfinite(n)) throw InvalidInputError(std::string("non-finite ") + what + " embedding");
        if (n == 0.0) throw DegenerateError(std::string(what) + " embedding is zero before normalization");
        for (auto& v : u) v /= n;
        return u;
    }

    std::shared_ptr<const WordEmbeddingTable> table_;
    ToyWeights weights_;
    BackendDescriptor desc_;
    std::vector<double> unk_;
};

} // namespace cmi

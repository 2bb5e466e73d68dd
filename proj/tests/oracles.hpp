#pragma once

// Test-only reference implementations. Nothing here calls into the code path
// it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmi/backend.hpp"
#include "cmi/tensor.hpp"

namespace cmi::oracle {

// normalize(W * x) with explicit loops over the raw weight values.
inline std::vector<double> dense_encode(const DenseMatrix& w, const std::vector<double>& x) {
    std::vector<double> u(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r)
        for (std::size_t c = 0; c < w.cols; ++c) u[r] += w.values[r * w.cols + c] * x[c];
    double n = 0.0;
    for (double v : u) n += v * v;
    n = std::sqrt(n);
    for (double& v : u) v /= n;
    return u;
}

inline double naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Central differences of a scalar function of a flat vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f(x);
        x[i] = saved - h;
        const double down = f(x);
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps entries that
// are zero up to rounding from dominating.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-7) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

// O(n^2) selection sort by descending cosine; first maximum wins ties.
inline std::vector<std::size_t> brute_force_rank(const std::vector<double>& query,
                                                 const std::vector<std::vector<double>>& gallery) {
    std::vector<bool> used(gallery.size(), false);
    std::vector<std::size_t> order;
    for (std::size_t round = 0; round < gallery.size(); ++round) {
        std::size_t best = gallery.size();
        double best_sim = -2.0;
        for (std::size_t i = 0; i < gallery.size(); ++i) {
            if (used[i]) continue;
            const double s = naive_cos(query, gallery[i]);
            if (best == gallery.size() || s > best_sim) {
                best = i;
                best_sim = s;
            }
        }
        used[best] = true;
        order.push_back(best);
    }
    return order;
}

// Plain iterative sign attack on the toy backend at native resolution:
// x <- clip(x + alpha * sign(d/dx mean_j -cos(t_j, E_I(x)))). Text embeddings
// are given; the image gradient is derived here from the raw weights.
inline std::vector<double> minimal_sign_attack(const DenseMatrix& w_img, const std::vector<std::vector<double>>& text_embs,
                                               const std::vector<double>& clean, double eps, double alpha,
                                               std::size_t steps) {
    std::vector<double> x = clean;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> u(w_img.rows, 0.0);
        for (std::size_t r = 0; r < w_img.rows; ++r)
            for (std::size_t c = 0; c < w_img.cols; ++c) u[r] += w_img.values[r * w_img.cols + c] * x[c];
        double nu = 0;
        for (double v : u) nu += v * v;
        nu = std::sqrt(nu);
        std::vector<double> dl_du(u.size(), 0.0);
        for (const auto& t : text_embs) {
            double nt = 0, tu = 0;
            for (std::size_t k = 0; k < t.size(); ++k) {
                nt += t[k] * t[k];
                tu += t[k] * u[k];
            }
            nt = std::sqrt(nt);
            // d/du of -(t.u)/(|t||u|)
            for (std::size_t k = 0; k < u.size(); ++k) {
                dl_du[k] += -(t[k] / (nt * nu) - tu * u[k] / (nt * nu * nu * nu)) / double(text_embs.size());
            }
        }
        for (std::size_t c = 0; c < w_img.cols; ++c) {
            double g = 0;
            for (std::size_t r = 0; r < w_img.rows; ++r) g += w_img.values[r * w_img.cols + c] * dl_du[r];
            const double sg = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
            double v = x[c] + alpha * sg;
            v = std::min(std::max(v, clean[c] - eps), clean[c] + eps);
            x[c] = std::min(std::max(v, 0.0), 1.0);
        }
    }
    return x;
}

inline std::vector<double> random_pixels(std::mt19937_64& rng, std::size_t n, double lo = 0.1, double hi = 0.9) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) v = u(rng);
    return out;
}

} // namespace cmi::oracle

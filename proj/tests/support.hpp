#pragma once

// Seeded generators and straight-line oracles shared by the test suites and
// the acceptance runner. Nothing here calls into the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ifecf/rng.hpp"
#include "ifecf/tensor.hpp"

namespace ifecf::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    std::size_t size(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }
    double real(double lo, double hi) { return rng_.uniform(lo, hi); }
    double normal() { return rng_.normal(); }
    bool coin() { return rng_.uniform() < 0.5; }

    template <class T = double>
    Tensor<T> tensor(Shape shape, double scale = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.values()) v = static_cast<T>(scale * rng_.normal());
        return t;
    }

    SplitMix64& rng() { return rng_; }

private:
    SplitMix64 rng_;
};

// Runs `prop(gen, case_index)` for `cases` independently seeded cases.
template <class F>
void for_all(std::uint64_t seed, std::size_t cases, F&& prop) {
    for (std::size_t c = 0; c < cases; ++c) {
        Gen gen(hash_key(seed, c));
        prop(gen, c);
    }
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double worst = a.shape() == b.shape() ? 0.0 : std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

// Multi-head scaled dot-product attention written out index by index.
// Features are d x T, projections d_k x d, output projection d x d_k.
// `mask` is T x T (entries 0 or -inf) or empty for none.
struct OracleAttention {
    Tensor<double> output;   // d x T
    Tensor<double> weights;  // heads x T x T
};

inline OracleAttention attention_oracle(const Tensor<double>& xq, const Tensor<double>& xkv,
                                        const Tensor<double>& wq, const Tensor<double>& wk,
                                        const Tensor<double>& wv, const Tensor<double>& wo,
                                        std::size_t heads, const Tensor<double>& mask,
                                        bool per_head_scale = false) {
    const std::size_t d = xq.dim(0), frames = xq.dim(1), dk = wq.dim(0), dh = dk / heads;
    const double scale = std::sqrt(static_cast<double>(per_head_scale ? dh : dk));
    auto project = [&](const Tensor<double>& w, const Tensor<double>& x, std::size_t r, std::size_t t) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += w(r, c) * x(c, t);
        return s;
    };
    OracleAttention out{Tensor<double>({d, frames}), Tensor<double>({heads, frames, frames})};
    Tensor<double> concat({dk, frames});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < frames; ++i) {
            std::vector<double> score(frames);
            for (std::size_t j = 0; j < frames; ++j) {
                double s = 0.0;
                for (std::size_t r = h * dh; r < (h + 1) * dh; ++r)
                    s += project(wq, xq, r, i) * project(wk, xkv, r, j);
                score[j] = s / scale + (mask.empty() ? 0.0 : mask(i, j));
            }
            const double peak = *std::max_element(score.begin(), score.end());
            double z = 0.0;
            for (double s : score) z += std::exp(s - peak);
            for (std::size_t j = 0; j < frames; ++j) out.weights(h, i, j) = std::exp(score[j] - peak) / z;
            for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < frames; ++j) acc += out.weights(h, i, j) * project(wv, xkv, r, j);
                concat(r, i) = acc;
            }
        }
    }
    for (std::size_t o = 0; o < d; ++o)
        for (std::size_t t = 0; t < frames; ++t) {
            double s = 0.0;
            for (std::size_t r = 0; r < dk; ++r) s += wo(o, r) * concat(r, t);
            out.output(o, t) = s;
        }
    return out;
}

// Challenge score from the two split means: stories weigh 2/3.
inline double score_oracle(double stories, double subjects) {
    return (2.0 * stories + subjects) / 3.0;
}

// Published (held-out stories, held-out subjects, score) rows, in percent.
struct ScoreRow {
    const char* method;
    double stories, subjects, score;
};

inline const std::vector<ScoreRow>& published_score_rows() {
    static const std::vector<ScoreRow> rows = {
        {"Baseline", 77.98, 78.55, 78.17},   {"A-SM", 79.98, 78.17, 79.38},
        {"Top-1", 82.71, 80.98, 82.13},      {"Top-2", 79.61, 77.93, 79.05},
        {"Top-3", 79.21, 78.40, 78.94},      {"IFE-CF", 80.82, 80.48, 80.71},
        {"IFE-CF(w/o -D)", 78.67, 77.60, 78.31}, {"IFE-CF(w/o -T)", 79.60, 80.32, 79.84},
        {"IFE-SF", 78.90, 79.02, 78.94},     {"IFE-CF(w/o -M)", 80.06, 80.53, 80.22},
    };
    return rows;
}

}  // namespace ifecf::testing

#include "ifecf/crossmodal.hpp"

#include <cmath>
#include <limits>

#include "ifecf/linalg.hpp"

namespace ifecf {

std::string to_string(MaskOrientation o) {
    switch (o) {
        case MaskOrientation::speech_lower: return "speech_lower";
        case MaskOrientation::eeg_upper: return "eeg_upper";
        case MaskOrientation::none: return "none";
    }
    return "?";
}

std::string to_string(ScoreScale s) { return s == ScoreScale::full_dk ? "full_dk" : "per_head"; }

ScoreScale parse_score_scale(const std::string& s) {
    if (s == "full_dk") return ScoreScale::full_dk;
    if (s == "per_head") return ScoreScale::per_head;
    throw ConfigError("unknown scale_mode '" + s + "' (expected full_dk or per_head)");
}

MaskMatrix make_causal_mask(std::size_t frames, MaskOrientation orientation) {
    if (frames < 1) throw InputError("make_causal_mask: T must be >= 1");
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    MaskMatrix m{Tensor<double>({frames, frames}), orientation};
    for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t j = 0; j < frames; ++j) {
            const bool blocked = (orientation == MaskOrientation::speech_lower && j < i) ||
                                 (orientation == MaskOrientation::eeg_upper && j > i);
            m.entries(i, j) = blocked ? kNegInf : 0.0;
        }
    return m;
}

template <class T>
AttentionParams<T> AttentionParams<T>::zeros(std::size_t d, std::size_t d_k, std::size_t heads) {
    if (heads == 0 || d_k % heads != 0) {
        throw ConfigError("attention: heads must divide d_k (d_k=" + std::to_string(d_k) +
                          ", heads=" + std::to_string(heads) + ")");
    }
    AttentionParams p;
    p.wq = Tensor<T>({d_k, d});
    p.wk = Tensor<T>({d_k, d});
    p.wv = Tensor<T>({d_k, d});
    p.wo = Tensor<T>({d, d_k});
    p.heads = heads;
    return p;
}

template <class T>
AttentionParams<T> AttentionParams<T>::init(std::size_t d, std::size_t d_k, std::size_t heads,
                                            SplitMix64& rng) {
    AttentionParams p = zeros(d, d_k, heads);
    const auto fill = [&rng](Tensor<T>& w, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill(p.wq, d);
    fill(p.wk, d);
    fill(p.wv, d);
    fill(p.wo, d_k);
    return p;
}

template <class T>
Tensor<T> AttentionMap<T>::head_average() const {
    const std::size_t heads = weights.dim(0);
    const std::size_t frames = weights.dim(1);
    Tensor<T> avg({frames, frames});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < frames * frames; ++i) avg[i] += weights[h * frames * frames + i];
    for (auto& v : avg.values()) v /= static_cast<T>(heads);
    return avg;
}

namespace {

template <class T>
T score_scale(const AttentionParams<T>& p, ScoreScale scale) {
    const double dk = static_cast<double>(p.key_dim());
    return static_cast<T>(std::sqrt(scale == ScoreScale::full_dk ? dk : dk / p.heads));
}

template <class T>
void check_shapes(const Tensor<T>& query_feat, const Tensor<T>& kv_feat,
                  const AttentionParams<T>& params, const MaskMatrix& mask) {
    if (query_feat.rank() != 2 || kv_feat.rank() != 2) {
        throw InputError("attention: features must be d x T matrices");
    }
    const std::size_t d = params.model_dim();
    const std::size_t dk = params.key_dim();
    if (params.heads == 0 || dk % params.heads != 0) {
        throw InputError("attention: heads must divide d_k");
    }
    if (query_feat.dim(0) != d || kv_feat.dim(0) != d) {
        throw InputError("attention: feature dim does not match W_Q/W_K/W_V columns");
    }
    if (query_feat.dim(1) != kv_feat.dim(1)) {
        throw InputError("attention: query and key/value maps have different frame counts");
    }
    require_shape(params.wk, {dk, d}, "attention W_K");
    require_shape(params.wv, {dk, d}, "attention W_V");
    require_shape(params.wo, {d, dk}, "attention W_O");
    const std::size_t frames = query_feat.dim(1);
    if (mask.entries.shape() != Shape{frames, frames}) {
        throw InputError("attention: mask " + shape_str(mask.entries.shape()) + " for T=" +
                         std::to_string(frames));
    }
}

}  // namespace

template <class T>
AttentionOutput<T> crossmodal_attention(const Tensor<T>& query_feat, const Tensor<T>& kv_feat,
                                        const AttentionParams<T>& params, const MaskMatrix& mask,
                                        ScoreScale scale, AttentionCache<T>* cache) {
    check_shapes(query_feat, kv_feat, params, mask);
    const std::size_t frames = query_feat.dim(1);
    const std::size_t heads = params.heads;
    const std::size_t head_dim = params.key_dim() / heads;
    const T inv_scale = T{1} / score_scale(params, scale);

    AttentionCache<T> local;
    AttentionCache<T>& c = cache ? *cache : local;
    matmul(params.wq, query_feat, c.q);
    matmul(params.wk, kv_feat, c.k);
    matmul(params.wv, kv_feat, c.v);
    c.concat = Tensor<T>({params.key_dim(), frames});

    AttentionOutput<T> out;
    out.map.masked = mask.orientation != MaskOrientation::none;
    out.map.weights = Tensor<T>({heads, frames, frames});
    std::vector<T> row(frames);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t r0 = h * head_dim;
        for (std::size_t i = 0; i < frames; ++i) {
            std::fill(row.begin(), row.end(), T{0});
            for (std::size_t r = r0; r < r0 + head_dim; ++r) {
                const T qv = c.q(r, i) * inv_scale;
                const T* krow = &c.k(r, 0);
                for (std::size_t j = 0; j < frames; ++j) row[j] += qv * krow[j];
            }
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < frames; ++j) {
                row[j] += static_cast<T>(mask.entries(i, j));
                mx = std::max(mx, row[j]);
            }
            if (!std::isfinite(mx)) {
                if (mx == -std::numeric_limits<T>::infinity()) {
                    throw DegenerateMaskError("attention: query row " + std::to_string(i) +
                                              " has every key masked");
                }
                throw NumericError("attention: non-finite score in row " + std::to_string(i));
            }
            T total = 0;
            for (std::size_t j = 0; j < frames; ++j) {
                row[j] = std::exp(row[j] - mx);
                total += row[j];
            }
            T* a = &out.map.weights(h, i, 0);
            for (std::size_t j = 0; j < frames; ++j) a[j] = row[j] / total;
            for (std::size_t r = r0; r < r0 + head_dim; ++r) {
                const T* vrow = &c.v(r, 0);
                T acc = 0;
                for (std::size_t j = 0; j < frames; ++j) acc += a[j] * vrow[j];
                c.concat(r, i) = acc;
            }
        }
    }
    matmul(params.wo, c.concat, out.feature);
    return out;
}

template <class T>
void crossmodal_attention_backward(const Tensor<T>& query_feat, const Tensor<T>& kv_feat,
                                   const AttentionParams<T>& params, const AttentionMap<T>& map,
                                   const AttentionCache<T>& cache, const Tensor<T>& grad_output,
                                   ScoreScale scale, AttentionParams<T>& grads,
                                   Tensor<T>& grad_query, Tensor<T>& grad_kv) {
    const std::size_t frames = query_feat.dim(1);
    const std::size_t heads = params.heads;
    const std::size_t dk = params.key_dim();
    const std::size_t head_dim = dk / heads;
    const T inv_scale = T{1} / score_scale(params, scale);
    require_shape(grad_output, {params.model_dim(), frames}, "attention grad_output");

    matmul_nt(grad_output, cache.concat, grads.wo, true);
    Tensor<T> grad_concat;
    matmul_tn(params.wo, grad_output, grad_concat);

    Tensor<T> gq({dk, frames});
    Tensor<T> gk({dk, frames});
    Tensor<T> gv({dk, frames});
    std::vector<T> ga(frames);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t r0 = h * head_dim;
        for (std::size_t i = 0; i < frames; ++i) {
            const T* a = &map.weights(h, i, 0);
            std::fill(ga.begin(), ga.end(), T{0});
            for (std::size_t r = r0; r < r0 + head_dim; ++r) {
                const T go = grad_concat(r, i);
                const T* vrow = &cache.v(r, 0);
                T* gvrow = &gv(r, 0);
                for (std::size_t j = 0; j < frames; ++j) {
                    ga[j] += go * vrow[j];
                    gvrow[j] += a[j] * go;
                }
            }
            T weighted = 0;
            for (std::size_t j = 0; j < frames; ++j) weighted += a[j] * ga[j];
            // ga becomes the score gradient, pre-multiplied by 1/scale.
            for (std::size_t j = 0; j < frames; ++j) ga[j] = a[j] * (ga[j] - weighted) * inv_scale;
            for (std::size_t r = r0; r < r0 + head_dim; ++r) {
                const T* krow = &cache.k(r, 0);
                T* gkrow = &gk(r, 0);
                const T qv = cache.q(r, i);
                T acc = 0;
                for (std::size_t j = 0; j < frames; ++j) {
                    acc += ga[j] * krow[j];
                    gkrow[j] += ga[j] * qv;
                }
                gq(r, i) = acc;
            }
        }
    }
    matmul_nt(gq, query_feat, grads.wq, true);
    matmul_nt(gk, kv_feat, grads.wk, true);
    matmul_nt(gv, kv_feat, grads.wv, true);
    matmul_tn(params.wq, gq, grad_query);
    matmul_tn(params.wk, gk, grad_kv);
    matmul_tn(params.wv, gv, grad_kv, true);
}

template <class T>
AttentionOutput<T> smca_block(const Tensor<T>& x_sd, const Tensor<T>& x_ed,
                              const AttentionParams<T>& params, ScoreScale scale,
                              AttentionCache<T>* cache) {
    if (x_sd.rank() != 2) throw InputError("smca: speech feature must be d x T");
    return crossmodal_attention(x_sd, x_ed, params,
                                make_causal_mask(x_sd.dim(1), MaskOrientation::speech_lower),
                                scale, cache);
}

template <class T>
AttentionOutput<T> emca_block(const Tensor<T>& x_ed, const Tensor<T>& x_sd,
                              const AttentionParams<T>& params, ScoreScale scale,
                              AttentionCache<T>* cache) {
    if (x_ed.rank() != 2) throw InputError("emca: EEG feature must be d x T");
    return crossmodal_attention(x_ed, x_sd, params,
                                make_causal_mask(x_ed.dim(1), MaskOrientation::eeg_upper), scale,
                                cache);
}

template <class T>
AttentionOutput<T> self_attention_block(const Tensor<T>& x, const AttentionParams<T>& params,
                                        const MaskMatrix& mask, ScoreScale scale,
                                        AttentionCache<T>* cache) {
    return crossmodal_attention(x, x, params, mask, scale, cache);
}

#define IFECF_INSTANTIATE_ATTENTION(T)                                                           \
    template struct AttentionParams<T>;                                                          \
    template struct AttentionMap<T>;                                                             \
    template AttentionOutput<T> crossmodal_attention<T>(const Tensor<T>&, const Tensor<T>&,     \
                                                        const AttentionParams<T>&,              \
                                                        const MaskMatrix&, ScoreScale,          \
                                                        AttentionCache<T>*);                    \
    template void crossmodal_attention_backward<T>(                                              \
        const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&, const AttentionMap<T>&,  \
        const AttentionCache<T>&, const Tensor<T>&, ScoreScale, AttentionParams<T>&, Tensor<T>&, \
        Tensor<T>&);                                                                             \
    template AttentionOutput<T> smca_block<T>(const Tensor<T>&, const Tensor<T>&,               \
                                              const AttentionParams<T>&, ScoreScale,            \
                                              AttentionCache<T>*);                              \
    template AttentionOutput<T> emca_block<T>(const Tensor<T>&, const Tensor<T>&,               \
                                              const AttentionParams<T>&, ScoreScale,            \
                                              AttentionCache<T>*);                              \
    template AttentionOutput<T> self_attention_block<T>(const Tensor<T>&,                       \
                                                        const AttentionParams<T>&,              \
                                                        const MaskMatrix&, ScoreScale,          \
                                                        AttentionCache<T>*);

IFECF_INSTANTIATE_ATTENTION(float)
IFECF_INSTANTIATE_ATTENTION(double)

}  // namespace ifecf

#pragma once

// Multi-head crossmodal attention with additive causal masks.
//
// Features are d x T (rows = feature dims, columns = time). For a query map Xq
// and key/value map Xkv:
//   Q = Wq Xq, K = Wk Xkv, V = Wv Xkv            (d_k x T each)
//   head h uses rows [h*d_k/H, (h+1)*d_k/H) of Q, K, V
//   A_h(i, j) = softmax_j(Q_h(:, i) . K_h(:, j) / s + M(i, j))
//   O_h(:, i) = sum_j A_h(i, j) V_h(:, j)
//   Y = Wo [O_1; ...; O_H]                        (d x T)
// with s = sqrt(d_k) by default or sqrt(d_k/H) in per-head mode.

#include <cstddef>
#include <string>

#include "ifecf/rng.hpp"
#include "ifecf/tensor.hpp"

namespace ifecf {

enum class MaskOrientation {
    speech_lower,  // -inf where key < query: speech frames only see same-or-later EEG
    eeg_upper,     // -inf where key > query: EEG frames only see same-or-earlier speech
    none,
};

enum class ScoreScale { full_dk, per_head };

std::string to_string(MaskOrientation o);
std::string to_string(ScoreScale s);
ScoreScale parse_score_scale(const std::string& s);

struct MaskMatrix {
    Tensor<double> entries;  // T x T, values in {0, -inf}
    MaskOrientation orientation = MaskOrientation::none;

    std::size_t frames() const { return entries.dim(0); }
};

MaskMatrix make_causal_mask(std::size_t frames, MaskOrientation orientation);

template <class T>
struct AttentionParams {
    Tensor<T> wq;  // d_k x d
    Tensor<T> wk;  // d_k x d
    Tensor<T> wv;  // d_k x d
    Tensor<T> wo;  // d x d_k
    std::size_t heads = 1;

    std::size_t model_dim() const { return wq.dim(1); }
    std::size_t key_dim() const { return wq.dim(0); }

    static AttentionParams zeros(std::size_t d, std::size_t d_k, std::size_t heads);
    // Uniform(+-1/sqrt(fan_in)) weights.
    static AttentionParams init(std::size_t d, std::size_t d_k, std::size_t heads, SplitMix64& rng);

    template <class F>
    void visit(F&& f) {
        f("wq", wq);
        f("wk", wk);
        f("wv", wv);
        f("wo", wo);
    }
    template <class F>
    void visit(F&& f) const {
        f("wq", wq);
        f("wk", wk);
        f("wv", wv);
        f("wo", wo);
    }
};

// Post-softmax weights, heads x T x T (row = query time, column = key time).
template <class T>
struct AttentionMap {
    Tensor<T> weights;
    bool masked = false;

    // Mean over heads, T x T.
    Tensor<T> head_average() const;
};

// Intermediates kept by the forward pass for the backward pass.
template <class T>
struct AttentionCache {
    Tensor<T> q, k, v;   // d_k x T
    Tensor<T> concat;    // d_k x T
};

template <class T>
struct AttentionOutput {
    Tensor<T> feature;  // d x T
    AttentionMap<T> map;
};

template <class T>
AttentionOutput<T> crossmodal_attention(const Tensor<T>& query_feat, const Tensor<T>& kv_feat,
                                        const AttentionParams<T>& params, const MaskMatrix& mask,
                                        ScoreScale scale = ScoreScale::full_dk,
                                        AttentionCache<T>* cache = nullptr);

// Accumulates parameter gradients into `grads`; overwrites grad_query and grad_kv.
// `map` and `cache` must come from the matching forward call.
template <class T>
void crossmodal_attention_backward(const Tensor<T>& query_feat, const Tensor<T>& kv_feat,
                                   const AttentionParams<T>& params, const AttentionMap<T>& map,
                                   const AttentionCache<T>& cache, const Tensor<T>& grad_output,
                                   ScoreScale scale, AttentionParams<T>& grads,
                                   Tensor<T>& grad_query, Tensor<T>& grad_kv);

// Speech queries attend EEG keys/values under the lower-triangular mask.
template <class T>
AttentionOutput<T> smca_block(const Tensor<T>& x_sd, const Tensor<T>& x_ed,
                              const AttentionParams<T>& params,
                              ScoreScale scale = ScoreScale::full_dk,
                              AttentionCache<T>* cache = nullptr);

// EEG queries attend speech keys/values under the upper-triangular mask.
template <class T>
AttentionOutput<T> emca_block(const Tensor<T>& x_ed, const Tensor<T>& x_sd,
                              const AttentionParams<T>& params,
                              ScoreScale scale = ScoreScale::full_dk,
                              AttentionCache<T>* cache = nullptr);

template <class T>
AttentionOutput<T> self_attention_block(const Tensor<T>& x, const AttentionParams<T>& params,
                                        const MaskMatrix& mask,
                                        ScoreScale scale = ScoreScale::full_dk,
                                        AttentionCache<T>* cache = nullptr);

}  // namespace ifecf

#pragma once

// Full match/mismatch model: independent features, crossmodal encoder,
// multi-channel fusion, predictor. Batched forward and reverse-mode backward.

#include <string>
#include <vector>

#include "ifecf/crossmodal.hpp"
#include "ifecf/fusion.hpp"
#include "ifecf/head.hpp"

namespace ifecf {

// ife_cf: crossmodal blocks with causal masks, fusion of SD, ED, ST, ET
// ife_sf: self-attention per modality (masks kept) instead of crossmodal
// no_d:   fusion of ST, ET only
// no_t:   fusion of SD, ED only; the attention blocks are unused
// no_m:   crossmodal blocks without masks
enum class Variant { ife_cf, ife_sf, no_d, no_t, no_m };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
std::size_t fusion_channels(Variant v);

struct ModelConfig {
    std::size_t d = 28;            // mel bands and EEG feature rows
    std::size_t frames = 192;      // T
    std::size_t eeg_channels = 64; // D
    std::size_t d_k = 28;
    std::size_t heads = 4;
    Variant variant = Variant::ife_cf;
    ScoreScale scale = ScoreScale::full_dk;
    bool batchnorm = true;
    // Bottleneck layout; the input size is derived from d, frames and variant.
    MfnConfig mfn;

    MfnConfig fusion_config() const;
    void validate() const;
};

template <class T>
struct ModelParams {
    ModelConfig config;
    Tensor<T> eeg_weight;  // d x D
    Tensor<T> eeg_bias;    // d
    AttentionParams<T> smca, emca;
    MobileFaceNet<T> mfn;
    PredictorParams<T> predictor;

    static ModelParams create(const ModelConfig& cfg);  // all zeros, BN identity
    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
    ModelParams zeros_like() const;

    std::size_t parameter_count() const;

    template <class F>
    void visit_params(F&& f) {
        f("eeg_conv.weight", eeg_weight);
        f("eeg_conv.bias", eeg_bias);
        smca.visit([&](const char* n, Tensor<T>& t) { f(std::string("smca.") + n, t); });
        emca.visit([&](const char* n, Tensor<T>& t) { f(std::string("emca.") + n, t); });
        mfn.visit_params([&](const std::string& n, Tensor<T>& t) { f("mfn." + n, t); });
        predictor.visit([&](const char* n, Tensor<T>& t) { f(std::string("predictor.") + n, t); });
    }
    template <class F>
    void visit_params(F&& f) const {
        const_cast<ModelParams*>(this)->visit_params(
            [&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
    }
    template <class F>
    void visit_buffers(F&& f) {
        mfn.visit_buffers([&](const std::string& n, Tensor<T>& t) { f("mfn." + n, t); });
    }
    template <class F>
    void visit_buffers(F&& f) const {
        const_cast<ModelParams*>(this)->visit_buffers(
            [&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
    }
};

// Model inputs for N pairs.
template <class T>
struct Batch {
    Tensor<T> speech;  // N x d x T standardized log-mel
    Tensor<T> eeg;     // N x D x T
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

template <class T>
struct SampleState {
    Tensor<T> speech, eeg;  // views of the batch row
    Tensor<T> x_ed;         // d x T
    AttentionOutput<T> st, et;
    AttentionCache<T> st_cache, et_cache;
};

template <class T>
struct ForwardState {
    std::vector<SampleState<T>> samples;
    Tensor<T> fused;  // N x C x d x T
    MfnCache<T> mfn;
    Tensor<T> embeddings;  // N x 128
    std::vector<Prediction<T>> predictions;
    Mode mode = Mode::eval;
};

// Runs the full pipeline. The returned state carries every intermediate
// (attention maps included) needed by model_backward.
template <class T>
ForwardState<T> model_forward(const ModelParams<T>& params, const Batch<T>& batch, Mode mode);

template <class T>
struct BackwardResult {
    ModelParams<T> grads;
    T loss = 0;             // mean cross-entropy
    Tensor<T> grad_speech;  // N x d x T
    Tensor<T> grad_eeg;     // N x D x T
};

// Mean cross-entropy over the batch and its exact gradient with respect to
// every parameter and both inputs.
template <class T>
BackwardResult<T> model_backward(const ModelParams<T>& params, const Batch<T>& batch,
                                 const ForwardState<T>& state);

template <class T>
T batch_loss(const ForwardState<T>& state, const std::vector<int>& labels);

}  // namespace ifecf

#include "ifecf/model.hpp"

#include <cmath>

#include "ifecf/features.hpp"

namespace ifecf {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::ife_cf: return "ife_cf";
        case Variant::ife_sf: return "ife_sf";
        case Variant::no_d: return "no_d";
        case Variant::no_t: return "no_t";
        case Variant::no_m: return "no_m";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::ife_cf, Variant::ife_sf, Variant::no_d, Variant::no_t, Variant::no_m}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + s + "' (expected ife_cf, ife_sf, no_d, no_t or no_m)");
}

std::size_t fusion_channels(Variant v) {
    return v == Variant::no_d || v == Variant::no_t ? 2 : 4;
}

MfnConfig ModelConfig::fusion_config() const {
    MfnConfig m = mfn;
    m.in_channels = fusion_channels(variant);
    m.height = d;
    m.width = frames;
    m.batchnorm = batchnorm;
    return m;
}

void ModelConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (d == 0 || frames == 0 || eeg_channels == 0) fail("d, T and D must be positive");
    if (d_k == 0 || heads == 0 || d_k % heads != 0) {
        fail("heads (" + std::to_string(heads) + ") must divide d_k (" + std::to_string(d_k) + ")");
    }
    if (mfn.groups.empty()) fail("fusion network needs at least one bottleneck group");
    for (const auto& g : mfn.groups) {
        if (g.expansion == 0 || g.out_channels == 0 || g.repeats == 0 || g.stride == 0) {
            fail("bottleneck groups need positive expansion, channels, repeats and stride");
        }
    }
}

template <class T>
ModelParams<T> ModelParams<T>::create(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.eeg_weight = Tensor<T>({cfg.d, cfg.eeg_channels});
    p.eeg_bias = Tensor<T>({cfg.d});
    p.smca = AttentionParams<T>::zeros(cfg.d, cfg.d_k, cfg.heads);
    p.emca = AttentionParams<T>::zeros(cfg.d, cfg.d_k, cfg.heads);
    p.mfn = MobileFaceNet<T>(cfg.fusion_config());
    p.predictor = PredictorParams<T>::zeros(cfg.mfn.embedding_dim);
    return p;
}

template <class T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = create(cfg);
    SplitMix64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.eeg_channels));
    for (auto& v : p.eeg_weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    p.smca = AttentionParams<T>::init(cfg.d, cfg.d_k, cfg.heads, rng);
    p.emca = AttentionParams<T>::init(cfg.d, cfg.d_k, cfg.heads, rng);
    p.mfn.init(rng);
    p.predictor = PredictorParams<T>::init(cfg.mfn.embedding_dim, rng);
    return p;
}

template <class T>
ModelParams<T> ModelParams<T>::zeros_like() const {
    ModelParams z = *this;
    z.visit_params([](const std::string&, Tensor<T>& t) { t.set_zero(); });
    z.visit_buffers([](const std::string&, Tensor<T>& t) { t.set_zero(); });
    return z;
}

template <class T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    visit_params([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
}

namespace {

template <class T>
Tensor<T> batch_row(const Tensor<T>& batch, std::size_t n) {
    const std::size_t rows = batch.dim(1), cols = batch.dim(2);
    const T* src = batch.data() + n * rows * cols;
    return Tensor<T>({rows, cols}, std::vector<T>(src, src + rows * cols));
}

template <class T>
void write_channel(Tensor<T>& fused, std::size_t n, std::size_t c, const Tensor<T>& map) {
    const std::size_t channels = fused.dim(1);
    const std::size_t plane = map.size();
    std::copy(map.values().begin(), map.values().end(),
              fused.data() + (n * channels + c) * plane);
}

template <class T>
Tensor<T> read_channel(const Tensor<T>& fused, std::size_t n, std::size_t c, const Shape& shape) {
    const std::size_t channels = fused.dim(1);
    const std::size_t plane = shape_numel(shape);
    const T* src = fused.data() + (n * channels + c) * plane;
    return Tensor<T>(shape, std::vector<T>(src, src + plane));
}

bool uses_attention(Variant v) { return v != Variant::no_t; }

template <class T>
void attend(const ModelParams<T>& p, SampleState<T>& s) {
    const auto& cfg = p.config;
    switch (cfg.variant) {
        case Variant::ife_cf:
        case Variant::no_d:
            s.st = smca_block(s.speech, s.x_ed, p.smca, cfg.scale, &s.st_cache);
            s.et = emca_block(s.x_ed, s.speech, p.emca, cfg.scale, &s.et_cache);
            break;
        case Variant::no_m: {
            const MaskMatrix none = make_causal_mask(cfg.frames, MaskOrientation::none);
            s.st = crossmodal_attention(s.speech, s.x_ed, p.smca, none, cfg.scale, &s.st_cache);
            s.et = crossmodal_attention(s.x_ed, s.speech, p.emca, none, cfg.scale, &s.et_cache);
            break;
        }
        case Variant::ife_sf:
            s.st = self_attention_block(s.speech, p.smca,
                                        make_causal_mask(cfg.frames, MaskOrientation::speech_lower),
                                        cfg.scale, &s.st_cache);
            s.et = self_attention_block(s.x_ed, p.emca,
                                        make_causal_mask(cfg.frames, MaskOrientation::eeg_upper),
                                        cfg.scale, &s.et_cache);
            break;
        case Variant::no_t:
            break;
    }
}

}  // namespace

template <class T>
ForwardState<T> model_forward(const ModelParams<T>& params, const Batch<T>& batch, Mode mode) {
    const auto& cfg = params.config;
    const std::size_t n = batch.size();
    if (n == 0) throw InputError("model_forward: empty batch");
    require_shape(batch.speech, {n, cfg.d, cfg.frames}, "model_forward speech");
    require_shape(batch.eeg, {n, cfg.eeg_channels, cfg.frames}, "model_forward eeg");

    ForwardState<T> st;
    st.mode = mode;
    st.samples.resize(n);
    const std::size_t channels = fusion_channels(cfg.variant);
    st.fused = Tensor<T>({n, channels, cfg.d, cfg.frames});

    // Exceptions must not escape the parallel region; capture the first one.
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            SampleState<T>& s = st.samples[i];
            s.speech = batch_row(batch.speech, i);
            s.eeg = batch_row(batch.eeg, i);
            s.x_ed = eeg_spatial_conv(s.eeg, params.eeg_weight, params.eeg_bias);
            attend(params, s);
            switch (cfg.variant) {
                case Variant::no_t:
                    write_channel(st.fused, i, 0, s.speech);
                    write_channel(st.fused, i, 1, s.x_ed);
                    break;
                case Variant::no_d:
                    write_channel(st.fused, i, 0, s.st.feature);
                    write_channel(st.fused, i, 1, s.et.feature);
                    break;
                default:
                    write_channel(st.fused, i, 0, s.speech);
                    write_channel(st.fused, i, 1, s.x_ed);
                    write_channel(st.fused, i, 2, s.st.feature);
                    write_channel(st.fused, i, 3, s.et.feature);
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    st.embeddings = params.mfn.forward(st.fused, mode, &st.mfn);
    st.predictions = predict_batch(st.embeddings, params.predictor);
    return st;
}

template <class T>
T batch_loss(const ForwardState<T>& state, const std::vector<int>& labels) {
    if (labels.size() != state.predictions.size()) throw InputError("batch_loss: label count mismatch");
    T total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) total += cross_entropy_loss(state.predictions[i], labels[i]);
    return total / static_cast<T>(labels.size());
}

template <class T>
BackwardResult<T> model_backward(const ModelParams<T>& params, const Batch<T>& batch,
                                 const ForwardState<T>& state) {
    const auto& cfg = params.config;
    const std::size_t n = batch.size();
    if (state.predictions.size() != n) throw InputError("model_backward: state does not match batch");

    BackwardResult<T> r;
    r.grads = params.zeros_like();
    r.loss = batch_loss(state, batch.labels);

    const T weight = T{1} / static_cast<T>(n);
    const std::size_t emb_dim = state.embeddings.dim(1);
    Tensor<T> grad_emb({n, emb_dim});
    for (std::size_t i = 0; i < n; ++i) {
        const auto gl = cross_entropy_logit_grad(state.predictions[i], batch.labels[i]);
        const auto ge = predictor_backward(state.embeddings, i, params.predictor, gl, weight,
                                           r.grads.predictor);
        std::copy(ge.begin(), ge.end(), grad_emb.data() + i * emb_dim);
    }

    const Tensor<T> grad_fused = params.mfn.backward(state.fused, state.mfn, grad_emb, state.mode, r.grads.mfn);

    struct SampleGrads {
        Tensor<T> eeg_weight, eeg_bias;
        AttentionParams<T> smca, emca;
        Tensor<T> grad_speech, grad_eeg;
    };
    std::vector<SampleGrads> per(n);
    std::vector<std::exception_ptr> errors(n);
    const Shape plane{cfg.d, cfg.frames};
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            const SampleState<T>& s = state.samples[i];
            SampleGrads& g = per[i];
            g.eeg_weight = Tensor<T>(params.eeg_weight.shape());
            g.eeg_bias = Tensor<T>(params.eeg_bias.shape());
            g.smca = AttentionParams<T>::zeros(cfg.d, cfg.d_k, cfg.heads);
            g.emca = AttentionParams<T>::zeros(cfg.d, cfg.d_k, cfg.heads);
            Tensor<T> g_sd(plane), g_ed(plane);
            if (cfg.variant != Variant::no_d) {
                g_sd = read_channel(grad_fused, i, 0, plane);
                g_ed = read_channel(grad_fused, i, 1, plane);
            }
            if (uses_attention(cfg.variant)) {
                const std::size_t base = cfg.variant == Variant::no_d ? 0 : 2;
                const Tensor<T> g_st = read_channel(grad_fused, i, base, plane);
                const Tensor<T> g_et = read_channel(grad_fused, i, base + 1, plane);
                Tensor<T> gq, gkv;
                crossmodal_attention_backward(s.speech, cfg.variant == Variant::ife_sf ? s.speech : s.x_ed,
                                              params.smca, s.st.map, s.st_cache, g_st, cfg.scale,
                                              g.smca, gq, gkv);
                add_inplace(g_sd, gq);
                add_inplace(cfg.variant == Variant::ife_sf ? g_sd : g_ed, gkv);
                crossmodal_attention_backward(s.x_ed, cfg.variant == Variant::ife_sf ? s.x_ed : s.speech,
                                              params.emca, s.et.map, s.et_cache, g_et, cfg.scale,
                                              g.emca, gq, gkv);
                add_inplace(g_ed, gq);
                add_inplace(cfg.variant == Variant::ife_sf ? g_ed : g_sd, gkv);
            }
            Tensor<T> g_eeg;
            eeg_spatial_conv_backward(s.eeg, params.eeg_weight, g_ed, g.eeg_weight, g.eeg_bias, &g_eeg);
            g.grad_speech = std::move(g_sd);
            g.grad_eeg = std::move(g_eeg);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    r.grad_speech = Tensor<T>({n, cfg.d, cfg.frames});
    r.grad_eeg = Tensor<T>({n, cfg.eeg_channels, cfg.frames});
    for (std::size_t i = 0; i < n; ++i) {  // fixed reduction order
        const SampleGrads& g = per[i];
        add_inplace(r.grads.eeg_weight, g.eeg_weight);
        add_inplace(r.grads.eeg_bias, g.eeg_bias);
        add_inplace(r.grads.smca.wq, g.smca.wq);
        add_inplace(r.grads.smca.wk, g.smca.wk);
        add_inplace(r.grads.smca.wv, g.smca.wv);
        add_inplace(r.grads.smca.wo, g.smca.wo);
        add_inplace(r.grads.emca.wq, g.emca.wq);
        add_inplace(r.grads.emca.wk, g.emca.wk);
        add_inplace(r.grads.emca.wv, g.emca.wv);
        add_inplace(r.grads.emca.wo, g.emca.wo);
        std::copy(g.grad_speech.values().begin(), g.grad_speech.values().end(),
                  r.grad_speech.data() + i * g.grad_speech.size());
        std::copy(g.grad_eeg.values().begin(), g.grad_eeg.values().end(),
                  r.grad_eeg.data() + i * g.grad_eeg.size());
    }
    r.grads.visit_params([](const std::string& name, const Tensor<T>& t) {
        if (!t.all_finite()) throw NumericError("model_backward: non-finite gradient in " + name);
    });
    return r;
}

#define IFECF_INSTANTIATE_MODEL(T)                                                              \
    template struct ModelParams<T>;                                                             \
    template ForwardState<T> model_forward<T>(const ModelParams<T>&, const Batch<T>&, Mode);    \
    template T batch_loss<T>(const ForwardState<T>&, const std::vector<int>&);                  \
    template BackwardResult<T> model_backward<T>(const ModelParams<T>&, const Batch<T>&,        \
                                                 const ForwardState<T>&);

IFECF_INSTANTIATE_MODEL(float)
IFECF_INSTANTIATE_MODEL(double)

}  // namespace ifecf

#include "ifecf/head.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

namespace ifecf {

template <class T>
PredictorParams<T> PredictorParams<T>::zeros(std::size_t embedding_dim) {
    return {Tensor<T>({2, embedding_dim}), Tensor<T>({2})};
}

template <class T>
PredictorParams<T> PredictorParams<T>::init(std::size_t embedding_dim, SplitMix64& rng) {
    PredictorParams p = zeros(embedding_dim);
    // Small weights keep the initial prediction close to uniform.
    const double bound = 0.1 / std::sqrt(static_cast<double>(embedding_dim));
    for (auto& v : p.w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return p;
}

template <class T>
std::array<T, 2> softmax2(const std::array<T, 2>& logits) {
    const T m = std::max(logits[0], logits[1]);
    const T e0 = std::exp(logits[0] - m);
    const T e1 = std::exp(logits[1] - m);
    const T z = e0 + e1;
    return {e0 / z, e1 / z};
}

namespace {

template <class T>
Prediction<T> predict_row(const T* emb, std::size_t dim, const PredictorParams<T>& params) {
    Prediction<T> p;
    for (std::size_t k = 0; k < 2; ++k) {
        T acc = params.b[k];
        const T* w = params.w.data() + k * dim;
        for (std::size_t i = 0; i < dim; ++i) acc += w[i] * emb[i];
        p.logits[k] = acc;
    }
    if (!std::isfinite(p.logits[0]) || !std::isfinite(p.logits[1])) {
        throw NumericError("predict: non-finite logits");
    }
    p.probs = softmax2(p.logits);
    return p;
}

}  // namespace

template <class T>
Prediction<T> predict(const Tensor<T>& embedding, const PredictorParams<T>& params) {
    const std::size_t dim = params.w.dim(1);
    if (embedding.size() != dim) {
        throw InputError("predict: embedding has " + std::to_string(embedding.size()) +
                         " values, predictor expects " + std::to_string(dim));
    }
    if (!embedding.all_finite()) throw NumericError("predict: non-finite embedding");
    return predict_row(embedding.data(), dim, params);
}

template <class T>
std::vector<Prediction<T>> predict_batch(const Tensor<T>& embeddings,
                                         const PredictorParams<T>& params) {
    const std::size_t dim = params.w.dim(1);
    if (embeddings.rank() != 2 || embeddings.dim(1) != dim) {
        throw InputError("predict_batch: embeddings " + shape_str(embeddings.shape()) +
                         " do not match predictor width " + std::to_string(dim));
    }
    if (!embeddings.all_finite()) throw NumericError("predict: non-finite embedding");
    std::vector<Prediction<T>> out;
    out.reserve(embeddings.dim(0));
    for (std::size_t n = 0; n < embeddings.dim(0); ++n) {
        out.push_back(predict_row(embeddings.data() + n * dim, dim, params));
    }
    return out;
}

template <class T>
T cross_entropy_loss(const Prediction<T>& pred, int label) {
    if (label != 0 && label != 1) throw InputError("cross_entropy_loss: label must be 0 or 1");
    constexpr T floor = static_cast<T>(1e-12);
    T p = pred.probs[static_cast<std::size_t>(label)];
    if (p < floor) {
        std::cerr << "warning: cross_entropy_loss clamped probability " << p << " to 1e-12\n";
        p = floor;
    }
    return -std::log(p);
}

template <class T>
std::array<T, 2> cross_entropy_logit_grad(const Prediction<T>& pred, int label) {
    if (label != 0 && label != 1) throw InputError("cross_entropy_logit_grad: label must be 0 or 1");
    std::array<T, 2> g = pred.probs;
    g[static_cast<std::size_t>(label)] -= T{1};
    return g;
}

template <class T>
std::vector<T> predictor_backward(const Tensor<T>& embeddings, std::size_t row,
                                  const PredictorParams<T>& params,
                                  const std::array<T, 2>& grad_logits, T weight,
                                  PredictorParams<T>& grads) {
    const std::size_t dim = params.w.dim(1);
    const T* emb = embeddings.data() + row * dim;
    std::vector<T> grad_emb(dim, T{0});
    for (std::size_t k = 0; k < 2; ++k) {
        const T g = grad_logits[k] * weight;
        grads.b[k] += g;
        T* gw = grads.w.data() + k * dim;
        const T* w = params.w.data() + k * dim;
        for (std::size_t i = 0; i < dim; ++i) {
            gw[i] += g * emb[i];
            grad_emb[i] += g * w[i];
        }
    }
    return grad_emb;
}

double subject_accuracy(const std::vector<std::pair<int, int>>& results) {
    if (results.empty()) throw InputError("subject_accuracy: empty result list");
    std::size_t correct = 0;
    for (const auto& [pred, truth] : results) correct += pred == truth ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(results.size());
}

EvalReport challenge_score(const std::vector<double>& held_out_subject_accs,
                           const std::vector<double>& held_out_story_accs) {
    if (held_out_subject_accs.empty()) throw InputError("challenge_score: no held-out subject accuracies");
    if (held_out_story_accs.empty()) throw InputError("challenge_score: no held-out story accuracies");
    const auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    EvalReport r;
    r.s1 = mean(held_out_subject_accs);
    r.s2 = mean(held_out_story_accs);
    r.score = (2.0 / 3.0) * r.s2 + (1.0 / 3.0) * r.s1;
    return r;
}

#define IFECF_INSTANTIATE_HEAD(T)                                                                \
    template struct PredictorParams<T>;                                                          \
    template std::array<T, 2> softmax2<T>(const std::array<T, 2>&);                              \
    template Prediction<T> predict<T>(const Tensor<T>&, const PredictorParams<T>&);              \
    template std::vector<Prediction<T>> predict_batch<T>(const Tensor<T>&,                       \
                                                         const PredictorParams<T>&);             \
    template T cross_entropy_loss<T>(const Prediction<T>&, int);                                 \
    template std::array<T, 2> cross_entropy_logit_grad<T>(const Prediction<T>&, int);           \
    template std::vector<T> predictor_backward<T>(const Tensor<T>&, std::size_t,                 \
                                                  const PredictorParams<T>&,                     \
                                                  const std::array<T, 2>&, T, PredictorParams<T>&);

IFECF_INSTANTIATE_HEAD(float)
IFECF_INSTANTIATE_HEAD(double)

}  // namespace ifecf

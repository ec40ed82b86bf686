#pragma once

// Match/mismatch predictor, loss, and challenge metrics.
//
// Label convention: index 1 = match, index 0 = mismatch.

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ifecf/rng.hpp"
#include "ifecf/tensor.hpp"

namespace ifecf {

inline constexpr int kMatch = 1;
inline constexpr int kMismatch = 0;

template <class T>
struct PredictorParams {
    Tensor<T> w;  // 2 x embedding_dim
    Tensor<T> b;  // 2

    static PredictorParams zeros(std::size_t embedding_dim);
    // Uniform(+-0.1/sqrt(dim)) weights, zero bias.
    static PredictorParams init(std::size_t embedding_dim, SplitMix64& rng);

    template <class F>
    void visit(F&& f) {
        f("w", w);
        f("b", b);
    }
    template <class F>
    void visit(F&& f) const {
        f("w", w);
        f("b", b);
    }
};

template <class T>
struct Prediction {
    std::array<T, 2> logits{};
    std::array<T, 2> probs{};

    int label() const { return probs[1] > probs[0] ? kMatch : kMismatch; }
};

// Max-subtracted softmax of a 2-vector.
template <class T>
std::array<T, 2> softmax2(const std::array<T, 2>& logits);

template <class T>
Prediction<T> predict(const Tensor<T>& embedding, const PredictorParams<T>& params);

// Row-wise predict over an N x embedding_dim batch.
template <class T>
std::vector<Prediction<T>> predict_batch(const Tensor<T>& embeddings,
                                         const PredictorParams<T>& params);

// -log(max(probs[label], 1e-12)); warns on stderr when the clamp engages.
template <class T>
T cross_entropy_loss(const Prediction<T>& pred, int label);

// d loss / d logits = probs - onehot(label).
template <class T>
std::array<T, 2> cross_entropy_logit_grad(const Prediction<T>& pred, int label);

// Accumulates predictor gradients for one sample; returns d loss / d embedding
// (scaled by `weight`, e.g. 1/batch for a mean loss).
template <class T>
std::vector<T> predictor_backward(const Tensor<T>& embeddings, std::size_t row,
                                  const PredictorParams<T>& params,
                                  const std::array<T, 2>& grad_logits, T weight,
                                  PredictorParams<T>& grads);

// Fraction of (predicted, true) pairs that agree.
double subject_accuracy(const std::vector<std::pair<int, int>>& results);

struct EvalReport {
    std::map<std::string, double> per_subject;  // subject id -> accuracy
    double s1 = 0.0;  // mean over held-out subjects
    double s2 = 0.0;  // mean over held-out stories
    double score = 0.0;
};

// score = (2/3) * stories_mean + (1/3) * subjects_mean.
EvalReport challenge_score(const std::vector<double>& held_out_subject_accs,
                           const std::vector<double>& held_out_story_accs);

}  // namespace ifecf

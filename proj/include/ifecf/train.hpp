#pragma once

// Optimization, training loop, evaluation and finite-difference gradient checks.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ifecf/datagen.hpp"
#include "ifecf/features.hpp"
#include "ifecf/model.hpp"

namespace ifecf {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct OptimState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m, v;  // in parameter visit order
};

template <class T>
OptimState<T> make_optim_state(const ModelParams<T>& params, const AdamConfig& cfg);

// One bias-corrected Adam update of `param` given its moments; `step` is the
// 1-based count after increment.
template <class T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, const AdamConfig& cfg);

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state);

// ---------------------------------------------------------------------------
// Dataset

struct Example {
    Tensor<float> speech;  // d x T standardized log-mel
    Tensor<float> eeg;     // D x T
    int label = 1;
    std::size_t subject = 0;
    std::size_t trial = 0;
    Split split = Split::train;
};

// Log-mel + per-band standardization, as fed to the model.
Tensor<double> speech_feature(const SpeechWaveform& wav, const MelSpectrogram& mel);

Example make_example(const TrialPair& pair, Split split, const MelSpectrogram& mel);

// All pairs of a synthetic config, featurized, with their splits.
std::vector<Example> synthesize_examples(const SynthConfig& cfg, const MelConfig& mel_cfg);

template <class T>
Batch<T> make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices);

std::vector<std::size_t> indices_of(const std::vector<Example>& examples, Split split);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    AdamConfig adam;
    std::uint64_t seed = 1;
    // Ends training after the first epoch whose validation accuracy reaches this value.
    std::optional<double> stop_at_val_acc;
};

struct LogRecord {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // 1-based optimizer step
    double loss = 0.0;
    std::optional<double> val_acc;  // set on the last step of an epoch
};

struct TrainResult {
    ModelParams<float> best;   // parameters at the best validation epoch
    ModelParams<float> final;
    OptimState<float> best_optim;  // optimizer state when `best` was recorded
    OptimState<float> optim;       // state after the last step
    std::vector<LogRecord> log;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
};

// Called after each optimizer step and after each epoch's validation.
using LogSink = std::function<void(const LogRecord&)>;

// Seeded epoch-wise shuffling of the train split, mean-loss mini-batches,
// validation accuracy after every epoch, best-on-validation selection. When
// the validation split is empty, the final epoch is selected.
TrainResult train_loop(const std::vector<Example>& examples, ModelParams<float> params,
                       const TrainConfig& cfg, const LogSink& sink = {});

// ---------------------------------------------------------------------------
// Evaluation

// Predicted labels for the given examples, eval mode.
std::vector<int> predict_labels(const ModelParams<float>& params, const std::vector<Example>& examples,
                                const std::vector<std::size_t>& indices, std::size_t batch_size = 64);

double accuracy(const std::vector<Example>& examples, const std::vector<std::size_t>& indices,
                const std::vector<int>& predicted);

// Per-subject accuracy on the held-out splits combined into the challenge score.
// `predicted` is indexed like `examples`; entries outside the held-out splits are ignored.
EvalReport evaluate_predictions(const std::vector<Example>& examples, const std::vector<int>& predicted);

EvalReport evaluate(const ModelParams<float>& params, const std::vector<Example>& examples,
                    std::size_t batch_size = 64);

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckConfig {
    double step = 1e-5;
    double tol = 1e-4;
    std::size_t samples_per_tensor = 6;
    std::uint64_t seed = 7;
    Variant variant = Variant::ife_cf;
    // Parameter-name prefixes to check; empty = everything. "input.speech" and
    // "input.eeg" select the input gradients.
    std::vector<std::string> groups;
};

struct GradcheckGroup {
    std::string name;
    std::size_t checked = 0;
    std::size_t refined = 0;  // entries re-measured with a smaller step near a PReLU kink
    double worst_rel_error = 0.0;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    bool pass = true;
};

// The small double-precision model used for finite-difference checks:
// d=4, T=8, D=4, h=2, batch norm off.
ModelConfig gradcheck_model_config(Variant variant);

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

GradcheckReport gradcheck(const GradcheckConfig& cfg);

// Maps a module name (features, crossmodal, fusion, head) to parameter prefixes.
std::vector<std::string> gradcheck_groups_for_module(const std::string& module);

}  // namespace ifecf

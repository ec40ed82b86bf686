#include "ifecf/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ifecf {

// ---------------------------------------------------------------------------
// Adam

template <class T>
OptimState<T> make_optim_state(const ModelParams<T>& params, const AdamConfig& cfg) {
    OptimState<T> s;
    s.config = cfg;
    params.visit_params([&](const std::string&, const Tensor<T>& t) {
        s.m.emplace_back(t.shape());
        s.v.emplace_back(t.shape());
    });
    return s;
}

template <class T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t step, const AdamConfig& cfg) {
    if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
        throw InputError("adam: shape mismatch between parameter " + shape_str(param.shape()) +
                         " and gradient/moments");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
        param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
    }
}

template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state) {
    std::vector<Tensor<T>*> p;
    std::vector<const Tensor<T>*> g;
    params.visit_params([&](const std::string&, Tensor<T>& t) { p.push_back(&t); });
    grads.visit_params([&](const std::string&, const Tensor<T>& t) { g.push_back(&t); });
    if (p.size() != g.size() || p.size() != state.m.size()) {
        throw InputError("adam: parameter, gradient and state layouts differ");
    }
    ++state.step;
    for (std::size_t i = 0; i < p.size(); ++i) {
        adam_update(*p[i], *g[i], state.m[i], state.v[i], state.step, state.config);
    }
}

// ---------------------------------------------------------------------------
// Dataset

Tensor<double> speech_feature(const SpeechWaveform& wav, const MelSpectrogram& mel) {
    Tensor<double> f = mel(wav);
    standardize_rows(f);
    return f;
}

Example make_example(const TrialPair& pair, Split split, const MelSpectrogram& mel) {
    Example e;
    e.speech = speech_feature(pair.speech, mel).cast<float>();
    e.eeg = pair.eeg.data.cast<float>();
    e.label = pair.label;
    e.subject = pair.subject_id;
    e.trial = pair.trial_id;
    e.split = split;
    return e;
}

std::vector<Example> synthesize_examples(const SynthConfig& cfg, const MelConfig& mel_cfg) {
    cfg.validate();
    if (mel_cfg.frames != cfg.frames || mel_cfg.hop != cfg.hop ||
        mel_cfg.sample_rate_hz != cfg.sample_rate_hz) {
        throw ConfigError("mel and synthetic configs disagree on frames, hop or sample rate");
    }
    const MelSpectrogram mel(mel_cfg);
    const std::vector<TrialRef> trials = all_trials(cfg);
    std::vector<Example> out(2 * trials.size());
    // One trial at a time keeps only two waveforms alive per worker.
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto pairs = make_pairs({trials[i]}, cfg);
        const Split split = split_of(cfg, trials[i].subject, trials[i].trial);
        out[2 * i] = make_example(pairs[0], split, mel);
        out[2 * i + 1] = make_example(pairs[1], split, mel);
    }
    return out;
}

template <class T>
Batch<T> make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InputError("make_batch: no examples selected");
    const Example& first = examples.at(indices.front());
    const Shape ss = first.speech.shape();
    const Shape es = first.eeg.shape();
    const std::size_t n = indices.size();
    Batch<T> b;
    b.speech = Tensor<T>({n, ss[0], ss[1]});
    b.eeg = Tensor<T>({n, es[0], es[1]});
    for (std::size_t i = 0; i < n; ++i) {
        const Example& e = examples.at(indices[i]);
        require_shape(e.speech, ss, "make_batch speech");
        require_shape(e.eeg, es, "make_batch eeg");
        std::copy(e.speech.values().begin(), e.speech.values().end(), b.speech.data() + i * e.speech.size());
        std::copy(e.eeg.values().begin(), e.eeg.values().end(), b.eeg.data() + i * e.eeg.size());
        b.labels.push_back(e.label);
    }
    return b;
}

std::vector<std::size_t> indices_of(const std::vector<Example>& examples, Split split) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (examples[i].split == split) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_loop(const std::vector<Example>& examples, ModelParams<float> params,
                       const TrainConfig& cfg, const LogSink& sink) {
    const std::vector<std::size_t> train_idx = indices_of(examples, Split::train);
    const std::vector<std::size_t> val_idx = indices_of(examples, Split::val);
    if (train_idx.empty()) throw InputError("train_loop: the train split is empty");
    if (cfg.batch_size == 0) throw ConfigError("train_loop: batch size must be positive");
    if (cfg.epochs == 0) throw ConfigError("train_loop: epoch count must be positive");

    TrainResult result;
    result.optim = make_optim_state(params, cfg.adam);
    SplitMix64 rng(hash_key(cfg.seed, 0x73687566));
    std::vector<std::size_t> order = train_idx;
    bool have_best = false;

    bool stop = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            const Batch<float> batch = make_batch<float>(examples, idx);
            const ForwardState<float> state = model_forward(params, batch, Mode::train);
            const BackwardResult<float> back = model_backward(params, batch, state);
            adam_step(params, back.grads, result.optim);
            params.mfn.update_running_stats(state.mfn, batch.size());

            LogRecord rec{epoch, static_cast<std::size_t>(result.optim.step), back.loss, std::nullopt};
            if (end == order.size() && !val_idx.empty()) {
                const double acc = accuracy(examples, val_idx, predict_labels(params, examples, val_idx, cfg.batch_size));
                rec.val_acc = acc;
                if (!have_best || acc > result.best_val_acc) {
                    result.best = params;
                    result.best_optim = result.optim;
                    result.best_val_acc = acc;
                    result.best_epoch = epoch;
                    have_best = true;
                }
                stop = cfg.stop_at_val_acc && acc >= *cfg.stop_at_val_acc;
            }
            result.log.push_back(rec);
            if (sink) sink(rec);
        }
    }
    result.final = params;
    if (!have_best) {
        result.best = params;
        result.best_optim = result.optim;
        result.best_epoch = result.log.empty() ? 0 : result.log.back().epoch;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<int> predict_labels(const ModelParams<float>& params, const std::vector<Example>& examples,
                                const std::vector<std::size_t>& indices, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t end = std::min(indices.size(), start + batch_size);
        const std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                           indices.begin() + static_cast<std::ptrdiff_t>(end));
        const ForwardState<float> st = model_forward(params, make_batch<float>(examples, idx), Mode::eval);
        for (const auto& p : st.predictions) out.push_back(p.label());
    }
    return out;
}

double accuracy(const std::vector<Example>& examples, const std::vector<std::size_t>& indices,
                const std::vector<int>& predicted) {
    if (indices.size() != predicted.size()) throw InputError("accuracy: prediction count mismatch");
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i < indices.size(); ++i) pairs.emplace_back(predicted[i], examples[indices[i]].label);
    return subject_accuracy(pairs);
}

EvalReport evaluate_predictions(const std::vector<Example>& examples, const std::vector<int>& predicted) {
    if (predicted.size() != examples.size()) throw InputError("evaluate: prediction count mismatch");
    std::map<std::size_t, std::vector<std::pair<int, int>>> subjects, stories;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Example& e = examples[i];
        if (e.split == Split::held_out_subjects) subjects[e.subject].emplace_back(predicted[i], e.label);
        if (e.split == Split::held_out_stories) stories[e.subject].emplace_back(predicted[i], e.label);
    }
    if (subjects.empty()) throw InputError("evaluate: the held_out_subjects split is empty");
    if (stories.empty()) throw InputError("evaluate: the held_out_stories split is empty");
    std::vector<double> subject_accs, story_accs;
    std::map<std::string, double> per_subject;
    for (const auto& [s, r] : subjects) {
        subject_accs.push_back(subject_accuracy(r));
        per_subject[std::to_string(s)] = subject_accs.back();
    }
    for (const auto& [s, r] : stories) {
        story_accs.push_back(subject_accuracy(r));
        per_subject[std::to_string(s)] = story_accs.back();
    }
    EvalReport report = challenge_score(subject_accs, story_accs);
    report.per_subject = std::move(per_subject);
    return report;
}

EvalReport evaluate(const ModelParams<float>& params, const std::vector<Example>& examples,
                    std::size_t batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].split == Split::held_out_subjects || examples[i].split == Split::held_out_stories) {
            idx.push_back(i);
        }
    }
    if (idx.empty()) throw InputError("evaluate: no held-out examples");
    const std::vector<int> labels = predict_labels(params, examples, idx, batch_size);
    std::vector<int> predicted(examples.size(), -1);
    for (std::size_t i = 0; i < idx.size(); ++i) predicted[idx[i]] = labels[i];
    return evaluate_predictions(examples, predicted);
}

// ---------------------------------------------------------------------------
// Gradient check

ModelConfig gradcheck_model_config(Variant variant) {
    ModelConfig cfg;
    cfg.d = 4;
    cfg.frames = 8;
    cfg.eeg_channels = 4;
    cfg.d_k = 4;
    cfg.heads = 2;
    cfg.variant = variant;
    cfg.batchnorm = false;
    return cfg;
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

std::vector<std::string> gradcheck_groups_for_module(const std::string& module) {
    if (module == "all") return {};
    if (module == "features") return {"eeg_conv.", "input."};
    if (module == "crossmodal") return {"smca.", "emca."};
    if (module == "fusion") return {"mfn."};
    if (module == "head") return {"predictor."};
    throw ConfigError("unknown gradcheck module '" + module +
                      "' (expected all, features, crossmodal, fusion or head)");
}

namespace {

bool selected(const std::vector<std::string>& groups, const std::string& name) {
    if (groups.empty()) return true;
    return std::any_of(groups.begin(), groups.end(),
                       [&](const std::string& g) { return name.rfind(g, 0) == 0; });
}

std::vector<std::size_t> sample_entries(std::size_t size, std::size_t count, SplitMix64& rng) {
    if (size <= count) {
        std::vector<std::size_t> all(size);
        for (std::size_t i = 0; i < size; ++i) all[i] = i;
        return all;
    }
    std::set<std::size_t> picked;
    while (picked.size() < count) picked.insert(rng.below(size));
    return {picked.begin(), picked.end()};
}

}  // namespace

GradcheckReport gradcheck(const GradcheckConfig& cfg) {
    const ModelConfig mcfg = gradcheck_model_config(cfg.variant);
    ModelParams<double> params = ModelParams<double>::init(mcfg, cfg.seed);
    SplitMix64 rng(hash_key(cfg.seed, 0x6763));

    Batch<double> batch;
    batch.speech = Tensor<double>({2, mcfg.d, mcfg.frames});
    batch.eeg = Tensor<double>({2, mcfg.eeg_channels, mcfg.frames});
    for (auto& v : batch.speech.values()) v = rng.normal();
    for (auto& v : batch.eeg.values()) v = rng.normal();
    batch.labels = {kMatch, kMismatch};

    const ForwardState<double> state = model_forward(params, batch, Mode::train);
    const BackwardResult<double> back = model_backward(params, batch, state);
    const auto loss = [&] { return batch_loss(model_forward(params, batch, Mode::train), batch.labels); };

    const double base = loss();
    GradcheckReport report;
    const auto check = [&](const std::string& name, Tensor<double>& value, const Tensor<double>& analytic) {
        if (!selected(cfg.groups, name)) return;
        GradcheckGroup group{name, 0, 0, 0.0, true};
        for (std::size_t i : sample_entries(value.size(), cfg.samples_per_tensor, rng)) {
            const double orig = value[i];
            double numeric = 0.0;
            // A kink inside [-h, h] shows up as disagreeing one-sided slopes; shrink h until they agree.
            for (double h = cfg.step; h >= cfg.step * 1e-3; h /= 10.0) {
                value[i] = orig + h;
                const double up = loss();
                value[i] = orig - h;
                const double down = loss();
                value[i] = orig;
                numeric = (up - down) / (2.0 * h);
                const double forward = (up - base) / h, backward = (base - down) / h;
                if (std::abs(forward - backward) <= 1e-2 * std::max({std::abs(forward), std::abs(backward), 1e-4})) break;
                if (h == cfg.step) ++group.refined;
            }
            group.worst_rel_error = std::max(group.worst_rel_error, relative_error(analytic[i], numeric));
            ++group.checked;
        }
        group.pass = group.worst_rel_error < cfg.tol;
        report.pass = report.pass && group.pass;
        report.groups.push_back(group);
    };

    std::vector<const Tensor<double>*> grads;
    back.grads.visit_params([&](const std::string&, const Tensor<double>& t) { grads.push_back(&t); });
    std::size_t k = 0;
    params.visit_params([&](const std::string& name, Tensor<double>& t) { check(name, t, *grads[k++]); });
    check("input.speech", batch.speech, back.grad_speech);
    check("input.eeg", batch.eeg, back.grad_eeg);
    return report;
}

#define IFECF_INSTANTIATE_TRAIN(T)                                                                 \
    template OptimState<T> make_optim_state<T>(const ModelParams<T>&, const AdamConfig&);          \
    template void adam_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,             \
                                 std::uint64_t, const AdamConfig&);                                \
    template void adam_step<T>(ModelParams<T>&, const ModelParams<T>&, OptimState<T>&);            \
    template Batch<T> make_batch<T>(const std::vector<Example>&, const std::vector<std::size_t>&);

IFECF_INSTANTIATE_TRAIN(float)
IFECF_INSTANTIATE_TRAIN(double)

}  // namespace ifecf

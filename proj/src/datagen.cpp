#include "ifecf/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "ifecf/errors.hpp"
#include "ifecf/rng.hpp"

namespace ifecf {
namespace {

enum Stream : std::uint64_t {
    kEnvelopeNoise = 0x656e76,
    kCarrierNoise = 0x636172,
    kEegNoise = 0x656567,
    kSpatial = 0x737061,
    kMismatch = 0x6d6d,
};

constexpr std::size_t kCarrierTaps = 65;
constexpr double kCarrierLowHz = 100.0;
constexpr double kCarrierHighHz = 6000.0;
constexpr double kSpeechGain = 0.1;

std::uint64_t as_key(std::int64_t v) { return static_cast<std::uint64_t>(v); }

// Hamming-windowed sinc band-pass, scaled so filtered unit white noise has unit variance.
std::vector<double> carrier_filter(int sample_rate_hz) {
    const double fs = sample_rate_hz;
    const double f1 = kCarrierLowHz / fs;
    const double f2 = std::min(kCarrierHighHz, 0.45 * fs) / fs;
    const auto m = static_cast<double>(kCarrierTaps - 1);
    std::vector<double> h(kCarrierTaps);
    double energy = 0.0;
    for (std::size_t i = 0; i < kCarrierTaps; ++i) {
        const double n = static_cast<double>(i) - m / 2.0;
        const auto lowpass = [n](double f) {
            return n == 0.0 ? 2.0 * f : std::sin(2.0 * std::numbers::pi * f * n) / (std::numbers::pi * n);
        };
        const double window = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / m);
        h[i] = (lowpass(f2) - lowpass(f1)) * window;
        energy += h[i] * h[i];
    }
    for (auto& v : h) v /= std::sqrt(energy);
    return h;
}

std::vector<double> envelope_kernel(double sigma) {
    const auto radius = static_cast<std::int64_t>(std::ceil(4.0 * sigma));
    std::vector<double> w;
    double energy = 0.0;
    for (std::int64_t k = -radius; k <= radius; ++k) {
        const double v = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
        w.push_back(v);
        energy += v * v;
    }
    for (auto& v : w) v /= std::sqrt(energy);
    return w;
}

}  // namespace

double SynthConfig::noise_std() const {
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return std::pow(10.0, -snr_db / 20.0);
}

void SynthConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw ConfigError("synth config: " + msg); };
    if (n_subjects < 2) fail("n_subjects must be at least 2 (one held out)");
    if (trials_per_subject < 3) fail("trials_per_subject must be at least 3 (train/val/held-out stories)");
    if (frames == 0) fail("frames must be positive");
    if (eeg_channels == 0) fail("eeg_channels must be positive");
    if (lag_frames >= frames) {
        fail("lag_frames (" + std::to_string(lag_frames) + ") must be below frames (" +
             std::to_string(frames) + ")");
    }
    if (responsive_channels > eeg_channels) fail("responsive_channels exceeds eeg_channels");
    if (mismatch_min_offset_frames < lag_frames + 1) {
        fail("mismatch_min_offset_frames must be at least lag_frames + 1");
    }
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
        fail("snr_db must be a number or +inf");
    }
    if (!(envelope_sigma_frames > 0.0)) fail("envelope_sigma_frames must be positive");
    if (sample_rate_hz <= 0 || hop == 0) fail("sample rate and hop must be positive");
    // Every trial needs a start at least the gap away on one side or the other.
    const std::size_t last = stream_frames() - frames;
    for (std::size_t k = 0; k < trials_per_subject; ++k) {
        const std::size_t own = k * frames;
        if (own < mismatch_min_offset_frames && own + mismatch_min_offset_frames > last) {
            fail("stream of " + std::to_string(stream_frames()) + " frames is too short for the mismatch " +
                 "offset constraint at trial " + std::to_string(k));
        }
    }
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::held_out_stories: return "held_out_stories";
        case Split::held_out_subjects: return "held_out_subjects";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    for (Split v : {Split::train, Split::val, Split::held_out_stories, Split::held_out_subjects}) {
        if (to_string(v) == s) return v;
    }
    throw InputError("unknown split '" + s + "'");
}

Split split_of(const SynthConfig& cfg, std::size_t subject, std::size_t trial) {
    const auto share = [](std::size_t n, double frac) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(n))));
    };
    const std::size_t held_subjects = share(cfg.n_subjects, 0.2);
    if (subject >= cfg.n_subjects - held_subjects) return Split::held_out_subjects;
    const std::size_t k = cfg.trials_per_subject;
    const std::size_t stories = share(k, 0.2);
    const std::size_t val = share(k, 0.1);
    if (trial >= k - stories) return Split::held_out_stories;
    if (trial >= k - stories - val) return Split::val;
    return Split::train;
}

double synth_envelope(const SynthConfig& cfg, std::size_t subject, std::int64_t frame) {
    static thread_local double cached_sigma = -1.0;
    static thread_local std::vector<double> kernel;
    if (cached_sigma != cfg.envelope_sigma_frames) {
        kernel = envelope_kernel(cfg.envelope_sigma_frames);
        cached_sigma = cfg.envelope_sigma_frames;
    }
    const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
    double g = 0.0;
    for (std::int64_t k = -radius; k <= radius; ++k) {
        g += kernel[static_cast<std::size_t>(k + radius)] *
             unit_normal(hash_key(cfg.seed, kEnvelopeNoise, subject, as_key(frame + k)));
    }
    return g;
}

double spatial_weight(const SynthConfig& cfg, std::size_t subject, std::size_t channel) {
    return 0.5 + unit_uniform(hash_key(cfg.seed, kSpatial, subject, channel));
}

SpeechWaveform synth_speech(const SynthConfig& cfg, std::size_t subject, std::size_t start_frame) {
    const std::size_t hop = cfg.hop;
    const std::size_t n = cfg.frames * hop;
    const auto start = static_cast<std::int64_t>(start_frame * hop);
    const std::vector<double> h = carrier_filter(cfg.sample_rate_hz);
    const auto half = static_cast<std::int64_t>(h.size() / 2);

    std::vector<double> noise(n + h.size() - 1);
    for (std::size_t i = 0; i < noise.size(); ++i) {
        noise[i] = unit_normal(
            hash_key(cfg.seed, kCarrierNoise, subject, as_key(start - half + static_cast<std::int64_t>(i))));
    }
    // Envelope at frame centres start_frame - 1 .. start_frame + T.
    std::vector<double> env(cfg.frames + 2);
    for (std::size_t i = 0; i < env.size(); ++i) {
        env[i] = synth_envelope(cfg, subject, static_cast<std::int64_t>(start_frame + i) - 1);
    }

    SpeechWaveform wav;
    wav.sample_rate_hz = cfg.sample_rate_hz;
    wav.samples.resize(n);
    const double h_hop = static_cast<double>(hop);
    for (std::size_t t = 0; t < n; ++t) {
        double carrier = 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) carrier += h[j] * noise[t + j];
        const double u = (static_cast<double>(t) - h_hop / 2.0) / h_hop;  // frame position
        const double fl = std::floor(u);
        const double frac = u - fl;
        const auto idx = static_cast<std::size_t>(fl + 1.0);  // env[0] is frame -1
        const double g = (1.0 - frac) * env[idx] + frac * env[idx + 1];
        wav.samples[t] = kSpeechGain * carrier * std::exp(0.5 * g);
    }
    return wav;
}

EegWindow synth_eeg(const SynthConfig& cfg, std::size_t subject, std::size_t start_frame) {
    const std::size_t t_len = cfg.frames;
    std::vector<double> lagged(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        lagged[t] = synth_envelope(cfg, subject,
                                   static_cast<std::int64_t>(start_frame + t) -
                                       static_cast<std::int64_t>(cfg.lag_frames));
    }
    const double sigma = cfg.noise_std();
    EegWindow eeg{Tensor<double>({cfg.eeg_channels, t_len})};
    for (std::size_t c = 0; c < cfg.eeg_channels; ++c) {
        const double a = c < cfg.responsive_channels ? spatial_weight(cfg, subject, c) : 0.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            double v = a * lagged[t];
            if (sigma > 0.0) {
                v += sigma * unit_normal(hash_key(cfg.seed, kEegNoise, subject, c, start_frame + t));
            }
            eeg.data(c, t) = v;
        }
    }
    return eeg;
}

std::pair<SpeechWaveform, EegWindow> synth_trial(const SynthConfig& cfg, std::size_t subject,
                                                 std::size_t trial) {
    cfg.validate();
    if (subject >= cfg.n_subjects || trial >= cfg.trials_per_subject) {
        throw ConfigError("synth_trial: (subject " + std::to_string(subject) + ", trial " +
                          std::to_string(trial) + ") outside the configured dataset");
    }
    const std::size_t start = trial * cfg.frames;
    return {synth_speech(cfg, subject, start), synth_eeg(cfg, subject, start)};
}

namespace {

// Trials [lo, hi) of `subject` that share the split of `trial`.
std::pair<std::size_t, std::size_t> split_group(const SynthConfig& cfg, std::size_t subject,
                                                std::size_t trial) {
    const Split split = split_of(cfg, subject, trial);
    std::size_t lo = trial, hi = trial + 1;
    while (lo > 0 && split_of(cfg, subject, lo - 1) == split) --lo;
    while (hi < cfg.trials_per_subject && split_of(cfg, subject, hi) == split) ++hi;
    return {lo, hi};
}

std::size_t random_offset(const SynthConfig& cfg, std::size_t subject, std::size_t trial) {
    const std::size_t own = trial * cfg.frames;
    const std::size_t last = cfg.stream_frames() - cfg.frames;
    const std::size_t gap = cfg.mismatch_min_offset_frames;
    // Valid starts: [0, own - gap] and [own + gap, last].
    const std::size_t left = own >= gap ? own - gap + 1 : 0;
    const std::size_t right = own + gap <= last ? last - (own + gap) + 1 : 0;
    if (left + right == 0) throw ConfigError("stream too short for the mismatch offset constraint");
    const std::size_t pick = hash_key(cfg.seed, kMismatch, subject, trial) % (left + right);
    return pick < left ? pick : own + gap + (pick - left);
}

}  // namespace

std::size_t mismatch_offset(const SynthConfig& cfg, std::size_t subject, std::size_t trial) {
    // Within a split, trials are arranged in a seeded cycle and each borrows the
    // speech of its successor, so every segment occurs once per label.
    const auto [lo, hi] = split_group(cfg, subject, trial);
    if (hi - lo >= 2) {
        std::vector<std::size_t> cycle(hi - lo);
        std::iota(cycle.begin(), cycle.end(), lo);
        SplitMix64 rng(hash_key(cfg.seed, kMismatch, subject, lo));
        for (std::size_t i = cycle.size(); i-- > 1;) std::swap(cycle[i], cycle[rng.below(i + 1)]);
        const auto at = static_cast<std::size_t>(std::find(cycle.begin(), cycle.end(), trial) - cycle.begin());
        const std::size_t partner = cycle[(at + 1) % cycle.size()];
        const std::size_t own = trial * cfg.frames, off = partner * cfg.frames;
        if ((off > own ? off - own : own - off) >= cfg.mismatch_min_offset_frames) return off;
    }
    return random_offset(cfg, subject, trial);
}

std::vector<TrialPair> make_pairs(const std::vector<TrialRef>& trials, const SynthConfig& cfg) {
    cfg.validate();
    for (const auto& t : trials) {
        if (t.subject >= cfg.n_subjects || t.trial >= cfg.trials_per_subject) {
            throw ConfigError("make_pairs: (subject " + std::to_string(t.subject) + ", trial " +
                              std::to_string(t.trial) + ") outside the configured dataset");
        }
    }
    std::vector<TrialPair> pairs(2 * trials.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto [subject, trial] = trials[i];
        auto [speech, eeg] = synth_trial(cfg, subject, trial);
        TrialPair& matched = pairs[2 * i];
        TrialPair& mismatched = pairs[2 * i + 1];
        const std::size_t off = mismatch_offset(cfg, subject, trial);
        mismatched = {synth_speech(cfg, subject, off), eeg, 0, subject, trial, off};
        matched = {std::move(speech), std::move(eeg), 1, subject, trial, trial * cfg.frames};
    }
    return pairs;
}

std::vector<TrialRef> all_trials(const SynthConfig& cfg) {
    std::vector<TrialRef> out;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s)
        for (std::size_t k = 0; k < cfg.trials_per_subject; ++k) out.push_back({s, k});
    return out;
}

}  // namespace ifecf

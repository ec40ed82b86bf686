#pragma once

// Synthetic speech/EEG streams with a known stimulus-to-response lag.
//
// Each subject owns one continuous stream at the feature frame rate
// (sample_rate / hop). A slowly varying envelope g(n) (Gaussian-smoothed white
// noise, unit variance) modulates a band-limited noise carrier to form the
// speech waveform. EEG channel c < responsive_channels carries a_{s,c} g(n - L)
// with per-subject weights a_{s,c} ~ U(0.5, 1.5); every channel adds white
// Gaussian noise of std 10^(-snr_db/20). Trial k covers frames [kT, (k+1)T).
//
// Every value is a pure function of (seed, subject, position), so any segment
// can be generated independently and bitwise reproducibly.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ifecf/features.hpp"

namespace ifecf {

struct SynthConfig {
    std::size_t n_subjects = 10;
    std::size_t trials_per_subject = 80;
    std::size_t frames = 192;
    std::size_t eeg_channels = 64;
    std::size_t lag_frames = 6;
    double snr_db = 0.0;  // +inf disables noise
    std::size_t responsive_channels = 16;
    std::size_t mismatch_min_offset_frames = 64;
    double envelope_sigma_frames = 2.0;
    int sample_rate_hz = 16000;
    std::size_t hop = 250;
    std::uint64_t seed = 1;

    std::size_t stream_frames() const { return trials_per_subject * frames; }
    double noise_std() const;
    // Throws ConfigError naming the violated constraint.
    void validate() const;
};

enum class Split { train, val, held_out_stories, held_out_subjects };

std::string to_string(Split s);
Split parse_split(const std::string& s);

// Last 20% of subject ids (at least one) are held out entirely. For the other
// subjects the last 20% of trials (at least one) are held-out stories and the
// 10% before them (at least one) validation.
Split split_of(const SynthConfig& cfg, std::size_t subject, std::size_t trial);

double synth_envelope(const SynthConfig& cfg, std::size_t subject, std::int64_t frame);
double spatial_weight(const SynthConfig& cfg, std::size_t subject, std::size_t channel);

// T frames of speech starting at stream frame `start_frame`.
SpeechWaveform synth_speech(const SynthConfig& cfg, std::size_t subject, std::size_t start_frame);
EegWindow synth_eeg(const SynthConfig& cfg, std::size_t subject, std::size_t start_frame);

std::pair<SpeechWaveform, EegWindow> synth_trial(const SynthConfig& cfg, std::size_t subject,
                                                 std::size_t trial);

struct TrialRef {
    std::size_t subject = 0;
    std::size_t trial = 0;
};

struct TrialPair {
    SpeechWaveform speech;
    EegWindow eeg;
    int label = 1;
    std::size_t subject_id = 0;
    std::size_t trial_id = 0;
    std::size_t speech_offset_frames = 0;  // stream frame where the speech segment starts
};

// Stream frame where the mismatched speech for (subject, trial) starts; at
// least mismatch_min_offset_frames away from the trial's own segment. Trials of
// one split borrow each other's speech along a seeded cycle; a split with a
// single trial falls back to a uniform draw over every valid start.
std::size_t mismatch_offset(const SynthConfig& cfg, std::size_t subject, std::size_t trial);

// One matched and one mismatched pair per trial, in input order.
std::vector<TrialPair> make_pairs(const std::vector<TrialRef>& trials, const SynthConfig& cfg);

// Every (subject, trial) of the config, subject-major.
std::vector<TrialRef> all_trials(const SynthConfig& cfg);

}  // namespace ifecf

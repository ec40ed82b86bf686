#pragma once

// Independent feature encoders: log-mel spectrogram for speech and a learned
// pointwise spatial convolution for EEG. Both produce d x T maps.

#include <cstddef>
#include <span>
#include <vector>

#include "ifecf/tensor.hpp"

namespace ifecf {

struct SpeechWaveform {
    std::vector<double> samples;
    int sample_rate_hz = 16000;
};

// D x T, channels by frames.
struct EegWindow {
    Tensor<double> data;

    std::size_t channels() const { return data.dim(0); }
    std::size_t frames() const { return data.dim(1); }
};

enum class WindowKind { hann, hamming };

struct MelConfig {
    int sample_rate_hz = 16000;
    std::size_t n_mels = 28;
    std::size_t fft_size = 512;
    std::size_t hop = 250;
    std::size_t frames = 192;
    WindowKind window = WindowKind::hann;
    double fmin_hz = 0.0;
    double fmax_hz = 0.0;  // 0 means Nyquist
    double log_floor_eps = 1e-10;

    double effective_fmax() const { return fmax_hz > 0.0 ? fmax_hz : 0.5 * sample_rate_hz; }
    std::size_t expected_samples() const { return hop * frames; }
    // Throws ConfigError when the parameters are inconsistent.
    void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x (fft_size/2 + 1) triangular filters on the HTK mel scale, peak 1.
Tensor<double> mel_filterbank(const MelConfig& cfg);

// Analysis window of length fft_size (periodic form).
std::vector<double> analysis_window(const MelConfig& cfg);

// Precomputes window and filterbank once; call operator() per waveform.
//
// Frame tau is centered on sample tau*hop + hop/2 and spans fft_size samples,
// reflecting across the waveform ends. Entry (m, tau) is
// log(eps + sum_k fb(m, k) |X_tau(k)|^2).
class MelSpectrogram {
public:
    explicit MelSpectrogram(MelConfig cfg);

    Tensor<double> operator()(const SpeechWaveform& wav) const;

    const MelConfig& config() const noexcept { return cfg_; }
    const Tensor<double>& filterbank() const noexcept { return filterbank_; }

private:
    MelConfig cfg_;
    std::vector<double> window_;
    Tensor<double> filterbank_;
};

Tensor<double> mel_spectrogram(const SpeechWaveform& wav, const MelConfig& cfg);

// Per-row z-score over the time axis. Rows with zero variance become zero.
template <class T>
void standardize_rows(Tensor<T>& feature);

// output(i, tau) = sum_c weight(i, c) * eeg(c, tau) + bias(i).
template <class T>
Tensor<T> eeg_spatial_conv(const Tensor<T>& eeg, const Tensor<T>& weight, const Tensor<T>& bias);

// Accumulates into grad_weight / grad_bias; grad_eeg (if non-null) is overwritten.
template <class T>
void eeg_spatial_conv_backward(const Tensor<T>& eeg, const Tensor<T>& weight,
                               const Tensor<T>& grad_output, Tensor<T>& grad_weight,
                               Tensor<T>& grad_bias, Tensor<T>* grad_eeg);

}  // namespace ifecf

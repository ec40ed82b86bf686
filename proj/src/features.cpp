#include "ifecf/features.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

namespace ifecf {
namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Reflect an index into [0, n) without repeating the edge sample.
std::size_t reflect(long long i, std::size_t n) {
    const auto last = static_cast<long long>(n) - 1;
    while (i < 0 || i > last) {
        if (i < 0) i = -i;
        if (i > last) i = 2 * last - i;
    }
    return static_cast<std::size_t>(i);
}

}  // namespace

void MelConfig::validate() const {
    if (sample_rate_hz <= 0) throw ConfigError("mel: sample_rate_hz must be positive");
    if (n_mels < 1) throw ConfigError("mel: n_mels must be >= 1");
    if (!is_power_of_two(fft_size)) throw ConfigError("mel: fft_size must be a power of two");
    if (hop < 1 || frames < 1) throw ConfigError("mel: hop and frames must be >= 1");
    if (fft_size / 2 >= expected_samples()) {
        throw ConfigError("mel: fft_size/2 must be shorter than the waveform for reflection padding");
    }
    const double fmax = effective_fmax();
    if (!(fmin_hz >= 0.0 && fmin_hz < fmax && fmax <= 0.5 * sample_rate_hz)) {
        throw ConfigError("mel: need 0 <= fmin < fmax <= sample_rate/2");
    }
    if (!(log_floor_eps > 0.0)) throw ConfigError("mel: log_floor_eps must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const std::size_t bins = cfg.fft_size / 2 + 1;
    const double lo = hz_to_mel(cfg.fmin_hz);
    const double hi = hz_to_mel(cfg.effective_fmax());
    std::vector<double> edges(cfg.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
    }
    Tensor<double> fb({cfg.n_mels, bins});
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[m];
        const double center = edges[m + 1];
        const double right = edges[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate_hz /
                             static_cast<double>(cfg.fft_size);
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            fb(m, k) = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

std::vector<double> analysis_window(const MelConfig& cfg) {
    std::vector<double> w(cfg.fft_size);
    const double a0 = cfg.window == WindowKind::hann ? 0.5 : 0.54;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = a0 - (1.0 - a0) * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(cfg.fft_size));
    }
    return w;
}

MelSpectrogram::MelSpectrogram(MelConfig cfg)
    : cfg_(cfg), window_(analysis_window(cfg)), filterbank_(mel_filterbank(cfg)) {}

Tensor<double> MelSpectrogram::operator()(const SpeechWaveform& wav) const {
    if (wav.sample_rate_hz != cfg_.sample_rate_hz) {
        throw ConfigError("mel: waveform sample rate " + std::to_string(wav.sample_rate_hz) +
                          " does not match config " + std::to_string(cfg_.sample_rate_hz));
    }
    const std::size_t t = wav.samples.size();
    if (t != cfg_.expected_samples()) {
        throw ConfigError("mel: waveform has " + std::to_string(t) + " samples, hop x frames = " +
                          std::to_string(cfg_.expected_samples()));
    }
    for (double s : wav.samples) {
        if (!std::isfinite(s)) throw InputError("mel: waveform contains non-finite samples");
    }

    const std::size_t n = cfg_.fft_size;
    const std::size_t bins = n / 2 + 1;
    Tensor<double> out({cfg_.n_mels, cfg_.frames});
    std::vector<std::complex<double>> buf(n);
    std::vector<double> power(bins);
    for (std::size_t tau = 0; tau < cfg_.frames; ++tau) {
        const auto center = static_cast<long long>(tau * cfg_.hop + cfg_.hop / 2);
        const long long start = center - static_cast<long long>(n / 2);
        for (std::size_t i = 0; i < n; ++i) {
            buf[i] = {wav.samples[reflect(start + static_cast<long long>(i), t)] * window_[i], 0.0};
        }
        fft(buf);
        for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]);
        for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k) e += filterbank_(m, k) * power[k];
            out(m, tau) = std::log(cfg_.log_floor_eps + e);
        }
    }
    return out;
}

Tensor<double> mel_spectrogram(const SpeechWaveform& wav, const MelConfig& cfg) {
    return MelSpectrogram(cfg)(wav);
}

template <class T>
void standardize_rows(Tensor<T>& feature) {
    if (feature.rank() != 2) throw InputError("standardize_rows: expected a matrix");
    const std::size_t rows = feature.dim(0);
    const std::size_t cols = feature.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += feature(r, c);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = feature(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = var > 1e-20 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            feature(r, c) = static_cast<T>((feature(r, c) - mean) * inv);
        }
    }
}

template <class T>
Tensor<T> eeg_spatial_conv(const Tensor<T>& eeg, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (eeg.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
        throw InputError("eeg_spatial_conv: expected eeg DxT, weight dxD, bias d");
    }
    const std::size_t channels = eeg.dim(0);
    const std::size_t frames = eeg.dim(1);
    const std::size_t d = weight.dim(0);
    if (weight.dim(1) != channels || bias.dim(0) != d) {
        throw InputError("eeg_spatial_conv: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " incompatible with eeg " +
                         shape_str(eeg.shape()));
    }
    Tensor<T> out({d, frames});
    for (std::size_t i = 0; i < d; ++i) {
        T* row = &out(i, 0);
        for (std::size_t tau = 0; tau < frames; ++tau) row[tau] = bias[i];
        for (std::size_t c = 0; c < channels; ++c) {
            const T w = weight(i, c);
            const T* src = &eeg(c, 0);
            for (std::size_t tau = 0; tau < frames; ++tau) row[tau] += w * src[tau];
        }
    }
    return out;
}

template <class T>
void eeg_spatial_conv_backward(const Tensor<T>& eeg, const Tensor<T>& weight,
                               const Tensor<T>& grad_output, Tensor<T>& grad_weight,
                               Tensor<T>& grad_bias, Tensor<T>* grad_eeg) {
    const std::size_t channels = eeg.dim(0);
    const std::size_t frames = eeg.dim(1);
    const std::size_t d = weight.dim(0);
    require_shape(grad_output, {d, frames}, "eeg_spatial_conv_backward grad_output");
    for (std::size_t i = 0; i < d; ++i) {
        const T* go = &grad_output(i, 0);
        T b = 0;
        for (std::size_t tau = 0; tau < frames; ++tau) b += go[tau];
        grad_bias[i] += b;
        for (std::size_t c = 0; c < channels; ++c) {
            const T* x = &eeg(c, 0);
            T acc = 0;
            for (std::size_t tau = 0; tau < frames; ++tau) acc += go[tau] * x[tau];
            grad_weight(i, c) += acc;
        }
    }
    if (grad_eeg) {
        *grad_eeg = Tensor<T>({channels, frames});
        for (std::size_t c = 0; c < channels; ++c) {
            T* gx = &(*grad_eeg)(c, 0);
            for (std::size_t i = 0; i < d; ++i) {
                const T w = weight(i, c);
                const T* go = &grad_output(i, 0);
                for (std::size_t tau = 0; tau < frames; ++tau) gx[tau] += w * go[tau];
            }
        }
    }
}

template void standardize_rows<float>(Tensor<float>&);
template void standardize_rows<double>(Tensor<double>&);
template Tensor<float> eeg_spatial_conv<float>(const Tensor<float>&, const Tensor<float>&,
                                               const Tensor<float>&);
template Tensor<double> eeg_spatial_conv<double>(const Tensor<double>&, const Tensor<double>&,
                                                 const Tensor<double>&);
template void eeg_spatial_conv_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                               const Tensor<float>&, Tensor<float>&,
                                               Tensor<float>&, Tensor<float>*);
template void eeg_spatial_conv_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                const Tensor<double>&, Tensor<double>&,
                                                Tensor<double>&, Tensor<double>*);

}  // namespace ifecf

#include "uxmil/audio_frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace uxmil {

namespace {

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

std::vector<double> resample_linear(const std::vector<double>& x, int from_rate, int to_rate) {
    if (from_rate == to_rate) return x;
    const double ratio = static_cast<double>(from_rate) / to_rate;
    const std::size_t n_out =
        static_cast<std::size_t>(std::floor((x.size() - 1) / ratio)) + 1;
    std::vector<double> out(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = i * ratio;
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const std::size_t i1 = std::min(i0 + 1, x.size() - 1);
        const double frac = pos - i0;
        out[i] = (1.0 - frac) * x[i0] + frac * x[i1];
    }
    return out;
}

struct MelFilter {
    std::size_t start_bin = 0;
    std::vector<double> weights;
};

std::vector<MelFilter> build_filterbank(const MelParams& p) {
    const std::size_t n_bins = p.n_fft / 2 + 1;
    const double nyquist = p.sample_rate / 2.0;
    const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(nyquist);
    std::vector<double> edges(p.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (p.n_mels + 1));

    const double bin_hz = static_cast<double>(p.sample_rate) / p.n_fft;
    std::vector<MelFilter> filters(p.n_mels);
    for (std::size_t m = 0; m < p.n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        MelFilter f;
        bool started = false;
        for (std::size_t b = 0; b < n_bins; ++b) {
            const double freq = b * bin_hz;
            double w = 0.0;
            if (freq >= left && freq <= center && center > left)
                w = (freq - left) / (center - left);
            else if (freq > center && freq <= right && right > center)
                w = (right - freq) / (right - center);
            if (w > 0.0) {
                if (!started) {
                    f.start_bin = b;
                    started = true;
                }
                f.weights.push_back(w);
            } else if (started) {
                break;
            }
        }
        filters[m] = std::move(f);
    }
    return filters;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelSpectrogram compute_mel(const AudioClip& audio, const MelParams& params) {
    if (audio.samples.empty()) throw ValidationError("compute_mel: empty audio");
    std::vector<double> samples = resample_linear(audio.samples, audio.sample_rate,
                                                  params.sample_rate);
    if (samples.size() < params.n_fft)
        throw ValidationError("compute_mel: input too short (" +
                              std::to_string(samples.size()) + " samples, need at least " +
                              std::to_string(params.n_fft) + ")");
    const std::size_t n_time = (samples.size() - params.n_fft) / params.hop + 1;
    const std::size_t n_bins = params.n_fft / 2 + 1;

    std::vector<double> window(params.n_fft);
    for (std::size_t i = 0; i < params.n_fft; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / params.n_fft);

    const auto filters = build_filterbank(params);

    MelSpectrogram mel;
    mel.params = params;
    mel.n_time = n_time;
    mel.values.assign(params.n_mels * n_time, 0.0);

    std::vector<std::complex<double>> frame(params.n_fft);
    std::vector<double> power(n_bins);
    for (std::size_t t = 0; t < n_time; ++t) {
        const double* src = samples.data() + t * params.hop;
        for (std::size_t i = 0; i < params.n_fft; ++i)
            frame[i] = std::complex<double>(src[i] * window[i], 0.0);
        fft_inplace(frame);
        for (std::size_t b = 0; b < n_bins; ++b) power[b] = std::norm(frame[b]);
        for (std::size_t m = 0; m < params.n_mels; ++m) {
            const auto& f = filters[m];
            double acc = 0;
            for (std::size_t i = 0; i < f.weights.size(); ++i)
                acc += f.weights[i] * power[f.start_bin + i];
            mel.values[m * n_time + t] = std::log(std::max(acc, params.log_floor));
        }
    }
    return mel;
}

PatchSet patchify(const MelSpectrogram& mel) {
    const std::size_t n_mels = mel.params.n_mels;
    const std::size_t width = PatchSet::kTimeFrames;
    if (n_mels != PatchSet::kGridRows * PatchSet::kPatchSize)
        throw ConfigError("patchify: expected " +
                          std::to_string(PatchSet::kGridRows * PatchSet::kPatchSize) +
                          " mel bands, got " + std::to_string(n_mels));
    for (double v : mel.values)
        if (!std::isfinite(v)) throw ValidationError("patchify: non-finite mel value");

    // bilinear resize on the time axis only (half-pixel centers)
    std::vector<double> resized;
    if (mel.n_time == width) {
        resized = mel.values;
    } else {
        resized.resize(n_mels * width);
        const double sx = static_cast<double>(mel.n_time) / width;
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const double cx = std::min(std::max(fx, 0.0), static_cast<double>(mel.n_time - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, mel.n_time - 1);
            const double w = cx - x0;
            for (std::size_t m = 0; m < n_mels; ++m)
                resized[m * width + x] =
                    (1.0 - w) * mel.at(m, x0) + w * mel.at(m, x1);
        }
    }

    // whole-image standardization with a constant-image guard
    const std::size_t n = resized.size();
    double mean = 0;
    for (double v : resized) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : resized) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var < 1e-12) {
        std::fill(resized.begin(), resized.end(), 0.0);
    } else {
        const double inv_std = 1.0 / std::sqrt(var);
        for (double& v : resized) v = (v - mean) * inv_std;
    }

    PatchSet set;
    set.patches = Tensor<float>(Shape{PatchSet::kPatches, PatchSet::kPatchSize,
                                      PatchSet::kPatchSize});
    const std::size_t ps = PatchSet::kPatchSize;
    for (std::size_t p = 0; p < PatchSet::kPatches; ++p) {
        const std::size_t grid_r = p / PatchSet::kGridCols;
        const std::size_t grid_c = p % PatchSet::kGridCols;
        for (std::size_t i = 0; i < ps; ++i)
            for (std::size_t j = 0; j < ps; ++j)
                set.patches.data()[(p * ps + i) * ps + j] = static_cast<float>(
                    resized[(grid_r * ps + i) * width + grid_c * ps + j]);
    }
    return set;
}

Tensor<float> reassemble_patches(const PatchSet& set) {
    const std::size_t ps = PatchSet::kPatchSize;
    const std::size_t h = PatchSet::kGridRows * ps;
    const std::size_t w = PatchSet::kGridCols * ps;
    Tensor<float> img(Shape{h, w});
    for (std::size_t p = 0; p < PatchSet::kPatches; ++p) {
        const std::size_t grid_r = p / PatchSet::kGridCols;
        const std::size_t grid_c = p % PatchSet::kGridCols;
        for (std::size_t i = 0; i < ps; ++i)
            for (std::size_t j = 0; j < ps; ++j)
                img.data()[(grid_r * ps + i) * w + grid_c * ps + j] =
                    set.patches.at((p * ps + i) * ps + j);
    }
    return img;
}

}  // namespace uxmil

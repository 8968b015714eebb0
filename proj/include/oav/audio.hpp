#pragma once

// Deterministic audio feature extraction, temporal alignment to latent
// frames, and the audio pack: pad three zero rows before the first frame,
// group rows by four, and map each group to latent space with a bias-free
// linear layer. Bias-free means silence contributes exactly zero everywhere.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "oav/autograd.hpp"
#include "oav/tensor.hpp"

namespace oav {

inline constexpr std::size_t kAudioFeatureDim = 16;  // d_a
inline constexpr std::size_t kAudioPackDim = 32;     // d_pack
inline constexpr std::size_t kAudioDftBins = 14;     // feature slots 2..15

struct Waveform {
    Tensor samples;  // [n], values in [-1, 1]
    double sample_rate{8000.0};

    std::size_t n() const { return samples.numel(); }
    double duration() const { return static_cast<double>(n()) / sample_rate; }
};

// ---------------------------------------------------------------------------
// WAV I/O: 16-bit mono little-endian PCM with the canonical 44-byte header.
// ---------------------------------------------------------------------------

inline void save_wav(const std::string& path, const Waveform& w) {
    const std::uint32_t n = static_cast<std::uint32_t>(w.n());
    const std::uint32_t sr = static_cast<std::uint32_t>(w.sample_rate);
    const std::uint32_t data_bytes = n * 2;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path);
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    u32(36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(1);  // mono
    u32(sr);
    u32(sr * 2);  // byte rate
    u16(2);       // block align
    u16(16);      // bits per sample
    out.write("data", 4);
    u32(data_bytes);
    for (std::size_t i = 0; i < n; ++i) {
        double v = w.samples.data[i];
        v = std::max(-1.0, std::min(1.0, v));
        const std::int16_t q = static_cast<std::int16_t>(std::lround(v * 32767.0));
        out.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Waveform load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    char hdr[44];
    in.read(hdr, 44);
    if (!in) throw FormatError("truncated WAV header in " + path);
    if (std::memcmp(hdr, "RIFF", 4) != 0 || std::memcmp(hdr + 8, "WAVE", 4) != 0 ||
        std::memcmp(hdr + 12, "fmt ", 4) != 0 || std::memcmp(hdr + 36, "data", 4) != 0) {
        throw FormatError("not a canonical 44-byte-header WAV: " + path);
    }
    std::uint16_t fmt, channels, bits;
    std::uint32_t sr, data_bytes;
    std::memcpy(&fmt, hdr + 20, 2);
    std::memcpy(&channels, hdr + 22, 2);
    std::memcpy(&sr, hdr + 24, 4);
    std::memcpy(&bits, hdr + 34, 2);
    std::memcpy(&data_bytes, hdr + 40, 4);
    if (fmt != 1 || channels != 1 || bits != 16) {
        throw FormatError("expected 16-bit mono PCM in " + path);
    }
    const std::size_t n = data_bytes / 2;
    Waveform w{Tensor({n}), static_cast<double>(sr)};
    std::vector<std::int16_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(data_bytes));
    if (!in) throw FormatError("truncated WAV data in " + path);
    for (std::size_t i = 0; i < n; ++i) {
        w.samples.data[i] = static_cast<double>(buf[i]) / 32767.0;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Feature extraction
//
// Frame t reads the sample window [t/fps, (t+1)/fps). Per window, 16 features:
//   [0]      log-energy, log(1 + sum s^2); zero samples give exactly 0
//   [1]      zero-crossing rate (sign changes / window length)
//   [2..15]  magnitudes of DFT bins 1..14 over the window, scaled by 2/N
// ---------------------------------------------------------------------------

inline std::size_t frame_window_begin(std::size_t t, double sample_rate, double fps) {
    return static_cast<std::size_t>(static_cast<double>(t) * sample_rate / fps);
}

inline Tensor extract_features(const Waveform& w, double fps, std::size_t t_frames) {
    const std::size_t need = frame_window_begin(t_frames, w.sample_rate, fps);
    if (w.n() < need) {
        throw LengthError("waveform has " + std::to_string(w.n()) + " samples but " +
                          std::to_string(need) + " are required for " +
                          std::to_string(t_frames) + " frames");
    }
    Tensor feats({t_frames, kAudioFeatureDim});
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t t = 0; t < t_frames; ++t) {
        const std::size_t s0 = frame_window_begin(t, w.sample_rate, fps);
        const std::size_t s1 = frame_window_begin(t + 1, w.sample_rate, fps);
        const std::size_t len = s1 - s0;
        const double* s = w.samples.data.data() + s0;
        double* f = feats.data.data() + t * kAudioFeatureDim;
        double energy = 0.0;
        std::size_t crossings = 0;
        for (std::size_t i = 0; i < len; ++i) {
            energy += s[i] * s[i];
            if (i > 0 && ((s[i - 1] < 0.0 && s[i] >= 0.0) || (s[i - 1] >= 0.0 && s[i] < 0.0))) {
                if (s[i - 1] != 0.0 || s[i] != 0.0) ++crossings;
            }
        }
        f[0] = std::log(1.0 + energy);
        f[1] = len > 1 ? static_cast<double>(crossings) / static_cast<double>(len) : 0.0;
        for (std::size_t k = 1; k <= kAudioDftBins; ++k) {
            double re = 0.0, im = 0.0;
            const double step = two_pi * static_cast<double>(k) / static_cast<double>(len);
            for (std::size_t i = 0; i < len; ++i) {
                const double ph = step * static_cast<double>(i);
                re += s[i] * std::cos(ph);
                im -= s[i] * std::sin(ph);
            }
            f[1 + k] = 2.0 * std::sqrt(re * re + im * im) / static_cast<double>(len);
        }
    }
    return feats;
}

// ---------------------------------------------------------------------------
// Audio pack
// ---------------------------------------------------------------------------

// Prepends 3 zero rows to the T feature rows, partitions the T+3 rows into
// groups of 4, and flattens each group to one row of the result.
inline Tensor group_features(const Tensor& feats) {
    const std::size_t t = feats.shape[0], d = feats.shape[1];
    if (t % 4 != 1) {
        throw AlignmentError("pack: frame count " + std::to_string(t) +
                             " is not congruent to 1 mod 4");
    }
    const std::size_t big_l = (t + 3) / 4;
    Tensor grouped({big_l, 4 * d});
    for (std::size_t j = 0; j < big_l; ++j) {
        for (std::size_t g = 0; g < 4; ++g) {
            const std::ptrdiff_t src_row = static_cast<std::ptrdiff_t>(4 * j + g) - 3;
            double* dst = grouped.data.data() + j * 4 * d + g * d;
            if (src_row < 0) continue;  // zero padding before the initial frame
            std::copy_n(feats.data.data() + static_cast<std::size_t>(src_row) * d, d, dst);
        }
    }
    return grouped;
}

// z_a = grouped(feats) * w_pack, no bias. w_pack: [4*d_a, d_pack].
inline Tensor pack(const Tensor& feats, const Tensor& w_pack) {
    if (w_pack.rank() != 2 || w_pack.shape[0] != 4 * feats.shape[1]) {
        throw ShapeError("pack: weight shape " + shape_str(w_pack.shape) +
                         " does not match 4*d_a = " + std::to_string(4 * feats.shape[1]));
    }
    return matmul(group_features(feats), w_pack);
}

// Graph version used during training so gradients reach w_pack.
inline NodePtr pack_node(const Tensor& feats, const NodePtr& w_pack) {
    return matmul(make_leaf(group_features(feats)), w_pack);
}

// The packed row touched by audio frame t: with 3 rows of front padding, row
// index is floor((t+3)/4).
inline std::size_t packed_row_of_frame(std::size_t t) { return (t + 3) / 4; }

// ---------------------------------------------------------------------------
// Per-layer projection
// ---------------------------------------------------------------------------

struct AudioProjector {
    // one [d_pack, d_model] matrix per injection layer, unshared
    std::vector<int> layers;        // strictly increasing 1-based block indices
    std::vector<Tensor> matrices;   // parallel to layers

    const Tensor& matrix_for(int layer) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i] == layer) return matrices[i];
        }
        std::string valid;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            valid += (i ? "," : "") + std::to_string(layers[i]);
        }
        throw ConfigError("no audio projection for layer " + std::to_string(layer) +
                          "; injection layers are {" + valid + "}");
    }
};

// Projects packed audio with the given layer's matrix and broadcasts each
// frame's d_model vector to every spatial position of that frame.
inline Tensor layer_addend(const Tensor& z_a, const AudioProjector& proj, int layer,
                           std::size_t h, std::size_t w) {
    const Tensor& p = proj.matrix_for(layer);
    Tensor rows = matmul(z_a, p);  // [L, d_model]
    const std::size_t big_l = rows.shape[0], d = rows.shape[1];
    Tensor out({big_l, h, w, d});
    for (std::size_t j = 0; j < big_l; ++j) {
        const double* src = rows.data.data() + j * d;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                std::copy_n(src, d, out.data.data() + ((j * h + y) * w + x) * d);
            }
        }
    }
    return out;
}

}  // namespace oav

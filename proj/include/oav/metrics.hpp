#pragma once

// Evaluation metrics: the lip-sync correlation proxy (mouth-region brightness
// vs audio RMS envelope), identity drift over non-mouth pixels, and the
// chunk-boundary continuity check.

#include <string>
#include <vector>

#include "json.hpp"
#include "oav/audio.hpp"
#include "oav/codec.hpp"
#include "oav/long_video.hpp"
#include "oav/tensor.hpp"

namespace oav {

struct Roi {
    int r0{0}, r1{0}, c0{0}, c1{0};  // half-open row/col bounds

    bool inside(std::size_t h, std::size_t w) const {
        return r0 >= 0 && c0 >= 0 && r0 < r1 && c0 < c1 &&
               static_cast<std::size_t>(r1) <= h && static_cast<std::size_t>(c1) <= w;
    }
};

inline double mean_roi_brightness(const VideoTensor& v, const Roi& roi, std::size_t frame) {
    double s = 0.0;
    std::size_t n = 0;
    for (int y = roi.r0; y < roi.r1; ++y) {
        for (int x = roi.c0; x < roi.c1; ++x) {
            for (std::size_t ch = 0; ch < v.c(); ++ch) {
                s += v.frames.at4(frame, static_cast<std::size_t>(y),
                                  static_cast<std::size_t>(x), ch);
                ++n;
            }
        }
    }
    return s / static_cast<double>(n);
}

// Per-frame root-mean-square of the waveform's sample window.
inline std::vector<double> rms_envelope(const Waveform& w, double fps, std::size_t t_frames) {
    std::vector<double> env(t_frames);
    for (std::size_t t = 0; t < t_frames; ++t) {
        const std::size_t s0 = frame_window_begin(t, w.sample_rate, fps);
        const std::size_t s1 = frame_window_begin(t + 1, w.sample_rate, fps);
        if (s1 > w.n()) {
            throw LengthError("waveform too short for frame " + std::to_string(t));
        }
        double acc = 0.0;
        for (std::size_t i = s0; i < s1; ++i) acc += w.samples.data[i] * w.samples.data[i];
        env[t] = std::sqrt(acc / static_cast<double>(s1 - s0));
    }
    return env;
}

struct SyncResult {
    double r{0.0};
    bool constant_series{false};  // set when either series has zero variance
};

inline SyncResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, true};
    return {sxy / std::sqrt(sxx * syy), false};
}

// Pearson correlation between per-frame mouth-ROI brightness and the audio
// RMS envelope. A constant series yields r = 0 with the flag set.
inline SyncResult sync_proxy(const VideoTensor& video, const Waveform& wav, const Roi& mouth,
                             double fps) {
    if (!mouth.inside(video.h(), video.w())) {
        throw ShapeError("mouth ROI outside frame bounds");
    }
    const std::size_t t = video.t();
    std::vector<double> brightness(t);
    for (std::size_t i = 0; i < t; ++i) brightness[i] = mean_roi_brightness(video, mouth, i);
    std::vector<double> env = rms_envelope(wav, fps, t);
    return pearson(brightness, env);
}

// Mean over frames t>0 of the mean absolute deviation from frame 0, over the
// masked pixels (mask is H*W, nonzero = compare). Single frame gives 0.
inline double identity_drift(const VideoTensor& video, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != video.h() * video.w()) {
        throw ShapeError("identity mask size mismatch");
    }
    std::size_t masked = 0;
    for (std::uint8_t m : mask) masked += (m != 0);
    if (masked == 0) throw ConfigError("identity mask selects no pixels");
    if (video.t() <= 1) return 0.0;

    const std::size_t c = video.c();
    double total = 0.0;
    for (std::size_t t = 1; t < video.t(); ++t) {
        double acc = 0.0;
        for (std::size_t y = 0; y < video.h(); ++y) {
            for (std::size_t x = 0; x < video.w(); ++x) {
                if (!mask[y * video.w() + x]) continue;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    acc += std::abs(video.frames.at4(t, y, x, ch) -
                                    video.frames.at4(0, y, x, ch));
                }
            }
        }
        total += acc / static_cast<double>(masked * c);
    }
    return total / static_cast<double>(video.t() - 1);
}

// Max over chunk boundaries of the absolute difference between chunk i's
// last f frames and chunk i+1's first f frames. Exactly 0 under clamping.
inline double continuity_check(const ChunkPlan& plan, const std::vector<Tensor>& chunk_outputs) {
    if (chunk_outputs.size() != plan.chunks.size()) {
        throw ShapeError("continuity_check: chunk count mismatch with plan");
    }
    if (chunk_outputs.size() <= 1) return 0.0;
    const std::size_t f = static_cast<std::size_t>(plan.overlap);
    const std::size_t s = static_cast<std::size_t>(plan.chunk_len);
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < chunk_outputs.size(); ++i) {
        const Tensor& a = chunk_outputs[i];
        const Tensor& b = chunk_outputs[i + 1];
        if (a.shape[0] != s || b.shape[0] != s) {
            throw ShapeError("continuity_check: chunk output length mismatch with plan");
        }
        const std::size_t per_frame = a.numel() / s;
        const double* tail = a.data.data() + (s - f) * per_frame;
        const double* head = b.data.data();
        for (std::size_t e = 0; e < f * per_frame; ++e) {
            worst = std::max(worst, std::abs(tail[e] - head[e]));
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string id;
    double sync_r{0.0};
    bool sync_constant{false};
    double identity_drift{0.0};
    double continuity_max{0.0};
};

struct MetricReport {
    std::vector<MetricRow> rows;
    nlohmann::ordered_json config_echo;
    std::string build_id;

    double mean_sync() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.sync_r;
        return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    }
    double mean_drift() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.identity_drift;
        return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    }
    double mean_continuity() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.continuity_max;
        return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json rows_j = nlohmann::ordered_json::array();
        for (const auto& r : rows) {
            rows_j.push_back({{"id", r.id},
                              {"sync_r", r.sync_r},
                              {"sync_constant", r.sync_constant},
                              {"identity_drift", r.identity_drift},
                              {"continuity_max", r.continuity_max}});
        }
        return nlohmann::ordered_json{
            {"schema_version", 1},
            {"build_id", build_id},
            {"config", config_echo},
            {"rows", rows_j},
            {"aggregates",
             {{"mean_sync_r", mean_sync()},
              {"mean_identity_drift", mean_drift()},
              {"mean_continuity_max", mean_continuity()}}},
            {"not_computed",
             {{"reason", "metrics below require pretrained scoring networks"},
              {"metrics", {"fid", "fvd", "sync_c", "sync_d", "iqa", "ase"}}}}};
    }
};

inline std::string build_id_string() { return "oav-0.1.0"; }

}  // namespace oav

#pragma once

// Noise schedule, training objective, dual classifier-free guidance, and the
// deterministic sampler with prefix clamping.
//
// Noising: z_k = sqrt(ab[k]) z0 + sqrt(1 - ab[k]) eps, ab = cumulative signal
// fraction. Sampler update (no stochastic term): zhat0 = (x - sqrt(1-ab_k)
// eps_hat) / sqrt(ab_k); x <- sqrt(ab_prev) zhat0 + sqrt(1-ab_prev) eps_hat,
// where ab_prev is the next (lower) selected step, or 1 after the last step.
// Prefix frames are overwritten with sqrt(ab) * prefix before every model
// call and copied verbatim at the end, so they survive sampling exactly.

#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <vector>

#include "oav/dit.hpp"
#include "oav/tensor.hpp"

namespace oav {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    std::vector<double> alpha_bar;  // strictly decreasing, in (0,1)

    int steps() const { return static_cast<int>(alpha_bar.size()); }

    double at(int k) const {
        if (k < 0 || k >= steps()) {
            throw ConfigError("schedule index " + std::to_string(k) + " out of range [0," +
                              std::to_string(steps()) + ")");
        }
        return alpha_bar[static_cast<std::size_t>(k)];
    }

    // Cosine rule with the usual small offset: ab(k) = f(u_k)/f(0),
    // f(u) = cos^2(((u + s)/(1 + s)) * pi/2), u_k = (k+1)/(K+1).
    static NoiseSchedule cosine(int k_steps = 1000, double offset = 0.008) {
        constexpr double half_pi = 1.57079632679489661923;
        auto f = [&](double u) {
            const double c = std::cos((u + offset) / (1.0 + offset) * half_pi);
            return c * c;
        };
        NoiseSchedule s;
        s.alpha_bar.resize(static_cast<std::size_t>(k_steps));
        const double f0 = f(0.0);
        for (int k = 0; k < k_steps; ++k) {
            const double u = static_cast<double>(k + 1) / static_cast<double>(k_steps + 1);
            s.alpha_bar[static_cast<std::size_t>(k)] = f(u) / f0;
        }
        return s;
    }
};

// Normalized timestep value handed to the model for schedule index k.
inline double timestep_value(int k, int k_total) {
    return static_cast<double>(k + 1) / static_cast<double>(k_total);
}

inline Tensor add_noise(const Tensor& z0, int k, const Tensor& eps, const NoiseSchedule& sched) {
    if (!same_shape(z0, eps)) {
        throw ShapeError("add_noise: eps shape " + shape_str(eps.shape) + " != z0 shape " +
                         shape_str(z0.shape));
    }
    const double ab = sched.at(k);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data[i] = sa * z0.data[i] + sb * eps.data[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classifier-free guidance
// ---------------------------------------------------------------------------

struct CfgParams {
    double s_text{4.5};
    double s_audio{4.5};
};

// uncond -> +text -> +audio extrapolation:
// eps = uu + s_text (tu - uu) + s_audio (ta - tu)
inline Tensor cfg_combine(const Tensor& eps_uu, const Tensor& eps_tu, const Tensor& eps_ta,
                          const CfgParams& p) {
    if (!same_shape(eps_uu, eps_tu) || !same_shape(eps_tu, eps_ta)) {
        throw ShapeError("cfg_combine: branch shapes differ");
    }
    Tensor out = eps_uu;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data[i] = eps_uu.data[i] + p.s_text * (eps_tu.data[i] - eps_uu.data[i]) +
                      p.s_audio * (eps_ta.data[i] - eps_tu.data[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loss
// ---------------------------------------------------------------------------

// One training example. prefix holds the clean frames that get clamped; the
// loss covers the remaining frames only.
struct LossBatch {
    Tensor z0;      // [s,h,w,c]
    Tensor prefix;  // [f,h,w,c], f may be 0 (empty tensor)
    int k{0};
};

using DenoiseFn = std::function<Tensor(const Tensor& z_k, double t)>;

// Draws eps as its first use of rng (documented so stubs can predict it),
// noises z0, overwrites the prefix frames with the same-eps noising of the
// clean prefix, and returns the mean squared eps error over non-prefix frames.
inline double training_loss(const DenoiseFn& model, const LossBatch& batch,
                            const NoiseSchedule& sched, Rng& rng) {
    const std::size_t frames = batch.z0.shape[0];
    const std::size_t per_frame = batch.z0.numel() / frames;
    const std::size_t f = batch.prefix.numel() / std::max<std::size_t>(per_frame, 1);
    if (f >= frames) throw ShapeError("training_loss: prefix covers every frame");

    Tensor eps = rand_normal(rng, batch.z0.shape);
    Tensor z_k = add_noise(batch.z0, batch.k, eps, sched);
    if (f > 0) {
        Tensor eps_slice({f, batch.z0.shape[1], batch.z0.shape[2], batch.z0.shape[3]});
        std::copy_n(eps.data.data(), eps_slice.numel(), eps_slice.data.data());
        Tensor noised_prefix = add_noise(batch.prefix, batch.k, eps_slice, sched);
        std::copy_n(noised_prefix.data.data(), noised_prefix.numel(), z_k.data.data());
    }
    Tensor eps_hat = model(z_k, timestep_value(batch.k, sched.steps()));
    if (!same_shape(eps_hat, batch.z0)) {
        throw ShapeError("training_loss: model output shape mismatch");
    }
    double s = 0.0;
    const std::size_t begin = f * per_frame;
    for (std::size_t i = begin; i < eps.numel(); ++i) {
        const double d = eps_hat.data[i] - eps.data[i];
        s += d * d;
    }
    return s / static_cast<double>(eps.numel() - begin);
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

struct SamplerConfig {
    int steps{25};
};

// Evenly spaced schedule indices, descending from K-1 to 0.
inline std::vector<int> sampler_timesteps(int k_total, int steps) {
    if (steps < 1 || steps > k_total) {
        throw ConfigError("sampler steps " + std::to_string(steps) + " outside [1," +
                          std::to_string(k_total) + "]");
    }
    std::vector<int> ts(static_cast<std::size_t>(steps));
    if (steps == 1) {
        ts[0] = k_total - 1;
        return ts;
    }
    for (int j = 0; j < steps; ++j) {
        const double frac = static_cast<double>(steps - 1 - j) / static_cast<double>(steps - 1);
        ts[static_cast<std::size_t>(j)] =
            static_cast<int>(std::lround(frac * static_cast<double>(k_total - 1)));
    }
    return ts;
}

// eps_hat for one guidance branch. with_text=false uses the null text;
// with_audio=false must not read packed audio at all.
using GuidedEps = std::function<Tensor(const Tensor& z, double t, bool with_text, bool with_audio)>;

inline GuidedEps make_dit_guided(const ModelParams& params, const TextEmbedding& text,
                                 const std::optional<Tensor>& packed_audio,
                                 const Tensor& ref) {
    TextEmbedding null_emb = null_text(params.config.d_model);
    return [&params, text, null_emb, packed_audio, ref](const Tensor& z, double t,
                                                        bool with_text, bool with_audio) {
        const TextEmbedding& te = with_text ? text : null_emb;
        std::optional<Tensor> audio;
        if (with_audio) {
            if (!packed_audio) throw ConfigError("audio branch requested without audio");
            audio = *packed_audio;
        }
        return dit_forward(params, z, t, te, audio, ref);
    };
}

struct SampleTraceRow {
    int k;
    double mean_abs_eps;
    double mean_abs_z;
};

inline int& thread_mode() {
    static int mode = 1;  // 1 = sequential; 0 = auto (parallel CFG branches)
    return mode;
}

// Deterministic guided sampling. z_init holds the prefix frames (clean) in
// its first rows and noise elsewhere; audio_present selects whether the
// third guidance branch runs (when false eps_ta = eps_tu and packed audio is
// never touched). The returned tensor's first prefix_len frames equal the
// clean prefix bitwise.
inline Tensor sample(const GuidedEps& model, const Tensor& z_init, bool audio_present,
                     const NoiseSchedule& sched, const SamplerConfig& sampler,
                     const CfgParams& cfg, const Tensor& prefix,
                     std::vector<SampleTraceRow>* trace = nullptr) {
    const std::size_t frames = z_init.shape[0];
    const std::size_t per_frame = z_init.numel() / frames;
    const std::size_t f = prefix.numel() / std::max<std::size_t>(per_frame, 1);
    if (f >= frames) throw ShapeError("sample: prefix must be shorter than the chunk");

    const std::vector<int> ts = sampler_timesteps(sched.steps(), sampler.steps);
    Tensor x = z_init;

    auto clamp_prefix = [&](double ab) {
        const double sa = std::sqrt(ab);
        for (std::size_t i = 0; i < f * per_frame; ++i) x.data[i] = sa * prefix.data[i];
    };

    for (std::size_t j = 0; j < ts.size(); ++j) {
        const int k = ts[j];
        const double ab = sched.at(k);
        if (f > 0) clamp_prefix(ab);
        const double t = timestep_value(k, sched.steps());

        Tensor eps_uu, eps_tu, eps_ta;
        if (thread_mode() == 0) {
            auto fu = std::async(std::launch::async,
                                 [&] { return model(x, t, false, false); });
            auto ft = std::async(std::launch::async,
                                 [&] { return model(x, t, true, false); });
            if (audio_present) {
                eps_ta = model(x, t, true, true);
            }
            eps_uu = fu.get();
            eps_tu = ft.get();
            if (!audio_present) eps_ta = eps_tu;
        } else {
            eps_uu = model(x, t, false, false);
            eps_tu = model(x, t, true, false);
            eps_ta = audio_present ? model(x, t, true, true) : eps_tu;
        }
        Tensor eps_hat = cfg_combine(eps_uu, eps_tu, eps_ta, cfg);
        if (!eps_hat.all_finite()) {
            throw NumericError("non-finite guidance at schedule step k=" + std::to_string(k));
        }

        const double ab_prev = (j + 1 < ts.size()) ? sched.at(ts[j + 1]) : 1.0;
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double zhat0 = (x.data[i] - sb * eps_hat.data[i]) / sa;
            x.data[i] = pa * zhat0 + pb * eps_hat.data[i];
        }
        if (!x.all_finite()) {
            throw NumericError("non-finite latent after schedule step k=" + std::to_string(k));
        }
        if (trace) {
            double me = 0.0, mz = 0.0;
            for (double v : eps_hat.data) me += std::abs(v);
            for (double v : x.data) mz += std::abs(v);
            trace->push_back({k, me / static_cast<double>(eps_hat.numel()),
                              mz / static_cast<double>(x.numel())});
        }
    }
    // final clamp at ab = 1: exact copy of the clean prefix
    if (f > 0) std::copy_n(prefix.data.data(), f * per_frame, x.data.data());
    return x;
}

}  // namespace oav

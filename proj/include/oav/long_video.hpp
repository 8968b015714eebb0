#pragma once

// Chunked long-video inference: loop-count computation, audio padding,
// prefix/overlap scheduling, chunkwise guided denoising, and stitching.
//
// The total latent length is l (audio latents) + 1 (front slot holding the
// reference latent) + l_pad (tail padding so the chunk grid covers the end
// exactly). Chunk 0 denoises [0, s) with the reference latent clamped as a
// one-frame prefix; chunk i>0 steps back by the overlap f and clamps the f
// frames already denoised by its predecessor. The reference latent is also
// channel-concatenated into every forward pass as the identity anchor. After
// all chunks, slots [1, total - l_pad) decode to the output video.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oav/audio.hpp"
#include "oav/codec.hpp"
#include "oav/diffusion.hpp"
#include "oav/dit.hpp"
#include "oav/tensor.hpp"

namespace oav {

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

struct ChunkSpec {
    int audio_start;  // n: first padded-audio row consumed (== write_begin)
    int prefix_len;   // overlap decrement f_i: 0 for chunk 0, f afterwards
    int write_begin;
    int write_end;  // exclusive; write_end - write_begin == s
};

struct ChunkPlan {
    int loops{0};  // N
    int l_pad{0};
    int total{0};  // l + 1 + l_pad
    int chunk_len{0};
    int overlap{0};
    std::vector<ChunkSpec> chunks;
};

// Minimal N with s + (N-1)(s-f) >= l + 1, and the tail padding that makes
// coverage exact.
inline std::pair<int, int> find_loop_n(int l, int s, int f) {
    if (f < 1 || f >= s) {
        throw ConfigError("overlap f=" + std::to_string(f) + " must satisfy 1 <= f < s=" +
                          std::to_string(s));
    }
    if (l < 1) throw ConfigError("audio latent length must be >= 1");
    const int need = l + 1;  // one front slot for the reference latent
    int n = 1;
    if (need > s) {
        const int stride = s - f;
        n = 1 + (need - s + stride - 1) / stride;
    }
    const int l_pad = s + (n - 1) * (s - f) - need;
    return {n, l_pad};
}

inline ChunkPlan plan(int l, int s, int f) {
    const auto [n, l_pad] = find_loop_n(l, s, f);
    ChunkPlan p;
    p.loops = n;
    p.l_pad = l_pad;
    p.total = l + 1 + l_pad;
    p.chunk_len = s;
    p.overlap = f;
    for (int i = 0; i < n; ++i) {
        const int begin = i * (s - f);
        p.chunks.push_back({begin, i == 0 ? 0 : f, begin, begin + s});
    }
    return p;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenerationRequest {
    Waveform waveform;
    std::string prompt;
    Tensor ref_image;  // [H, W, C] single video frame, values in [0,1]
    double fps{16.0};
    int chunk_s{9};    // chunk length in latent frames
    int overlap_f{4};  // latent overlap; 4 latent frames span 13 video frames
    std::uint64_t seed{0};
    CfgParams cfg;
    SamplerConfig sampler;
    bool drop_audio{false};  // null-audio baseline: audio is never read
};

struct GenerationTrace {
    ChunkPlan chunk_plan;
    std::vector<Tensor> chunk_outputs;  // denoised [s,h,w,c] per chunk
    Tensor stitched;                    // [total,h,w,c] before trimming
    std::vector<SampleTraceRow> sampler_rows;
};

// Number of video frames the request's waveform supports: the largest
// T = 1 (mod 4) whose windows fit in the waveform.
inline std::size_t frames_from_waveform(const Waveform& w, double fps) {
    const std::size_t t_raw =
        static_cast<std::size_t>(static_cast<double>(w.n()) * fps / w.sample_rate);
    if (t_raw < 1) {
        throw LengthError("waveform shorter than one video frame");
    }
    std::size_t t = t_raw;
    while (t % 4 != 1) --t;
    return t;
}

inline VideoTensor generate_long(const ModelParams& params, const NoiseSchedule& sched,
                                 const CodecParams& codec, const GenerationRequest& req,
                                 GenerationTrace* trace = nullptr) {
    if (req.overlap_f < 1 || req.overlap_f >= req.chunk_s) {
        throw ConfigError("request overlap must satisfy 1 <= f < s");
    }
    const std::size_t t_frames = frames_from_waveform(req.waveform, req.fps);

    // reference latent: encode the single reference frame (T=1 path)
    VideoTensor ref_video{Tensor({1, req.ref_image.shape[0], req.ref_image.shape[1],
                                  req.ref_image.shape[2]}),
                          req.fps};
    std::copy_n(req.ref_image.data.data(), req.ref_image.numel(),
                ref_video.frames.data.data());
    const LatentVideo ref_lat = encode(ref_video, codec);
    const std::size_t h = ref_lat.h(), w = ref_lat.w(), c = ref_lat.c();
    Tensor z_ref({h, w, c});
    std::copy_n(ref_lat.latents.data.data(), z_ref.numel(), z_ref.data.data());

    // packed audio, padded: one zero row in front (reference slot) + tail pad
    const Tensor feats = extract_features(req.waveform, req.fps, t_frames);
    const Tensor z_a = pack(feats, params.at("audio.pack.w"));
    const int l = static_cast<int>(z_a.shape[0]);
    const ChunkPlan cp = plan(l, req.chunk_s, req.overlap_f);
    const std::size_t d_pack = z_a.shape[1];
    Tensor padded_audio({static_cast<std::size_t>(cp.total), d_pack});
    std::copy_n(z_a.data.data(), z_a.numel(), padded_audio.data.data() + d_pack);

    const TextEmbedding text = embed_prompt(req.prompt, params.config.d_model);
    const std::size_t per_frame = h * w * c;
    Tensor stitched({static_cast<std::size_t>(cp.total), h, w, c});
    Rng rng(req.seed);
    const std::size_t s = static_cast<std::size_t>(req.chunk_s);
    const std::size_t f = static_cast<std::size_t>(req.overlap_f);

    if (trace) trace->chunk_plan = cp;

    for (std::size_t i = 0; i < cp.chunks.size(); ++i) {
        const ChunkSpec& ck = cp.chunks[i];
        const std::size_t prefix_frames = (i == 0) ? 1 : f;

        // clean prefix: the reference latent for chunk 0, the predecessor's
        // freshly denoised suffix afterwards
        Tensor prefix({prefix_frames, h, w, c});
        if (i == 0) {
            std::copy_n(z_ref.data.data(), per_frame, prefix.data.data());
        } else {
            std::copy_n(stitched.data.data() +
                            static_cast<std::size_t>(ck.write_begin) * per_frame,
                        prefix_frames * per_frame, prefix.data.data());
        }

        Tensor x_init({s, h, w, c});
        std::copy_n(prefix.data.data(), prefix.numel(), x_init.data.data());
        for (std::size_t e = prefix.numel(); e < x_init.numel(); ++e) {
            x_init.data[e] = rng.normal();
        }

        std::optional<Tensor> audio_window;
        if (!req.drop_audio) {
            Tensor win({s, d_pack});
            std::copy_n(padded_audio.data.data() +
                            static_cast<std::size_t>(ck.audio_start) * d_pack,
                        win.numel(), win.data.data());
            audio_window = std::move(win);
        }

        GuidedEps model = make_dit_guided(params, text, audio_window, z_ref);
        Tensor z_chunk = sample(model, x_init, audio_window.has_value(), sched, req.sampler,
                                req.cfg, prefix, trace ? &trace->sampler_rows : nullptr);

        std::copy_n(z_chunk.data.data(), z_chunk.numel(),
                    stitched.data.data() + static_cast<std::size_t>(ck.write_begin) * per_frame);
        if (trace) trace->chunk_outputs.push_back(std::move(z_chunk));
    }

    if (trace) trace->stitched = stitched;

    // drop the reference slot and the tail padding, then decode
    LatentVideo out_lat{Tensor({static_cast<std::size_t>(l), h, w, c})};
    std::copy_n(stitched.data.data() + per_frame, out_lat.latents.numel(),
                out_lat.latents.data.data());
    return decode(out_lat, codec, req.fps);
}

}  // namespace oav

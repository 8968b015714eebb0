#pragma once

// Synthetic paired audio/video corpus. Each sample is a static seeded "face"
// whose mouth rectangle's brightness is an exact affine function of the audio
// envelope (0.1 + 0.8 * env), so lip sync is verifiable analytically. The
// waveform is a sum of seeded sinusoids at DFT-bin frequencies, held at a
// constant envelope value within each frame window, which makes the per-frame
// RMS exactly proportional to the envelope.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oav/audio.hpp"
#include "oav/codec.hpp"
#include "oav/metrics.hpp"
#include "oav/tensor.hpp"

namespace oav {

inline const std::vector<std::pair<std::string, double>>& prompt_templates() {
    static const std::vector<std::pair<std::string, double>> t = {
        {"a round face speaking, dark plain background", 0.15},
        {"a round face speaking, dim gray background", 0.35},
        {"a round face speaking, light gray background", 0.65},
        {"a round face speaking, bright plain background", 0.85},
    };
    return t;
}

struct SynthSample {
    Waveform waveform;
    VideoTensor video;
    std::string prompt;
    std::uint64_t identity_seed{0};
    Tensor envelope;  // [T], ground-truth per-frame amplitude in [0,1]
    Roi mouth_roi;
};

inline SynthSample synth_sample(std::uint64_t seed, int t_frames, int height, int width,
                                double fps = 16.0, bool silent = false) {
    if (t_frames % 4 != 1) {
        throw AlignmentError("synth_sample: T=" + std::to_string(t_frames) +
                             " must be 1 mod 4");
    }
    if (height < 8 || width < 8 || height % 2 != 0 || width % 2 != 0) {
        throw AlignmentError("synth_sample: H and W must be even and >= 8");
    }
    const double sr = 8000.0;
    if (std::fmod(sr, fps) != 0.0) {
        throw ConfigError("synth_sample: sample rate must be a multiple of fps");
    }
    const std::size_t win = static_cast<std::size_t>(sr / fps);
    const std::size_t t_sz = static_cast<std::size_t>(t_frames);

    Rng rng(seed);
    SynthSample s;
    s.identity_seed = seed;

    const auto& templates = prompt_templates();
    const std::size_t prompt_id = rng.below(templates.size());
    s.prompt = templates[prompt_id].first;
    const double bg = templates[prompt_id].second;

    // envelope: control points every 4 frames, cosine-interpolated; constant
    // within each frame window by construction
    const std::size_t n_cp = t_sz / 4 + 2;
    std::vector<double> cp(n_cp);
    for (double& v : cp) v = 0.05 + 0.95 * rng.uniform01();
    s.envelope = Tensor({t_sz});
    for (std::size_t t = 0; t < t_sz; ++t) {
        const std::size_t i = t / 4;
        const double u = static_cast<double>(t % 4) / 4.0;
        const double wgt = 0.5 * (1.0 - std::cos(3.14159265358979323846 * u));
        s.envelope.data[t] = silent ? 0.0 : cp[i] * (1.0 - wgt) + cp[i + 1] * wgt;
    }

    // waveform: 2-4 sinusoids at DFT-bin-exact frequencies, unit-normalized
    const std::size_t n_sines = 2 + rng.below(3);
    std::vector<double> bins(n_sines), amps(n_sines), phases(n_sines);
    double amp_sum = 0.0;
    for (std::size_t i = 0; i < n_sines; ++i) {
        bins[i] = static_cast<double>(2 + rng.below(kAudioDftBins - 1));  // bins 2..14
        amps[i] = 0.3 + 0.7 * rng.uniform01();
        phases[i] = 2.0 * 3.14159265358979323846 * rng.uniform01();
        amp_sum += amps[i];
    }
    s.waveform.sample_rate = sr;
    s.waveform.samples = Tensor({t_sz * win});
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t t = 0; t < t_sz; ++t) {
        const double env = s.envelope.data[t];
        for (std::size_t i = 0; i < win; ++i) {
            double v = 0.0;
            for (std::size_t k = 0; k < n_sines; ++k) {
                v += amps[k] * std::sin(two_pi * bins[k] * static_cast<double>(i) /
                                            static_cast<double>(win) +
                                        phases[k]);
            }
            s.waveform.samples.data[t * win + i] = env * v / amp_sum;
        }
    }

    // static face over a prompt-controlled background; only the mouth varies
    const std::size_t h = static_cast<std::size_t>(height), w = static_cast<std::size_t>(width);
    const double cy = static_cast<double>(h) / 2.0, cx = static_cast<double>(w) / 2.0;
    const double radius = 0.38 * static_cast<double>(std::min(h, w));
    const double face_val = 0.45 + 0.1 * rng.uniform01();
    const int eye_dx = 1 + static_cast<int>(rng.below(2));

    Tensor frame0({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            frame0.data[y * w + x] = (dy * dy + dx * dx <= radius * radius) ? face_val : bg;
        }
    }
    const int er = static_cast<int>(cy - radius / 2.0);
    const int ec1 = static_cast<int>(cx) - eye_dx - 1;
    const int ec2 = static_cast<int>(cx) + eye_dx;
    frame0.data[static_cast<std::size_t>(er) * w + static_cast<std::size_t>(ec1)] = 0.05;
    frame0.data[static_cast<std::size_t>(er) * w + static_cast<std::size_t>(ec2)] = 0.05;

    const int mr0 = static_cast<int>(cy + radius / 3.0);
    s.mouth_roi = Roi{mr0, mr0 + std::max(2, height / 8), static_cast<int>(cx) - width / 4,
                      static_cast<int>(cx) + width / 4};

    s.video.fps = fps;
    s.video.frames = Tensor({t_sz, h, w, 1});
    for (std::size_t t = 0; t < t_sz; ++t) {
        double* dst = s.video.frames.data.data() + t * h * w;
        std::copy_n(frame0.data.data(), h * w, dst);
        const double mouth = 0.1 + 0.8 * s.envelope.data[t];
        for (int y = s.mouth_roi.r0; y < s.mouth_roi.r1; ++y) {
            for (int x = s.mouth_roi.c0; x < s.mouth_roi.c1; ++x) {
                dst[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = mouth;
            }
        }
    }
    return s;
}

// Quality-filter stand-in: keep a sample iff its measured sync correlation
// reaches the threshold.
inline bool filter(const SynthSample& s, double min_sync) {
    return sync_proxy(s.video, s.waveform, s.mouth_roi, s.video.fps).r >= min_sync;
}

// ---------------------------------------------------------------------------
// Manifest + corpus builder
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::string wav_file, video_file, latent_file, packed_file, features_file, envelope_file;
    std::string prompt;
    int t_frames{0};
    double fps{16.0};
    Roi mouth_roi;
    std::string split;  // "train" | "test"
};

struct Manifest {
    int schema_version{1};
    std::uint64_t seed{0};
    std::uint64_t codec_seed{0};
    std::string codec_file;
    std::string pack_file;
    std::string root_dir;
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> split_entries(const std::string& split) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries) {
            if (e.split == split) out.push_back(&e);
        }
        return out;
    }

    std::string path_of(const std::string& file) const {
        return (std::filesystem::path(root_dir) / file).string();
    }
};

namespace detail {

inline void atomic_write_tensor(const std::string& path, const Tensor& t,
                                TensorDType dtype = TensorDType::f64) {
    const std::string tmp = path + ".tmp";
    save_tensor(tmp, t, dtype);
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_wav(const std::string& path, const Waveform& w) {
    const std::string tmp = path + ".tmp";
    save_wav(tmp, w);
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        out << text;
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

struct CorpusShape {
    int t_frames{33};
    int height{16};
    int width{16};
    double fps{16.0};
};

inline Manifest build_corpus(int n_train, int n_test, std::uint64_t seed,
                             const std::string& out_dir, const CorpusShape& shape = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    Manifest m;
    m.seed = seed;
    m.codec_seed = mix_seed(seed, 1001);
    m.root_dir = out_dir;
    m.codec_file = "codec_mix.oavt";
    m.pack_file = "pack_w.oavt";

    const CodecParams codec = make_codec_params(m.codec_seed);
    Rng pack_rng(mix_seed(seed, 1002));
    Tensor w_pack = rand_normal(pack_rng, {4 * kAudioFeatureDim, kAudioPackDim});
    const double pack_scale = 1.0 / std::sqrt(static_cast<double>(4 * kAudioFeatureDim));
    for (double& v : w_pack.data) v *= pack_scale;

    detail::atomic_write_tensor((fs::path(out_dir) / m.codec_file).string(), codec.mix);
    detail::atomic_write_tensor((fs::path(out_dir) / m.pack_file).string(), w_pack);

    const int total = n_train + n_test;
    for (int i = 0; i < total; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%04d", i);
        const std::string id(buf);
        const SynthSample s =
            synth_sample(mix_seed(seed, static_cast<std::uint64_t>(i)), shape.t_frames,
                         shape.height, shape.width, shape.fps);

        ManifestEntry e;
        e.id = id;
        e.wav_file = id + ".wav";
        e.video_file = id + ".video.oavt";
        e.latent_file = id + ".latent.oavt";
        e.packed_file = id + ".packed.oavt";
        e.features_file = id + ".feats.oavt";
        e.envelope_file = id + ".env.oavt";
        e.prompt = s.prompt;
        e.t_frames = shape.t_frames;
        e.fps = shape.fps;
        e.mouth_roi = s.mouth_roi;
        e.split = i < n_train ? "train" : "test";

        const Tensor feats =
            extract_features(s.waveform, shape.fps, static_cast<std::size_t>(shape.t_frames));
        const Tensor packed = pack(feats, w_pack);
        const LatentVideo lat = encode(s.video, codec);

        detail::atomic_write_wav((fs::path(out_dir) / e.wav_file).string(), s.waveform);
        detail::atomic_write_tensor((fs::path(out_dir) / e.video_file).string(), s.video.frames);
        detail::atomic_write_tensor((fs::path(out_dir) / e.latent_file).string(), lat.latents);
        detail::atomic_write_tensor((fs::path(out_dir) / e.packed_file).string(), packed);
        detail::atomic_write_tensor((fs::path(out_dir) / e.features_file).string(), feats);
        detail::atomic_write_tensor((fs::path(out_dir) / e.envelope_file).string(), s.envelope);
        m.entries.push_back(std::move(e));
    }

    nlohmann::ordered_json entries_j = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        entries_j.push_back({{"id", e.id},
                             {"wav", e.wav_file},
                             {"video", e.video_file},
                             {"latent", e.latent_file},
                             {"packed", e.packed_file},
                             {"features", e.features_file},
                             {"envelope", e.envelope_file},
                             {"prompt", e.prompt},
                             {"T", e.t_frames},
                             {"fps", e.fps},
                             {"mouth_roi",
                              {{"r0", e.mouth_roi.r0},
                               {"r1", e.mouth_roi.r1},
                               {"c0", e.mouth_roi.c0},
                               {"c1", e.mouth_roi.c1}}},
                             {"split", e.split}});
    }
    nlohmann::ordered_json j{{"schema_version", m.schema_version},
                             {"seed", m.seed},
                             {"codec_seed", m.codec_seed},
                             {"codec_file", m.codec_file},
                             {"pack_file", m.pack_file},
                             {"entries", entries_j}};
    detail::atomic_write_text((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
    return m;
}

inline Manifest load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest parse error in " + manifest_path + ": " + e.what());
    }
    Manifest m;
    m.schema_version = j.at("schema_version");
    if (m.schema_version != 1) {
        throw FormatError("unknown manifest schema version in " + manifest_path);
    }
    m.seed = j.at("seed");
    m.codec_seed = j.at("codec_seed");
    m.codec_file = j.at("codec_file");
    m.pack_file = j.at("pack_file");
    m.root_dir = std::filesystem::path(manifest_path).parent_path().string();
    for (const auto& ej : j.at("entries")) {
        ManifestEntry e;
        e.id = ej.at("id");
        e.wav_file = ej.at("wav");
        e.video_file = ej.at("video");
        e.latent_file = ej.at("latent");
        e.packed_file = ej.at("packed");
        e.features_file = ej.at("features");
        e.envelope_file = ej.at("envelope");
        e.prompt = ej.at("prompt");
        e.t_frames = ej.at("T");
        e.fps = ej.at("fps");
        const auto& r = ej.at("mouth_roi");
        e.mouth_roi = Roi{r.at("r0"), r.at("r1"), r.at("c0"), r.at("c1")};
        e.split = ej.at("split");
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace oav

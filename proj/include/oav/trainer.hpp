#pragma once

// Training loop: precomputed latents, random prefix length, audio/text
// dropout for the guidance branches, Adam, and exactly-resumable state.
//
// Determinism contract: every random draw of step i comes from a stream
// derived from (seed, i) alone, in a fixed order (sample index, clip start,
// prefix length, audio-drop u, text-drop u, schedule index k, then the noise
// tensor; batch items sequentially). Resuming from a saved state therefore
// reproduces the uninterrupted parameter trajectory bitwise.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oav/checkpoint.hpp"
#include "oav/corpus.hpp"
#include "oav/diffusion.hpp"
#include "oav/dit.hpp"
#include "oav/tensor.hpp"

namespace oav {

struct TrainConfig {
    TrainMode mode{TrainMode::lora};
    int steps{300};
    int batch_size{1};
    double lr{1e-3};
    double audio_dropout_p{0.10};
    double text_dropout_p{0.10};
    int prefix_min{1};
    int prefix_max{4};
    int clip_len{9};  // latent frames per training clip; prefix stays inside it
    std::uint64_t seed{0};
    std::string manifest_path;
    std::string checkpoint_dir;
    int checkpoint_interval{0};  // 0 = final checkpoint only
    int log_interval{25};
    std::string log_path;     // empty = no training log
    int sched_steps{1000};
    DiTConfig model{};
    std::string resume_from;  // optional state file

    void validate() const {
        if (audio_dropout_p < 0.0 || audio_dropout_p > 1.0 || text_dropout_p < 0.0 ||
            text_dropout_p > 1.0) {
            throw ConfigError("dropout probabilities must lie in [0,1]");
        }
        if (prefix_min < 1 || prefix_min > prefix_max || prefix_max >= clip_len) {
            throw ConfigError("prefix range [" + std::to_string(prefix_min) + "," +
                              std::to_string(prefix_max) + "] must fit inside clip length " +
                              std::to_string(clip_len));
        }
        if (steps < 0 || batch_size < 1) throw ConfigError("bad steps/batch size");
    }
};

struct TrainState {
    std::int64_t step{0};  // completed steps
    double ema_loss{0.0};
    bool ema_init{false};
    std::uint64_t seed{0};
    TrainMode mode{TrainMode::lora};
    ModelParams params;
    std::map<std::string, Tensor> adam_m, adam_v;
};

// ---------------------------------------------------------------------------
// State file ("OAVS"): magic, version, scalar fields, config JSON, then the
// named tensor sections for params and Adam moments.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_str(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_named_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    write_str(out, name);
    write_u64(out, t.rank());
    for (std::size_t e : t.shape) write_u64(out, e);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw FormatError("truncated train state");
    return v;
}
inline double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw FormatError("truncated train state");
    return v;
}
inline std::string read_str(std::ifstream& in) {
    const std::uint64_t n = read_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("truncated train state");
    return s;
}
inline std::pair<std::string, Tensor> read_named_tensor(std::ifstream& in) {
    std::string name = read_str(in);
    const std::uint64_t rank = read_u64(in);
    Shape shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) shape[i] = read_u64(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw FormatError("truncated train state");
    return {std::move(name), std::move(t)};
}

}  // namespace detail

inline void save_train_state(const std::string& path, const TrainState& st) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path);
    out.write("OAVS", 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    detail::write_u64(out, static_cast<std::uint64_t>(st.step));
    detail::write_f64(out, st.ema_loss);
    detail::write_u64(out, st.ema_init ? 1 : 0);
    detail::write_u64(out, st.seed);
    detail::write_str(out, to_string(st.mode));
    detail::write_str(out, st.params.config.to_json().dump());
    detail::write_u64(out, st.params.tensors.size());
    for (const auto& [name, t] : st.params.tensors) detail::write_named_tensor(out, name, t);
    detail::write_u64(out, st.adam_m.size());
    for (const auto& [name, t] : st.adam_m) detail::write_named_tensor(out, name, t);
    detail::write_u64(out, st.adam_v.size());
    for (const auto& [name, t] : st.adam_v) detail::write_named_tensor(out, name, t);
    if (!out) throw IoError("write failed: " + path);
}

// Loads a state file written by save_train_state. Throws FormatError without
// returning partial state when the file is corrupt.
inline TrainState resume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open train state: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "OAVS", 4) != 0) {
        throw FormatError("bad train-state magic in " + path);
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || version != 1) {
        throw FormatError("unknown train-state version in " + path);
    }
    TrainState st;
    st.step = static_cast<std::int64_t>(detail::read_u64(in));
    st.ema_loss = detail::read_f64(in);
    st.ema_init = detail::read_u64(in) != 0;
    st.seed = detail::read_u64(in);
    st.mode = train_mode_from_string(detail::read_str(in));
    st.params.config = DiTConfig::from_json(nlohmann::json::parse(detail::read_str(in)));
    const std::uint64_t n_params = detail::read_u64(in);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        auto [name, t] = detail::read_named_tensor(in);
        st.params.tensors[name] = std::move(t);
    }
    const std::uint64_t n_m = detail::read_u64(in);
    for (std::uint64_t i = 0; i < n_m; ++i) {
        auto [name, t] = detail::read_named_tensor(in);
        st.adam_m[name] = std::move(t);
    }
    const std::uint64_t n_v = detail::read_u64(in);
    for (std::uint64_t i = 0; i < n_v; ++i) {
        auto [name, t] = detail::read_named_tensor(in);
        st.adam_v[name] = std::move(t);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

struct TrainSampleData {
    Tensor latent;    // [L,h,w,c]
    Tensor feats;     // [T,d_a]
    Tensor ref;       // [h,w,c] = latent frame 0
    TextEmbedding text;
};

}  // namespace detail

// The random decisions of one batch item, in their fixed draw order.
struct StepDraws {
    std::size_t sample_idx;
    std::size_t clip_start;
    std::size_t prefix_len;
    bool drop_audio;
    bool drop_text;
    int k;
};

inline Rng step_rng(std::uint64_t seed, std::int64_t step) {
    return Rng(mix_seed(seed, 0x57E9000000000000ULL + static_cast<std::uint64_t>(step)));
}

inline StepDraws draw_step(Rng& rng, std::size_t n_samples, std::size_t n_starts,
                           const TrainConfig& cfg, int sched_steps) {
    StepDraws d;
    d.sample_idx = rng.below(n_samples);
    d.clip_start = rng.below(n_starts);
    d.prefix_len = static_cast<std::size_t>(cfg.prefix_min) +
                   rng.below(static_cast<std::uint64_t>(cfg.prefix_max - cfg.prefix_min + 1));
    d.drop_audio = rng.uniform01() < cfg.audio_dropout_p;
    d.drop_text = rng.uniform01() < cfg.text_dropout_p;
    d.k = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched_steps)));
    return d;
}

struct StepLog {
    std::int64_t step;
    double loss;
    double ema_loss;
};

// Runs (or resumes) training and returns the final parameters. Writes the
// final checkpoint plus train_state.bin under cfg.checkpoint_dir when set.
inline ModelParams train(const TrainConfig& cfg, std::vector<StepLog>* step_logs = nullptr) {
    cfg.validate();
    const Manifest mf = load_manifest(cfg.manifest_path);
    const auto train_entries = mf.split_entries("train");
    if (train_entries.empty()) {
        throw IoError("no train entries in manifest " + cfg.manifest_path);
    }

    TrainState st;
    if (!cfg.resume_from.empty()) {
        st = resume(cfg.resume_from);
        if (st.mode != cfg.mode) throw ConfigError("resume state was trained in another mode");
    } else {
        st.seed = cfg.seed;
        st.mode = cfg.mode;
        st.params = init_params(cfg.model, mix_seed(cfg.seed, 0xBA5E));
        if (cfg.mode == TrainMode::lora) {
            add_lora_adapters(st.params, mix_seed(cfg.seed, 0x10A));
        }
        st.params.tensors["codec.mix"] = load_tensor(mf.path_of(mf.codec_file));
    }

    std::vector<detail::TrainSampleData> data;
    data.reserve(train_entries.size());
    for (const ManifestEntry* e : train_entries) {
        detail::TrainSampleData d;
        d.latent = load_tensor(mf.path_of(e->latent_file));
        d.feats = load_tensor(mf.path_of(e->features_file));
        const std::size_t per_frame = d.latent.numel() / d.latent.shape[0];
        d.ref = Tensor({d.latent.shape[1], d.latent.shape[2], d.latent.shape[3]});
        std::copy_n(d.latent.data.data(), per_frame, d.ref.data.data());
        d.text = embed_prompt(e->prompt, st.params.config.d_model);
        data.push_back(std::move(d));
    }
    const std::size_t latent_frames = data.front().latent.shape[0];
    if (static_cast<std::size_t>(cfg.clip_len) > latent_frames) {
        throw ConfigError("clip length " + std::to_string(cfg.clip_len) +
                          " exceeds stored latent length " + std::to_string(latent_frames));
    }
    const std::set<std::string> trainset = trainable_params(cfg.mode, st.params);
    const NoiseSchedule sched = NoiseSchedule::cosine(cfg.sched_steps);
    const TextEmbedding null_emb = null_text(st.params.config.d_model);

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, cfg.resume_from.empty() ? std::ios::trunc : std::ios::app);
        if (!log) throw IoError("cannot open training log: " + cfg.log_path);
    }

    const std::size_t s = static_cast<std::size_t>(cfg.clip_len);
    const std::size_t h = data.front().latent.shape[1];
    const std::size_t w = data.front().latent.shape[2];
    const std::size_t c = data.front().latent.shape[3];
    const std::size_t hw = h * w;
    const std::size_t per_frame = hw * c;

    for (std::int64_t step = st.step; step < cfg.steps; ++step) {
        Rng rng = step_rng(cfg.seed, step);
        ParamGraph pg{st.params, &trainset, true, {}};
        NodePtr loss;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const StepDraws dr =
                draw_step(rng, data.size(), latent_frames - s + 1, cfg, sched.steps());
            const detail::TrainSampleData& d = data[dr.sample_idx];
            const std::size_t start = dr.clip_start;
            const std::size_t prefix_len = dr.prefix_len;
            const bool drop_audio = dr.drop_audio;
            const bool drop_text = dr.drop_text;
            const int k = dr.k;

            Tensor z0({s, h, w, c});
            std::copy_n(d.latent.data.data() + start * per_frame, z0.numel(), z0.data.data());
            Tensor eps = rand_normal(rng, z0.shape);
            Tensor z_k = add_noise(z0, k, eps, sched);
            {
                // overwrite the prefix frames with the same-eps noising of the
                // clean prefix (the clip's own first frames)
                Tensor prefix({prefix_len, h, w, c});
                std::copy_n(z0.data.data(), prefix.numel(), prefix.data.data());
                Tensor eps_slice({prefix_len, h, w, c});
                std::copy_n(eps.data.data(), eps_slice.numel(), eps_slice.data.data());
                Tensor noised = add_noise(prefix, k, eps_slice, sched);
                std::copy_n(noised.data.data(), noised.numel(), z_k.data.data());
            }

            std::optional<NodePtr> audio_node;
            if (!drop_audio) {
                NodePtr za_full = pack_node(d.feats, pg.leaf_of("audio.pack.w"));
                audio_node = slice_rows(za_full, start, start + s);
            }
            const TextEmbedding& text = drop_text ? null_emb : d.text;
            NodePtr eps_hat = dit_forward_node(pg, z_k, timestep_value(k, sched.steps()), text,
                                               audio_node, d.ref);
            NodePtr pred2d = reshape(eps_hat, {s * hw, c});
            NodePtr item_loss =
                mse_rows(pred2d, eps.reshaped({s * hw, c}), prefix_len * hw, s * hw);
            loss = loss ? add(loss, item_loss) : item_loss;
        }
        if (cfg.batch_size > 1) loss = scale(loss, 1.0 / cfg.batch_size);
        backward(loss);

        // Adam
        const double gs = static_cast<double>(step + 1);
        const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, gs), bc2 = 1.0 - std::pow(b2, gs);
        for (const std::string& name : trainset) {
            Tensor& p = st.params.tensors.at(name);
            auto mi = st.adam_m.find(name);
            if (mi == st.adam_m.end()) {
                st.adam_m[name] = Tensor(p.shape);
                st.adam_v[name] = Tensor(p.shape);
                mi = st.adam_m.find(name);
            }
            Tensor& m = mi->second;
            Tensor& v = st.adam_v.at(name);
            const Tensor* g = nullptr;
            auto ci = pg.cache.find(name);
            if (ci != pg.cache.end() && ci->second->grad.numel() == p.numel()) {
                g = &ci->second->grad;
            }
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = g ? g->data[i] : 0.0;
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= cfg.lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + adam_eps);
            }
        }

        const double loss_val = loss->value.data[0];
        if (!st.ema_init) {
            st.ema_loss = loss_val;
            st.ema_init = true;
        } else {
            st.ema_loss = 0.99 * st.ema_loss + 0.01 * loss_val;
        }
        st.step = step + 1;
        if (step_logs) step_logs->push_back({st.step, loss_val, st.ema_loss});
        if (log.is_open() && (st.step % cfg.log_interval == 0 || st.step == cfg.steps)) {
            nlohmann::ordered_json row{{"step", st.step},
                                       {"loss", loss_val},
                                       {"ema_loss", st.ema_loss},
                                       {"mode", to_string(cfg.mode)}};
            log << row.dump() << "\n";
        }
        if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
            st.step % cfg.checkpoint_interval == 0 && st.step != cfg.steps) {
            save_checkpoint(cfg.checkpoint_dir, st.params);
            save_train_state(cfg.checkpoint_dir + "/train_state.bin", st);
        }
    }

    if (!cfg.checkpoint_dir.empty()) {
        save_checkpoint(cfg.checkpoint_dir, st.params);
        save_train_state(cfg.checkpoint_dir + "/train_state.bin", st);
    }
    return st.params;
}

}  // namespace oav

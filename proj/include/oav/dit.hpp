#pragma once

// Toy diffusion transformer. Tokens are latent pixels (one per spatial
// position per frame). Conditioning enters four ways: the reference latent is
// channel-concatenated to the input, the timestep embedding is added to every
// token, text is attended to via cross-attention, and packed audio is
// projected per injection layer and added to the residual stream after that
// block's FFN. Low-rank adapters wrap attention and FFN matrices; the
// effective weight is W + (alpha/r) * A * B.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "oav/audio.hpp"
#include "oav/autograd.hpp"
#include "oav/tensor.hpp"

namespace oav {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DiTConfig {
    int n_blocks{8};
    int d_model{64};
    int n_heads{4};
    int d_ff{128};
    int patch{1};  // one token per latent pixel per frame
    int injection_first{2};
    int injection_last{4};  // default: ceil(n_blocks / 2), 1-based inclusive
    int latent_channels{16};
    int d_audio{static_cast<int>(kAudioFeatureDim)};
    int d_pack{static_cast<int>(kAudioPackDim)};
    int d_time{16};
    int max_frames{64};
    int max_spatial{1024};
    int lora_rank{4};
    double lora_alpha{2.0};

    static DiTConfig defaults() { return DiTConfig{}; }

    static DiTConfig sized(int blocks, int dm, int heads, int ff) {
        DiTConfig c;
        c.n_blocks = blocks;
        c.d_model = dm;
        c.n_heads = heads;
        c.d_ff = ff;
        c.injection_first = 2;
        c.injection_last = std::max(2, (blocks + 1) / 2);
        return c;
    }

    void validate() const {
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model must be divisible by n_heads");
        }
        if (injection_first < 2 || injection_first > injection_last ||
            injection_last > n_blocks) {
            throw ConfigError("injection layer range [" + std::to_string(injection_first) +
                              "," + std::to_string(injection_last) + "] invalid for " +
                              std::to_string(n_blocks) + " blocks");
        }
    }

    std::vector<int> injection_layers() const {
        std::vector<int> v;
        for (int i = injection_first; i <= injection_last; ++i) v.push_back(i);
        return v;
    }

    bool is_injection_layer(int layer) const {
        return layer >= injection_first && layer <= injection_last;
    }

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{{"n_blocks", n_blocks},
                                      {"d_model", d_model},
                                      {"n_heads", n_heads},
                                      {"d_ff", d_ff},
                                      {"patch", patch},
                                      {"injection_first", injection_first},
                                      {"injection_last", injection_last},
                                      {"latent_channels", latent_channels},
                                      {"d_audio", d_audio},
                                      {"d_pack", d_pack},
                                      {"d_time", d_time},
                                      {"max_frames", max_frames},
                                      {"max_spatial", max_spatial},
                                      {"lora_rank", lora_rank},
                                      {"lora_alpha", lora_alpha}};
    }

    static DiTConfig from_json(const nlohmann::json& j) {
        DiTConfig c;
        c.n_blocks = j.at("n_blocks");
        c.d_model = j.at("d_model");
        c.n_heads = j.at("n_heads");
        c.d_ff = j.at("d_ff");
        c.patch = j.at("patch");
        c.injection_first = j.at("injection_first");
        c.injection_last = j.at("injection_last");
        c.latent_channels = j.at("latent_channels");
        c.d_audio = j.at("d_audio");
        c.d_pack = j.at("d_pack");
        c.d_time = j.at("d_time");
        c.max_frames = j.at("max_frames");
        c.max_spatial = j.at("max_spatial");
        c.lora_rank = j.at("lora_rank");
        c.lora_alpha = j.at("lora_alpha");
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Parameter store
//
// Named tensors; the name prefix carries the role:
//   lora.*   adapter matrices ("lora.<target>.A" / "lora.<target>.B")
//   audio.*  audio pipeline (pack weight + per-layer projections)
//   codec.*  latent codec constants (never trained)
//   others   base DiT weights
// ---------------------------------------------------------------------------

struct ModelParams {
    DiTConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

inline std::string param_role(const std::string& name) {
    if (name.rfind("lora.", 0) == 0) return "lora";
    if (name.rfind("audio.", 0) == 0) return "audio";
    if (name.rfind("codec.", 0) == 0) return "codec";
    return "base";
}

namespace detail {

inline Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t = rand_normal(rng, {rows, cols});
    const double s = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : t.data) v *= s;
    return t;
}

}  // namespace detail

// The matrices eligible for low-rank adapters: attention and FFN weights.
inline std::vector<std::string> lora_targets(const DiTConfig& cfg) {
    std::vector<std::string> t;
    for (int b = 1; b <= cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "cross.wq",
                              "cross.wk", "cross.wv", "cross.wo", "ffn.w1", "ffn.w2"}) {
            t.push_back(p + w);
        }
    }
    return t;
}

inline ModelParams init_params(const DiTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    Rng rng(seed);
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t c2 = 2 * static_cast<std::size_t>(cfg.latent_channels);
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);

    p.tensors["embed.w"] = detail::init_matrix(rng, c2, d);
    p.tensors["embed.pos_frame"] =
        scale(rand_normal(rng, {static_cast<std::size_t>(cfg.max_frames), d}), 0.02);
    p.tensors["embed.pos_spatial"] =
        scale(rand_normal(rng, {static_cast<std::size_t>(cfg.max_spatial), d}), 0.02);
    p.tensors["tstep.w1"] = detail::init_matrix(rng, static_cast<std::size_t>(cfg.d_time), d);
    p.tensors["tstep.b1"] = Tensor({d});
    p.tensors["tstep.w2"] = detail::init_matrix(rng, d, d);
    p.tensors["tstep.b2"] = Tensor({d});
    for (int b = 1; b <= cfg.n_blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        for (const char* ln : {"ln1", "ln2", "ln3"}) {
            p.tensors[pre + ln + ".g"] = Tensor::full({d}, 1.0);
            p.tensors[pre + ln + ".b"] = Tensor({d});
        }
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "cross.wq",
                              "cross.wk", "cross.wv", "cross.wo"}) {
            p.tensors[pre + w] = detail::init_matrix(rng, d, d);
        }
        p.tensors[pre + "ffn.w1"] = detail::init_matrix(rng, d, ff);
        p.tensors[pre + "ffn.w2"] = detail::init_matrix(rng, ff, d);
    }
    p.tensors["unembed.w"] =
        detail::init_matrix(rng, d, static_cast<std::size_t>(cfg.latent_channels));

    p.tensors["audio.pack.w"] =
        detail::init_matrix(rng, 4 * static_cast<std::size_t>(cfg.d_audio),
                            static_cast<std::size_t>(cfg.d_pack));
    for (int layer : cfg.injection_layers()) {
        p.tensors["audio.proj." + std::to_string(layer)] =
            detail::init_matrix(rng, static_cast<std::size_t>(cfg.d_pack), d);
    }
    return p;
}

// Adds zero-initialized adapters for every target: A ~ N(0, 0.02), B = 0, so
// the effective weights equal the base weights exactly at step 0.
inline void add_lora_adapters(ModelParams& p, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t r = static_cast<std::size_t>(p.config.lora_rank);
    for (const std::string& target : lora_targets(p.config)) {
        const Tensor& w = p.at(target);
        p.tensors["lora." + target + ".A"] =
            scale(rand_normal(rng, {w.shape[0], r}), 0.02);
        p.tensors["lora." + target + ".B"] = Tensor({r, w.shape[1]});
    }
}

inline double lora_scaling(const DiTConfig& cfg) {
    return cfg.lora_alpha / static_cast<double>(cfg.lora_rank);
}

// Folds every adapter into its base matrix: W' = W + (alpha/r) A B. The input
// is left untouched; the result carries no lora.* entries.
inline ModelParams merge_lora(const ModelParams& params) {
    ModelParams out;
    out.config = params.config;
    const double s = lora_scaling(params.config);
    for (const auto& [name, t] : params.tensors) {
        if (param_role(name) == "lora") {
            if (name.size() > 2 && name.substr(name.size() - 2) == ".A") {
                const std::string target = name.substr(5, name.size() - 7);
                if (!params.has(target)) {
                    throw ConfigError("adapter targets unknown matrix: " + target);
                }
            }
            continue;
        }
        out.tensors[name] = t;
    }
    for (const auto& [name, t] : params.tensors) {
        if (param_role(name) != "lora") continue;
        if (name.substr(name.size() - 2) != ".A") continue;
        const std::string target = name.substr(5, name.size() - 7);
        const Tensor& a = t;
        const Tensor& b = params.at("lora." + target + ".B");
        out.tensors[target] = add(out.tensors[target], scale(matmul(a, b), s));
    }
    return out;
}

// Inverse of merge_lora given the adapters that were folded in.
inline ModelParams unmerge_lora(const ModelParams& merged, const ModelParams& with_adapters) {
    ModelParams out = merged;
    const double s = lora_scaling(with_adapters.config);
    for (const auto& [name, t] : with_adapters.tensors) {
        if (param_role(name) != "lora" || name.substr(name.size() - 2) != ".A") continue;
        const std::string target = name.substr(5, name.size() - 7);
        const Tensor& b = with_adapters.at("lora." + target + ".B");
        out.tensors[target] = sub(out.tensors[target], scale(matmul(t, b), s));
        out.tensors["lora." + target + ".A"] = t;
        out.tensors["lora." + target + ".B"] = b;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training modes
// ---------------------------------------------------------------------------

enum class TrainMode { frozen_dit, full, lora };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::frozen_dit: return "frozen_dit";
        case TrainMode::full: return "full";
        case TrainMode::lora: return "lora";
    }
    throw ConfigError("bad TrainMode");
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "frozen_dit") return TrainMode::frozen_dit;
    if (s == "full") return TrainMode::full;
    if (s == "lora") return TrainMode::lora;
    throw ConfigError("unknown training mode: " + s + " (frozen_dit|full|lora)");
}

// frozen_dit: audio pipeline only. full: base weights + audio pipeline.
// lora: adapters + audio pipeline. Codec constants never train.
inline std::set<std::string> trainable_params(TrainMode mode, const ModelParams& params) {
    std::set<std::string> out;
    for (const auto& [name, t] : params.tensors) {
        const std::string role = param_role(name);
        if (role == "codec") continue;
        if (role == "audio") {
            out.insert(name);
        } else if (role == "lora") {
            if (mode == TrainMode::lora) out.insert(name);
        } else {
            if (mode == TrainMode::full) out.insert(name);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text and timestep embeddings
// ---------------------------------------------------------------------------

struct TextEmbedding {
    Tensor tokens;  // [n_tok, d_model]
};

// Whitespace-split words hash to seeds; each word becomes one deterministic
// unit-variance token row. No positional information is attached.
inline TextEmbedding embed_prompt(const std::string& prompt, int d_model) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : prompt) {
        if (ch == ' ' || ch == '\t' || ch == '\n') {
            if (!cur.empty()) words.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    if (words.empty()) words.push_back("");
    TextEmbedding e{Tensor({words.size(), static_cast<std::size_t>(d_model)})};
    for (std::size_t i = 0; i < words.size(); ++i) {
        Rng rng(mix_seed(fnv1a64(words[i]), 0x7E87));
        for (int j = 0; j < d_model; ++j) e.tokens.at2(i, static_cast<std::size_t>(j)) = rng.normal();
    }
    return e;
}

// Reserved single-token embedding for the unconditional text branch.
inline TextEmbedding null_text(int d_model) {
    TextEmbedding e{Tensor({1, static_cast<std::size_t>(d_model)})};
    Rng rng(mix_seed(0x4E554C4C54455854ULL, 0x7E87));  // reserved seed
    for (int j = 0; j < d_model; ++j) e.tokens.at2(0, static_cast<std::size_t>(j)) = rng.normal();
    return e;
}

// Sinusoidal features of t in [0,1]: (sin, cos) pairs at geometric frequencies.
inline Tensor timestep_features(double t, int d_time) {
    Tensor f({1, static_cast<std::size_t>(d_time)});
    constexpr double pi = 3.14159265358979323846;
    for (int i = 0; i < d_time / 2; ++i) {
        const double w = pi * std::pow(2.0, i);
        f.data[2 * i] = std::sin(w * t);
        f.data[2 * i + 1] = std::cos(w * t);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardOptions {
    bool use_adapters{true};         // apply lora.* entries when present
    std::size_t local_attention{0};  // test-only: self-attention restricted to
                                     // blocks of this many tokens (0 = full)
};

// Leaf cache so each named tensor appears once per graph (shared between the
// audio-pack subgraph and the transformer, and across batch items, so
// gradients accumulate on a single node per parameter). Also builds the
// effective adapted weight W + (alpha/r) A B when an adapter exists.
struct ParamGraph {
    const ModelParams& params;
    const std::set<std::string>* trainable{nullptr};  // null = inference
    bool use_adapters{true};
    std::map<std::string, NodePtr> cache;

    bool wants_grad(const std::string& name) const {
        return trainable != nullptr && trainable->count(name) != 0;
    }

    NodePtr leaf_of(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        NodePtr n = make_leaf(params.at(name), wants_grad(name));
        cache.emplace(name, n);
        return n;
    }

    // Weight with adapter applied when present.
    NodePtr weight(const std::string& name) {
        const std::string key = "eff." + name;
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        NodePtr w = leaf_of(name);
        if (use_adapters && params.has("lora." + name + ".A")) {
            NodePtr a = leaf_of("lora." + name + ".A");
            NodePtr b = leaf_of("lora." + name + ".B");
            w = add(w, scale(matmul(a, b), lora_scaling(params.config)));
        }
        cache.emplace(key, w);
        return w;
    }
};

// Builds the epsilon-prediction graph. z: [L,h,w,c] noisy latent; ref one
// clean latent frame [h,w,c] (repeated over L and channel-concatenated);
// packed_audio, when present, must be an on-tape [L, d_pack] node (built from
// the same ParamGraph when its pack weight should receive gradients).
inline NodePtr dit_forward_node(ParamGraph& pg, const Tensor& z, double t,
                                const TextEmbedding& text,
                                const std::optional<NodePtr>& packed_audio, const Tensor& ref,
                                const ForwardOptions& opt = {}) {
    const ModelParams& params = pg.params;
    const DiTConfig& cfg = params.config;
    if (z.rank() != 4) throw ShapeError("forward: latent must be [L,h,w,c]");
    const std::size_t big_l = z.shape[0], h = z.shape[1], w = z.shape[2], c = z.shape[3];
    if (static_cast<int>(c) != cfg.latent_channels) {
        throw ShapeError("forward: latent channels " + std::to_string(c) + " != config " +
                         std::to_string(cfg.latent_channels));
    }
    if (ref.shape != Shape{h, w, c}) {
        throw ShapeError("forward: reference frame shape " + shape_str(ref.shape) +
                         " does not match latent frame " + shape_str({h, w, c}));
    }
    if (packed_audio && (*packed_audio)->value.shape[0] != big_l) {
        throw AlignmentError("forward: packed audio has " +
                             std::to_string((*packed_audio)->value.shape[0]) +
                             " frames, latent has " + std::to_string(big_l));
    }
    if (big_l > static_cast<std::size_t>(cfg.max_frames) ||
        h * w > static_cast<std::size_t>(cfg.max_spatial)) {
        throw ShapeError("forward: latent exceeds positional table capacity");
    }

    const std::size_t hw = h * w;
    const std::size_t n_tok = big_l * hw;

    // token assembly: [z | ref] per latent pixel
    Tensor x0({n_tok, 2 * c});
    std::vector<std::size_t> frame_idx(n_tok), spatial_idx(n_tok);
    for (std::size_t j = 0; j < big_l; ++j) {
        for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t row = j * hw + p;
            std::copy_n(z.data.data() + row * c, c, x0.data.data() + row * 2 * c);
            std::copy_n(ref.data.data() + p * c, c, x0.data.data() + row * 2 * c + c);
            frame_idx[row] = j;
            spatial_idx[row] = p;
        }
    }

    NodePtr x = matmul(make_leaf(std::move(x0)), pg.weight("embed.w"));
    x = add(x, gather_rows(pg.leaf_of("embed.pos_frame"), frame_idx));
    x = add(x, gather_rows(pg.leaf_of("embed.pos_spatial"), spatial_idx));

    NodePtr tf = make_leaf(timestep_features(t, cfg.d_time));
    NodePtr temb = add_rowvec(matmul(tf, pg.weight("tstep.w1")), pg.leaf_of("tstep.b1"));
    temb = add_rowvec(matmul(gelu(temb), pg.weight("tstep.w2")), pg.leaf_of("tstep.b2"));
    x = add_rowvec(x, reshape(temb, {static_cast<std::size_t>(cfg.d_model)}));

    NodePtr text_leaf = make_leaf(text.tokens);
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads);

    for (int b = 1; b <= cfg.n_blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        NodePtr h1 = layer_norm(x, pg.leaf_of(pre + "ln1.g"), pg.leaf_of(pre + "ln1.b"));
        NodePtr attn = self_attention(matmul(h1, pg.weight(pre + "attn.wq")),
                                      matmul(h1, pg.weight(pre + "attn.wk")),
                                      matmul(h1, pg.weight(pre + "attn.wv")), heads,
                                      opt.local_attention);
        x = add(x, matmul(attn, pg.weight(pre + "attn.wo")));

        NodePtr h2 = layer_norm(x, pg.leaf_of(pre + "ln2.g"), pg.leaf_of(pre + "ln2.b"));
        NodePtr xa = cross_attention(matmul(h2, pg.weight(pre + "cross.wq")),
                                     matmul(text_leaf, pg.weight(pre + "cross.wk")),
                                     matmul(text_leaf, pg.weight(pre + "cross.wv")), heads);
        x = add(x, matmul(xa, pg.weight(pre + "cross.wo")));

        NodePtr h3 = layer_norm(x, pg.leaf_of(pre + "ln3.g"), pg.leaf_of(pre + "ln3.b"));
        NodePtr ffn = matmul(gelu(matmul(h3, pg.weight(pre + "ffn.w1"))),
                             pg.weight(pre + "ffn.w2"));
        x = add(x, ffn);

        if (packed_audio && cfg.is_injection_layer(b)) {
            NodePtr addend =
                matmul(*packed_audio, pg.weight("audio.proj." + std::to_string(b)));
            x = add_frame_rows(x, addend, hw);
        }
    }

    NodePtr eps = matmul(x, pg.weight("unembed.w"));
    return reshape(eps, {big_l, h, w, c});
}

// Inference wrapper: plain tensors in and out, no tape kept.
inline Tensor dit_forward(const ModelParams& params, const Tensor& z, double t,
                          const TextEmbedding& text, const std::optional<Tensor>& packed_audio,
                          const Tensor& ref, const ForwardOptions& opt = {}) {
    NoGradGuard ng;
    ParamGraph pg{params, nullptr, opt.use_adapters, {}};
    std::optional<NodePtr> audio_node;
    if (packed_audio) audio_node = make_leaf(*packed_audio);
    NodePtr out = dit_forward_node(pg, z, t, text, audio_node, ref, opt);
    return out->value;
}

}  // namespace oav

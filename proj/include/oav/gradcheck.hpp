#pragma once

// Named gradient checks over the building blocks: linear, layer norm,
// attention, FFN, audio pack, and a full transformer block. Each case
// compares reverse-mode gradients against central finite differences on
// seeded random inputs. Shared by the CLI `gradcheck` subcommand and the
// acceptance suite.

#include <string>
#include <vector>

#include "oav/audio.hpp"
#include "oav/autograd.hpp"
#include "oav/tensor.hpp"

namespace oav {

struct GradCheckCase {
    std::string name;
    double max_rel_err;
};

inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradCheckCase> out;
    Rng rng(seed);
    const double eps = 1e-5;

    {
        Tensor x = rand_normal(rng, {6, 10});
        Tensor w = rand_normal(rng, {10, 4});
        auto f = [](std::vector<NodePtr>& in) {
            NodePtr y = matmul(in[0], in[1]);
            return mean_all(mul(y, y));
        };
        out.push_back({"linear", grad_check(f, {x, w}, eps)});
    }
    {
        Tensor x = rand_normal(rng, {6, 16});
        Tensor g = rand_normal(rng, {16});
        Tensor b = rand_normal(rng, {16});
        auto f = [](std::vector<NodePtr>& in) {
            NodePtr y = layer_norm(in[0], in[1], in[2]);
            return mean_all(mul(y, y));
        };
        out.push_back({"layernorm", grad_check(f, {x, g, b}, eps)});
    }
    {
        Tensor x = rand_normal(rng, {8, 16});
        Tensor wq = rand_normal(rng, {16, 16});
        Tensor wk = rand_normal(rng, {16, 16});
        Tensor wv = rand_normal(rng, {16, 16});
        Tensor wo = rand_normal(rng, {16, 16});
        auto f = [](std::vector<NodePtr>& in) {
            NodePtr a = self_attention(matmul(in[0], in[1]), matmul(in[0], in[2]),
                                       matmul(in[0], in[3]), 4);
            NodePtr y = matmul(a, in[4]);
            return mean_all(mul(y, y));
        };
        out.push_back({"attention", grad_check(f, {x, wq, wk, wv, wo}, eps)});
    }
    {
        Tensor x = rand_normal(rng, {8, 16});
        Tensor w1 = rand_normal(rng, {16, 32});
        Tensor w2 = rand_normal(rng, {32, 16});
        auto f = [](std::vector<NodePtr>& in) {
            NodePtr y = matmul(gelu(matmul(in[0], in[1])), in[2]);
            return mean_all(mul(y, y));
        };
        out.push_back({"ffn", grad_check(f, {x, w1, w2}, eps)});
    }
    {
        // pack + per-layer projection on T=5 features
        Tensor feats = rand_normal(rng, {5, kAudioFeatureDim});
        Tensor w_pack = rand_normal(rng, {4 * kAudioFeatureDim, kAudioPackDim});
        Tensor proj = rand_normal(rng, {kAudioPackDim, 16});
        Tensor grouped = group_features(feats);
        auto f = [grouped](std::vector<NodePtr>& in) {
            NodePtr z_a = matmul(make_leaf(grouped), in[0]);
            NodePtr y = matmul(z_a, in[1]);
            return mean_all(mul(y, y));
        };
        out.push_back({"audio_pack", grad_check(f, {w_pack, proj}, eps)});
    }
    {
        // one full transformer block at 8 tokens, d_model = 16
        const std::size_t d = 16;
        Tensor x = rand_normal(rng, {8, d});
        Tensor text = rand_normal(rng, {3, d});
        std::vector<Tensor> ws;
        ws.push_back(x);
        for (int i = 0; i < 8; ++i) ws.push_back(rand_normal(rng, {d, d}));  // attn + cross
        ws.push_back(rand_normal(rng, {d, 2 * d}));                          // ffn.w1
        ws.push_back(rand_normal(rng, {2 * d, d}));                          // ffn.w2
        for (int i = 0; i < 3; ++i) {
            ws.push_back(rand_normal(rng, {d}));  // ln gains
            ws.push_back(rand_normal(rng, {d}));  // ln biases
        }
        auto f = [text](std::vector<NodePtr>& in) {
            NodePtr x_n = in[0];
            NodePtr t_n = make_leaf(text);
            NodePtr h1 = layer_norm(x_n, in[11], in[12]);
            NodePtr attn = self_attention(matmul(h1, in[1]), matmul(h1, in[2]),
                                          matmul(h1, in[3]), 4);
            x_n = add(x_n, matmul(attn, in[4]));
            NodePtr h2 = layer_norm(x_n, in[13], in[14]);
            NodePtr xa = cross_attention(matmul(h2, in[5]), matmul(t_n, in[6]),
                                         matmul(t_n, in[7]), 4);
            x_n = add(x_n, matmul(xa, in[8]));
            NodePtr h3 = layer_norm(x_n, in[15], in[16]);
            x_n = add(x_n, matmul(gelu(matmul(h3, in[9])), in[10]));
            return mean_all(mul(x_n, x_n));
        };
        out.push_back({"dit_block", grad_check(f, ws, eps)});
    }
    return out;
}

}  // namespace oav

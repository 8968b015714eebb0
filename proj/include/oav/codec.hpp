#pragma once

// Invertible latent video codec: temporal compression factor 4 with the first
// frame encoded alone (as a virtual group of four copies), 2x2 spatial fold
// into channels, and a fixed orthogonal channel mix. A video of T frames
// (T = 1 mod 4) maps to (T+3)/4 latent frames; decode is the exact inverse.

#include <cstdint>
#include <string>

#include "oav/tensor.hpp"

namespace oav {

struct VideoTensor {
    Tensor frames;  // [T, H, W, C], values in [0,1]
    double fps{16.0};

    std::size_t t() const { return frames.shape[0]; }
    std::size_t h() const { return frames.shape[1]; }
    std::size_t w() const { return frames.shape[2]; }
    std::size_t c() const { return frames.shape[3]; }
};

struct LatentVideo {
    Tensor latents;  // [L, h, w, c] with L = (T+3)/4, h = H/2, w = W/2, c = 16*C

    std::size_t l() const { return latents.shape[0]; }
    std::size_t h() const { return latents.shape[1]; }
    std::size_t w() const { return latents.shape[2]; }
    std::size_t c() const { return latents.shape[3]; }
};

inline std::size_t latent_frame_count(std::size_t t) { return (t + 3) / 4; }

// T latent frames decode to 4L-3 video frames.
inline std::size_t video_frame_count(std::size_t l) { return 4 * l - 3; }

struct CodecParams {
    Tensor mix;  // orthogonal [16C, 16C]
    std::uint64_t seed{0};

    std::size_t dim() const { return mix.shape[0]; }
};

namespace detail {

// Orthonormalizes the rows of a square matrix with twice-iterated modified
// Gram-Schmidt (the second pass scrubs the rounding left by the first).
inline void orthonormalize_rows(Tensor& m) {
    const std::size_t n = m.shape[0];
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < n; ++i) {
            double* ri = m.data.data() + i * n;
            for (std::size_t j = 0; j < i; ++j) {
                const double* rj = m.data.data() + j * n;
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += ri[c] * rj[c];
                for (std::size_t c = 0; c < n; ++c) ri[c] -= dot * rj[c];
            }
            double norm = 0.0;
            for (std::size_t c = 0; c < n; ++c) norm += ri[c] * ri[c];
            norm = std::sqrt(norm);
            for (std::size_t c = 0; c < n; ++c) ri[c] /= norm;
        }
    }
}

}  // namespace detail

inline CodecParams make_codec_params(std::uint64_t seed, std::size_t video_channels = 1) {
    const std::size_t dim = 16 * video_channels;
    Rng rng(seed);
    Tensor m = rand_normal(rng, {dim, dim});
    detail::orthonormalize_rows(m);
    return CodecParams{std::move(m), seed};
}

namespace detail {

// Gathers video frames {g0..g3} (indices into v; duplicates allowed) into the
// 16C-vector per latent pixel: 2x2 spatial fold, then temporal concat.
inline void fold_group(const VideoTensor& v, const std::size_t group[4], std::size_t y,
                       std::size_t x, double* out) {
    const std::size_t c = v.c();
    std::size_t o = 0;
    for (std::size_t g = 0; g < 4; ++g) {
        const std::size_t t = group[g];
        for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    out[o++] = v.frames.at4(t, 2 * y + dy, 2 * x + dx, ch);
                }
            }
        }
    }
}

}  // namespace detail

inline LatentVideo encode(const VideoTensor& v, const CodecParams& p) {
    const std::size_t t = v.t();
    if (t % 4 != 1) {
        throw AlignmentError("encode: frame count " + std::to_string(t) +
                             " is not congruent to 1 mod 4");
    }
    if (v.h() % 2 != 0 || v.w() % 2 != 0) {
        throw ShapeError("encode: spatial extents must be even, got " +
                         shape_str(v.frames.shape));
    }
    const std::size_t dim = 16 * v.c();
    if (p.dim() != dim) {
        throw ShapeError("encode: codec dim " + std::to_string(p.dim()) +
                         " does not match 16*C = " + std::to_string(dim));
    }
    const std::size_t big_l = latent_frame_count(t);
    const std::size_t h = v.h() / 2, w = v.w() / 2;
    LatentVideo z{Tensor({big_l, h, w, dim})};
    std::vector<double> buf(dim);
    for (std::size_t j = 0; j < big_l; ++j) {
        std::size_t group[4];
        if (j == 0) {
            group[0] = group[1] = group[2] = group[3] = 0;  // virtual group of frame 0
        } else {
            for (std::size_t g = 0; g < 4; ++g) group[g] = 4 * j - 3 + g;
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                detail::fold_group(v, group, y, x, buf.data());
                double* out = z.latents.data.data() + ((j * h + y) * w + x) * dim;
                for (std::size_t r = 0; r < dim; ++r) {
                    const double* row = p.mix.data.data() + r * dim;
                    double s = 0.0;
                    for (std::size_t k = 0; k < dim; ++k) s += row[k] * buf[k];
                    out[r] = s;
                }
            }
        }
    }
    return z;
}

inline VideoTensor decode(const LatentVideo& z, const CodecParams& p, double fps = 16.0) {
    const std::size_t dim = z.c();
    if (dim % 16 != 0) {
        throw ShapeError("decode: channel count " + std::to_string(dim) +
                         " is not divisible by 16");
    }
    if (p.dim() != dim) {
        throw ShapeError("decode: codec dim " + std::to_string(p.dim()) +
                         " does not match latent channels " + std::to_string(dim));
    }
    const std::size_t c = dim / 16;
    const std::size_t big_l = z.l(), h = z.h(), w = z.w();
    const std::size_t t = video_frame_count(big_l);
    VideoTensor v{Tensor({t, 2 * h, 2 * w, c}), fps};
    std::vector<double> buf(dim);
    for (std::size_t j = 0; j < big_l; ++j) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double* in = z.latents.data.data() + ((j * h + y) * w + x) * dim;
                // inverse of the orthogonal mix is its transpose
                for (std::size_t k = 0; k < dim; ++k) {
                    double s = 0.0;
                    for (std::size_t r = 0; r < dim; ++r) s += p.mix.data[r * dim + k] * in[r];
                    buf[k] = s;
                }
                // unfold: group slot 0 of latent frame 0 is video frame 0;
                // group slot g of latent frame j>0 is video frame 4j-3+g.
                const std::size_t n_slots = (j == 0) ? 1 : 4;
                for (std::size_t g = 0; g < n_slots; ++g) {
                    const std::size_t vt = (j == 0) ? 0 : 4 * j - 3 + g;
                    std::size_t o = g * 4 * c;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                v.frames.at4(vt, 2 * y + dy, 2 * x + dx, ch) = buf[o++];
                            }
                        }
                    }
                }
            }
        }
    }
    return v;
}

}  // namespace oav

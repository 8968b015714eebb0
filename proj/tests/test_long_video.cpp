#include <catch2/catch_amalgamated.hpp>

#include "oav/long_video.hpp"
#include "oav/metrics.hpp"

using namespace oav;

namespace {

// Independent tracer: walks the chunk loop's index arithmetic literally
// (n -= f_i; consume [n, n+s); n += s) with the loop count found by brute
// force, never by closed form.
struct TracedChunk {
    int n;
    int f_i;
};

struct TraceResult {
    int loops;
    int l_pad;
    int total;
    std::vector<TracedChunk> chunks;
};

TraceResult trace_reference(int l, int s, int f) {
    const int need = l + 1;  // front slot for the reference latent
    int loops = 1;
    while (s + (loops - 1) * (s - f) < need) ++loops;  // brute-force smallest N
    TraceResult r;
    r.loops = loops;
    r.l_pad = s + (loops - 1) * (s - f) - need;
    r.total = l + 1 + r.l_pad;
    int n = 0;
    for (int i = 0; i < loops; ++i) {
        const int f_i = (i == 0) ? 0 : f;
        n = n - f_i;
        r.chunks.push_back({n, f_i});
        n = n + s;
    }
    return r;
}

Waveform test_tone(std::size_t t_frames, double fps = 16.0) {
    const double sr = 8000.0;
    const std::size_t win = static_cast<std::size_t>(sr / fps);
    Waveform w{Tensor({t_frames * win}), sr};
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t i = 0; i < w.n(); ++i) {
        const double env =
            0.5 + 0.4 * std::sin(two_pi * static_cast<double>(i / win) / 7.0);
        w.samples.data[i] =
            env * std::sin(two_pi * 400.0 * static_cast<double>(i) / sr);
    }
    return w;
}

DiTConfig gen_config() {
    DiTConfig c = DiTConfig::sized(3, 16, 4, 32);
    c.max_frames = 8;
    c.max_spatial = 4;
    return c;
}

GenerationRequest small_request(std::size_t t_frames, int s, int f) {
    GenerationRequest req;
    req.waveform = test_tone(t_frames);
    req.prompt = "a face speaking";
    Rng rng(3);
    req.ref_image = rand_uniform(rng, {4, 4, 1}, 0.0, 1.0);
    req.chunk_s = s;
    req.overlap_f = f;
    req.seed = 11;
    req.sampler.steps = 3;
    return req;
}

}  // namespace

TEST_CASE("find_loop_n worked examples") {
    SECTION("l=4, s=5, f=1: one chunk exactly") {
        auto [n, pad] = find_loop_n(4, 5, 1);
        REQUIRE(n == 1);
        REQUIRE(pad == 0);
    }
    SECTION("l=10, s=5, f=1: three chunks, pad 2") {
        auto [n, pad] = find_loop_n(10, 5, 1);
        REQUIRE(n == 3);
        REQUIRE(pad == 2);
    }
    SECTION("l=s-1 fits one chunk for any valid overlap") {
        for (int s = 2; s <= 12; ++s) {
            for (int f = 1; f < s; ++f) {
                auto [n, pad] = find_loop_n(s - 1, s, f);
                REQUIRE(n == 1);
                REQUIRE(pad == 0);
            }
        }
    }
    SECTION("bad overlap is rejected") {
        REQUIRE_THROWS_AS(find_loop_n(10, 5, 5), ConfigError);
        REQUIRE_THROWS_AS(find_loop_n(10, 5, 0), ConfigError);
    }
}

TEST_CASE("plan follows the reference walk on the worked example") {
    ChunkPlan p = plan(10, 5, 1);
    REQUIRE(p.loops == 3);
    REQUIRE(p.chunks.size() == 3);
    REQUIRE(p.chunks[0].write_begin == 0);
    REQUIRE(p.chunks[0].write_end == 5);
    REQUIRE(p.chunks[1].write_begin == 4);
    REQUIRE(p.chunks[1].write_end == 9);
    REQUIRE(p.chunks[2].write_begin == 8);
    REQUIRE(p.chunks[2].write_end == 13);
    REQUIRE(p.chunks[0].prefix_len == 0);
    REQUIRE(p.chunks[1].prefix_len == 1);
}

TEST_CASE("single-loop plans have a zero-prefix chunk") {
    ChunkPlan p = plan(4, 5, 2);
    REQUIRE(p.loops == 1);
    REQUIRE(p.chunks.size() == 1);
    REQUIRE(p.chunks[0].prefix_len == 0);
}

TEST_CASE("plans match the literal tracer on 1000 random shapes") {
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const int s = 2 + static_cast<int>(rng.below(11));  // 2..12
        const int f = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s - 1)));
        const int l = 1 + static_cast<int>(rng.below(200));
        ChunkPlan p = plan(l, s, f);
        TraceResult ref = trace_reference(l, s, f);

        REQUIRE(p.loops == ref.loops);
        REQUIRE(p.l_pad == ref.l_pad);
        REQUIRE(p.total == ref.total);
        REQUIRE(p.chunks.size() == ref.chunks.size());
        for (std::size_t i = 0; i < p.chunks.size(); ++i) {
            REQUIRE(p.chunks[i].write_begin == ref.chunks[i].n);
            REQUIRE(p.chunks[i].audio_start == ref.chunks[i].n);
            REQUIRE(p.chunks[i].prefix_len == ref.chunks[i].f_i);
            REQUIRE(p.chunks[i].write_end - p.chunks[i].write_begin == s);
        }
        // tiling: consecutive writes overlap by exactly f, coverage is exact
        REQUIRE(p.chunks.front().write_begin == 0);
        REQUIRE(p.chunks.back().write_end == p.total);
        for (std::size_t i = 1; i < p.chunks.size(); ++i) {
            REQUIRE(p.chunks[i - 1].write_end - p.chunks[i].write_begin == f);
        }
    }
}

TEST_CASE("generate_long produces 4l-3 frames over multiple chunks") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 9);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);

    GenerationRequest req = small_request(9, 3, 1);  // l=3: two chunks
    GenerationTrace trace;
    VideoTensor out = generate_long(params, sched, codec, req, &trace);

    REQUIRE(trace.chunk_plan.loops == 2);
    REQUIRE(out.t() == 9);  // 4*3-3
    REQUIRE(out.frames.all_finite());
    REQUIRE(trace.stitched.shape[0] == static_cast<std::size_t>(trace.chunk_plan.total));
    REQUIRE(continuity_check(trace.chunk_plan, trace.chunk_outputs) == 0.0);
}

TEST_CASE("audio shorter than one chunk takes the single-chunk path") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 9);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);

    GenerationRequest req = small_request(5, 3, 1);  // l=2 <= s-1
    GenerationTrace trace;
    VideoTensor out = generate_long(params, sched, codec, req, &trace);
    REQUIRE(trace.chunk_plan.loops == 1);
    REQUIRE(out.t() == 5);  // 4*2-3
}

TEST_CASE("overlap frames written by one chunk equal the next chunk's prefix") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 29);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);

    GenerationRequest req = small_request(13, 4, 2);  // l=4, need=5: N=2
    GenerationTrace trace;
    generate_long(params, sched, codec, req, &trace);
    REQUIRE(trace.chunk_outputs.size() == 2);
    const Tensor& first = trace.chunk_outputs[0];
    const Tensor& second = trace.chunk_outputs[1];
    const std::size_t per_frame = first.numel() / first.shape[0];
    for (std::size_t e = 0; e < 2 * per_frame; ++e) {
        REQUIRE(second.data[e] == first.data[(4 - 2) * per_frame + e]);
    }
}

TEST_CASE("generation is deterministic for a fixed request") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 31);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);

    GenerationRequest req = small_request(9, 3, 1);
    VideoTensor a = generate_long(params, sched, codec, req);
    VideoTensor b = generate_long(params, sched, codec, req);
    REQUIRE(bitwise_equal(a.frames, b.frames));
}

TEST_CASE("dropping audio changes the output but stays finite") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 37);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);

    GenerationRequest req = small_request(9, 3, 1);
    VideoTensor with = generate_long(params, sched, codec, req);
    req.drop_audio = true;
    VideoTensor without = generate_long(params, sched, codec, req);
    REQUIRE(without.frames.all_finite());
    REQUIRE_FALSE(bitwise_equal(with.frames, without.frames));
}

TEST_CASE("too-short waveform raises a length error") {
    DiTConfig cfg = gen_config();
    ModelParams params = init_params(cfg, 41);
    CodecParams codec = make_codec_params(17);
    NoiseSchedule sched = NoiseSchedule::cosine(100);
    GenerationRequest req = small_request(9, 3, 1);
    req.waveform.samples = Tensor({100});  // under one frame window
    REQUIRE_THROWS_AS(generate_long(params, sched, codec, req), LengthError);
}

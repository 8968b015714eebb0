#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "oav/audio.hpp"

using namespace oav;

namespace {

Waveform sine_wave(double freq, double sr, std::size_t n, double amp = 0.8) {
    Waveform w{Tensor({n}), sr};
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t i = 0; i < n; ++i) {
        w.samples.data[i] = amp * std::sin(two_pi * freq * static_cast<double>(i) / sr);
    }
    return w;
}

}  // namespace

TEST_CASE("silence maps to all-zero features") {
    Waveform w{Tensor({4000}), 8000.0};
    Tensor f = extract_features(w, 16.0, 8);
    for (double v : f.data) REQUIRE(v == 0.0);
}

TEST_CASE("pure sine concentrates in one DFT bin") {
    const double sr = 8000.0, fps = 16.0;
    const std::size_t win = 500;  // samples per frame window
    const std::size_t bin = 5;
    Waveform w = sine_wave(static_cast<double>(bin) * sr / static_cast<double>(win), sr, 4000);
    Tensor f = extract_features(w, fps, 8);
    for (std::size_t t = 0; t < 8; ++t) {
        const double* row = f.data.data() + t * kAudioFeatureDim;
        const double peak = row[1 + bin];
        REQUIRE(peak > 0.5);
        for (std::size_t k = 1; k <= kAudioDftBins; ++k) {
            if (k == bin) continue;
            REQUIRE(row[1 + k] < 0.01 * peak);
        }
    }
}

TEST_CASE("feature extraction is deterministic") {
    Waveform w = sine_wave(200.0, 8000.0, 8000);
    Tensor a = extract_features(w, 16.0, 16);
    Tensor b = extract_features(w, 16.0, 16);
    REQUIRE(bitwise_equal(a, b));
}

TEST_CASE("short waveform raises a length error with the required count") {
    Waveform w{Tensor({100}), 8000.0};
    try {
        extract_features(w, 16.0, 8);
        FAIL("expected LengthError");
    } catch (const LengthError& e) {
        REQUIRE(std::string(e.what()).find("4000") != std::string::npos);
    }
}

TEST_CASE("pack grouping: T=1 uses [0,0,0,f0]") {
    Tensor feats({1, kAudioFeatureDim});
    for (std::size_t i = 0; i < kAudioFeatureDim; ++i) feats.data[i] = static_cast<double>(i + 1);
    Tensor grouped = group_features(feats);
    REQUIRE(grouped.shape == Shape{1, 4 * kAudioFeatureDim});
    for (std::size_t i = 0; i < 3 * kAudioFeatureDim; ++i) REQUIRE(grouped.data[i] == 0.0);
    for (std::size_t i = 0; i < kAudioFeatureDim; ++i) {
        REQUIRE(grouped.data[3 * kAudioFeatureDim + i] == feats.data[i]);
    }
}

TEST_CASE("pack grouping: T=5 gives [pad,pad,pad,f0] and [f1..f4]") {
    Tensor feats({5, kAudioFeatureDim});
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t i = 0; i < kAudioFeatureDim; ++i) {
            feats.at2(t, i) = static_cast<double>(t + 1);
        }
    }
    Tensor grouped = group_features(feats);
    REQUIRE(grouped.shape == Shape{2, 4 * kAudioFeatureDim});
    // row 0: three zero slots then frame 0
    for (std::size_t g = 0; g < 3; ++g) {
        REQUIRE(grouped.data[g * kAudioFeatureDim] == 0.0);
    }
    REQUIRE(grouped.data[3 * kAudioFeatureDim] == 1.0);
    // row 1: frames 1..4
    for (std::size_t g = 0; g < 4; ++g) {
        REQUIRE(grouped.at2(1, g * kAudioFeatureDim) == static_cast<double>(g + 2));
    }
}

TEST_CASE("pack rejects misaligned T and zero features give zero output") {
    Rng rng(3);
    Tensor w_pack = rand_normal(rng, {4 * kAudioFeatureDim, kAudioPackDim});
    Tensor bad({4, kAudioFeatureDim});
    REQUIRE_THROWS_AS(pack(bad, w_pack), AlignmentError);

    Tensor zeros({9, kAudioFeatureDim});
    Tensor z_a = pack(zeros, w_pack);
    REQUIRE(z_a.shape == Shape{3, kAudioPackDim});
    for (double v : z_a.data) REQUIRE(v == 0.0);
}

TEST_CASE("temporal locality: one feature frame touches one packed row") {
    Rng rng(5);
    Tensor w_pack = rand_normal(rng, {4 * kAudioFeatureDim, kAudioPackDim});
    const std::size_t t_frames = 33;
    Tensor feats = rand_normal(rng, {t_frames, kAudioFeatureDim});
    Tensor base = pack(feats, w_pack);
    for (std::size_t t = 0; t < t_frames; ++t) {
        Tensor mod = feats;
        mod.at2(t, 2) += 1.0;
        Tensor packed = pack(mod, w_pack);
        const std::size_t owner = packed_row_of_frame(t);
        for (std::size_t j = 0; j < base.shape[0]; ++j) {
            bool same = true;
            for (std::size_t k = 0; k < kAudioPackDim; ++k) {
                if (packed.at2(j, k) != base.at2(j, k)) {
                    same = false;
                    break;
                }
            }
            REQUIRE(same == (j != owner));
        }
    }
}

TEST_CASE("layer_addend broadcasts per frame and respects layer lookup") {
    Rng rng(7);
    AudioProjector proj;
    proj.layers = {2, 3, 4};
    for (int i = 0; i < 3; ++i) {
        proj.matrices.push_back(rand_normal(rng, {kAudioPackDim, 16}));
    }
    Tensor z_a = rand_normal(rng, {3, kAudioPackDim});

    SECTION("zero audio gives a zero addend") {
        Tensor zero({3, kAudioPackDim});
        Tensor a = layer_addend(zero, proj, 2, 2, 2);
        for (double v : a.data) REQUIRE(v == 0.0);
    }
    SECTION("spatial positions of one frame share the same vector") {
        Tensor a = layer_addend(z_a, proj, 3, 2, 2);
        REQUIRE(a.shape == Shape{3, 2, 2, 16});
        for (std::size_t j = 0; j < 3; ++j) {
            for (std::size_t p = 1; p < 4; ++p) {
                for (std::size_t d = 0; d < 16; ++d) {
                    REQUIRE(a.data[(j * 4 + p) * 16 + d] == a.data[j * 4 * 16 + d]);
                }
            }
        }
    }
    SECTION("distinct layers produce distinct addends") {
        Tensor a2 = layer_addend(z_a, proj, 2, 2, 2);
        Tensor a3 = layer_addend(z_a, proj, 3, 2, 2);
        REQUIRE_FALSE(bitwise_equal(a2, a3));
    }
    SECTION("unknown layer raises a configuration error listing valid layers") {
        try {
            layer_addend(z_a, proj, 7, 2, 2);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            REQUIRE(std::string(e.what()).find("2,3,4") != std::string::npos);
        }
    }
}

TEST_CASE("WAV round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "oav_audio_test";
    fs::create_directories(dir);
    Waveform w = sine_wave(440.0, 8000.0, 2000, 0.5);
    const std::string path = (dir / "w.wav").string();
    save_wav(path, w);
    Waveform r = load_wav(path);
    REQUIRE(r.n() == w.n());
    REQUIRE(r.sample_rate == w.sample_rate);
    REQUIRE(max_abs_diff(r.samples, w.samples) < 1e-4);  // int16 quantization
    fs::remove_all(dir);
}

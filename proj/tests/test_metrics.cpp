#include <catch2/catch_amalgamated.hpp>

#include "oav/corpus.hpp"
#include "oav/metrics.hpp"

using namespace oav;

TEST_CASE("sync_proxy on a ground-truth sample") {
    SynthSample s = synth_sample(100, 33, 16, 16);
    const SyncResult r = sync_proxy(s.video, s.waveform, s.mouth_roi, 16.0);
    REQUIRE_FALSE(r.constant_series);
    REQUIRE(r.r >= 0.999);
}

TEST_CASE("sync_proxy returns 0 with the flag on constant series") {
    SynthSample s = synth_sample(100, 9, 16, 16, 16.0, /*silent=*/true);
    const SyncResult r = sync_proxy(s.video, s.waveform, s.mouth_roi, 16.0);
    REQUIRE(r.constant_series);
    REQUIRE(r.r == 0.0);
}

TEST_CASE("sync_proxy rejects an ROI outside the frame") {
    SynthSample s = synth_sample(100, 9, 16, 16);
    Roi bad{0, 20, 0, 4};
    REQUIRE_THROWS_AS(sync_proxy(s.video, s.waveform, bad, 16.0), ShapeError);
}

TEST_CASE("pearson is invariant under positive affine rescaling") {
    Rng rng(7);
    std::vector<double> x(64), y(64), xs(64);
    for (std::size_t i = 0; i < 64; ++i) {
        x[i] = rng.normal();
        y[i] = 0.4 * x[i] + rng.normal();
        xs[i] = 3.7 * x[i] + 11.0;
    }
    const SyncResult base = pearson(x, y);
    const SyncResult scaled = pearson(xs, y);
    REQUIRE(std::abs(base.r - scaled.r) < 1e-12);
}

TEST_CASE("identity_drift") {
    SynthSample s = synth_sample(5, 13, 16, 16);
    std::vector<std::uint8_t> mask(s.video.h() * s.video.w(), 1);
    for (int y = s.mouth_roi.r0; y < s.mouth_roi.r1; ++y) {
        for (int x = s.mouth_roi.c0; x < s.mouth_roi.c1; ++x) {
            mask[static_cast<std::size_t>(y) * s.video.w() + static_cast<std::size_t>(x)] = 0;
        }
    }

    SECTION("ground-truth sample has zero drift outside the mouth") {
        REQUIRE(identity_drift(s.video, mask) == 0.0);
    }
    SECTION("a linear brightness ramp gives the analytic mean") {
        VideoTensor ramp = s.video;
        const std::size_t hw = ramp.h() * ramp.w();
        for (std::size_t t = 0; t < ramp.t(); ++t) {
            for (std::size_t p = 0; p < hw; ++p) {
                ramp.frames.data[t * hw + p] = 0.01 * static_cast<double>(t);
            }
        }
        // frames 1..T-1 deviate by 0.01 t; the mean is 0.01 T / 2
        const double expect = 0.01 * static_cast<double>(ramp.t()) / 2.0;
        REQUIRE(identity_drift(ramp, mask) == Catch::Approx(expect).margin(1e-12));
    }
    SECTION("single frame drifts zero by convention") {
        VideoTensor one{Tensor({1, 16, 16, 1}), 16.0};
        REQUIRE(identity_drift(one, mask) == 0.0);
    }
    SECTION("empty mask is a configuration error") {
        std::vector<std::uint8_t> none(16 * 16, 0);
        REQUIRE_THROWS_AS(identity_drift(s.video, none), ConfigError);
    }
}

TEST_CASE("continuity_check") {
    ChunkPlan p = plan(10, 5, 2);
    const std::size_t s = 5;
    std::vector<Tensor> outs;
    Rng rng(3);
    for (std::size_t i = 0; i < p.chunks.size(); ++i) {
        outs.push_back(rand_normal(rng, {s, 2, 2, 3}));
    }
    // enforce the clamping contract: each chunk's head equals the
    // predecessor's tail
    const std::size_t per_frame = 2 * 2 * 3;
    for (std::size_t i = 1; i < outs.size(); ++i) {
        std::copy_n(outs[i - 1].data.data() + (s - 2) * per_frame, 2 * per_frame,
                    outs[i].data.data());
    }

    SECTION("clamped outputs give exactly zero") {
        REQUIRE(continuity_check(p, outs) == 0.0);
    }
    SECTION("an injected perturbation is read back") {
        outs[1].data[3] += 0.25;
        REQUIRE(continuity_check(p, outs) == Catch::Approx(0.25).margin(1e-12));
    }
    SECTION("single chunk has no boundaries") {
        ChunkPlan single = plan(3, 5, 2);
        std::vector<Tensor> one{rand_normal(rng, {s, 2, 2, 3})};
        REQUIRE(continuity_check(single, one) == 0.0);
    }
    SECTION("plan/output mismatch raises") {
        std::vector<Tensor> wrong(outs.begin(), outs.end() - 1);
        REQUIRE_THROWS_AS(continuity_check(p, wrong), ShapeError);
    }
}

TEST_CASE("metric report aggregates equal recomputation from rows") {
    MetricReport rep;
    rep.build_id = build_id_string();
    rep.config_echo = nlohmann::ordered_json{{"seed", 7}};
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
        MetricRow row;
        row.id = "s" + std::to_string(i);
        row.sync_r = rng.uniform01();
        row.identity_drift = rng.uniform01() * 0.1;
        row.continuity_max = 0.0;
        rep.rows.push_back(row);
    }
    double mean_sync = 0.0;
    for (const auto& r : rep.rows) mean_sync += r.sync_r;
    mean_sync /= 5.0;
    REQUIRE(std::abs(rep.mean_sync() - mean_sync) < 1e-12);

    nlohmann::ordered_json j = rep.to_json();
    REQUIRE(j.at("rows").size() == 5);
    REQUIRE(j.at("aggregates").at("mean_sync_r").get<double>() ==
            Catch::Approx(mean_sync).margin(1e-12));
    REQUIRE(j.at("not_computed").at("metrics").size() == 6);
}

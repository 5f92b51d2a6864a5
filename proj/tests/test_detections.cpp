#include "fluxcal/detections.hpp"
#include "fluxcal/errors.hpp"
#include "fluxcal/io/files.hpp"
#include "fluxcal/rng.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace fluxcal;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "fluxcal_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<FrameStrength> counts_to_strengths(const std::vector<int>& counts) {
    std::vector<FrameStrength> s;
    for (size_t i = 0; i < counts.size(); ++i) s.push_back({(long)i, counts[i]});
    return s;
}

} // namespace

TEST_SUITE_BEGIN("detections");

TEST_CASE("target files round-trip bit-exactly") {
    std::vector<Eigen::Vector3d> pts;
    Rng rng(5);
    for (int i = 0; i < 40; ++i)
        pts.emplace_back(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3),
                         rng.uniform(-0.05, 0.05));
    TargetModel t = make_target(pts);
    auto path = temp_path("target_roundtrip.txt");
    save_target(path, t);
    TargetModel t2 = load_target(path);
    REQUIRE(t2.points.size() == t.points.size());
    CHECK(t2.scale_m == t.scale_m);
    for (size_t i = 0; i < t.points.size(); ++i) {
        CHECK(t2.points[i].x() == t.points[i].x());
        CHECK(t2.points[i].y() == t.points[i].y());
        CHECK(t2.points[i].z() == t.points[i].z());
    }
    CHECK(t2.planar == t.planar);
}

TEST_CASE("target normalization centers and bounds the points") {
    std::vector<Eigen::Vector3d> pts = {{1.0, 2.0, 3.0}, {1.2, 2.0, 3.0}, {1.0, 2.4, 3.0},
                                        {1.2, 2.4, 3.0}};
    TargetModel t = make_target(pts);
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    double max_r = 0.0;
    for (const auto& p : t.points) {
        centroid += p;
        max_r = std::max(max_r, p.norm());
    }
    centroid /= 4.0;
    CHECK(centroid.norm() < 1e-14);
    CHECK(max_r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.planar);
    // Metric reconstruction matches the inputs up to the removed centroid.
    Eigen::Vector3d c_in(1.1, 2.2, 3.0);
    for (size_t i = 0; i < pts.size(); ++i)
        CHECK((t.metric_point(i) - (pts[i] - c_in)).norm() < 1e-12);

    // Two depth planes are decisively non-planar.
    std::vector<Eigen::Vector3d> deep = pts;
    for (auto& p : deep) p.z() += 1.0;
    deep.insert(deep.end(), pts.begin(), pts.end());
    CHECK_FALSE(make_target(deep).planar);

    CHECK_THROWS_AS(make_target({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}), ValidationError);
}

TEST_CASE("detections CSV round-trips and validates") {
    DetectionSet det;
    det.frames.push_back({0, {{0, 12.5, 800.25, true}, {1, 13.5, 801.0, true}}});
    det.frames.push_back({3, {{0, 0.0, 0.0, false}, {2, 99.0, 100.0, true}}});
    auto path = temp_path("detections_roundtrip.csv");
    save_detections(path, det);
    DetectionSet d2 = load_detections(path);
    REQUIRE(d2.frames.size() == 2);
    CHECK(d2.frames[0].frame_id == 0);
    CHECK(d2.frames[1].frame_id == 3);
    CHECK(d2.frames[0].obs[1].u == 13.5);
    CHECK(d2.frames[1].obs[0].valid == false);
    CHECK(d2.total_valid() == 3);

    auto bad = temp_path("detections_bad.csv");
    write_file(bad, "frame,point\n");
    CHECK_THROWS_AS(load_detections(bad), ValidationError);
    write_file(bad, "frame_id,point_id,u_px,v_px,valid\n0,1,1.0,2.0,1\n0,1,1.0,2.0,1\n");
    CHECK_THROWS_AS(load_detections(bad), ValidationError);
    write_file(bad, "frame_id,point_id,u_px,v_px,valid\n0,1,1.0,2.0,7\n");
    CHECK_THROWS_AS(load_detections(bad), ValidationError);
}

TEST_CASE("keyframe selection matches the worked example") {
    auto sel = select_keyframes(counts_to_strengths({352, 352, 352, 10, 352}), 352);
    REQUIRE(sel.size() == 2);
    CHECK(sel[0] == 1);
    CHECK(sel[1] == 4);
}

TEST_CASE("keyframe selection is idempotent") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 2 + rng.below(40);
        std::vector<FrameStrength> strengths;
        for (size_t i = 0; i < n; ++i) {
            int c = (int)rng.below(400);
            if (rng.uniform() < 0.3) c = 352;
            strengths.push_back({(long)i, c});
        }
        auto sel = select_keyframes(strengths, 352);
        // Feed the selection back with its original counts.
        std::vector<FrameStrength> again;
        for (long id : sel) again.push_back({id, strengths[(size_t)id].count});
        auto sel2 = select_keyframes(again, 352);
        CHECK(sel2 == sel);
        // Every selected frame must come from the input and have detections.
        for (long id : sel) CHECK(strengths[(size_t)id].count > 0);
    }
}

TEST_CASE("keyframe selection edge cases") {
    CHECK(select_keyframes({{7, 100}}, 352) == std::vector<long>{7});
    CHECK(select_keyframes({}, 352).empty());
    CHECK(select_keyframes({{0, 0}, {1, 0}}, 352).empty());

    // A lone run of consecutive full frames collapses to its lower middle.
    auto run4 = select_keyframes(counts_to_strengths({352, 352, 352, 352}), 352);
    REQUIRE(run4.size() == 1);
    CHECK(run4[0] == 1);
    auto run5 = select_keyframes(counts_to_strengths({352, 352, 352, 352, 352}), 352);
    REQUIRE(run5.size() == 1);
    CHECK(run5[0] == 2);

    // Zero-count gaps break runs.
    auto gap = select_keyframes(counts_to_strengths({352, 0, 352}), 352);
    REQUIRE(gap.size() == 2);
    CHECK(gap[0] == 0);
    CHECK(gap[1] == 2);

    CHECK_THROWS_AS(select_keyframes({{0, 5}, {0, 5}}, 352), ValidationError);
    CHECK_THROWS_AS(select_keyframes({{0, -1}}, 352), ValidationError);
}

TEST_CASE("led detector finds the bright core with red halo (tier 1)") {
    Image8 img(400, 300, 20, 20, 20);
    paint_led(img, 200.25, 150.75);
    auto hit = detect_led(img);
    REQUIRE(hit.has_value());
    CHECK(hit->tier == 1);
    CHECK(std::abs(hit->u - 200.25) <= 1.0);
    CHECK(std::abs(hit->v - 150.75) <= 1.0);
    CHECK(hit->r_minor > 10.0);
    CHECK(hit->r_major / hit->r_minor < 1.1);
    CHECK(std::abs(hit->r_major - 15.0) < 1.5);
}

TEST_CASE("led detector falls back to the dimmer tier 2") {
    Image8 img(400, 300, 20, 20, 20);
    // Core bright enough for tier 2 only (HSL lightness 180).
    paint_annulus(img, 120, 90, 12, 30, 200, 30, 30);
    paint_disk(img, 120, 90, 12, 180, 180, 180);
    auto hit = detect_led(img);
    REQUIRE(hit.has_value());
    CHECK(hit->tier == 2);
    CHECK(std::abs(hit->u - 120.0) <= 1.0);
    CHECK(std::abs(hit->v - 90.0) <= 1.0);
}

TEST_CASE("led detector falls back to the red mask (tier 3)") {
    Image8 img(400, 300, 20, 20, 20);
    paint_disk(img, 310, 210, 9, 200, 25, 25); // no bright core at all
    // A less-saturated distractor patch.
    paint_disk(img, 60, 40, 9, 180, 90, 90);
    auto hit = detect_led(img);
    REQUIRE(hit.has_value());
    CHECK(hit->tier == 3);
    CHECK(std::abs(hit->u - 310.0) <= 1.0);
    CHECK(std::abs(hit->v - 210.0) <= 1.0);

    Image8 empty(100, 100, 10, 10, 10);
    CHECK_FALSE(detect_led(empty).has_value());
}

TEST_CASE("led tier 1 requires the red surround") {
    Image8 img(400, 300, 20, 20, 20);
    paint_disk(img, 200, 150, 15, 255, 255, 255); // bare white disk, no halo
    auto hit = detect_led(img);
    if (hit) CHECK(hit->tier != 1);
}

TEST_CASE("led track collapses hovers by spatial jumps") {
    std::vector<std::optional<LedObservation>> track;
    for (int i = 0; i < 10; ++i)
        track.push_back(LedObservation{100.0 + 0.1 * i, 50.0, 10, 10, 1});
    track.push_back(std::nullopt); // missed frame inside a hover
    for (int i = 0; i < 6; ++i)
        track.push_back(LedObservation{101.0, 50.0 + 0.05 * i, 10, 10, 1});
    for (int i = 0; i < 8; ++i)
        track.push_back(LedObservation{400.0, 220.0 + 0.1 * i, 10, 10, 1});
    auto hovers = collapse_led_track(track, 20.0);
    REQUIRE(hovers.size() == 2);
    // Mean of the 16 merged samples: (100.0 + ... + 100.9) + 6 * 101.0 over 16.
    CHECK(hovers[0].u == doctest::Approx(100.65625).epsilon(1e-9));
    CHECK(hovers[1].u == doctest::Approx(400.0).epsilon(1e-9));
    CHECK(collapse_led_track({}, 20.0).empty());
}

TEST_SUITE_END();

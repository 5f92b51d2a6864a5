#include "fluxcal/errors.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/runner.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace fluxcal;

namespace {

// A 2 x 2 corner slice of the zoom grid: small enough to calibrate in
// seconds, spread enough to exercise distinct schedules and noise streams.
ExperimentGrid tiny_grid() {
    ExperimentGrid g;
    g.lens = canon17_lens();
    g.lfl_mm = {17.0, 120.0};
    g.fd_m = {2.25, 13.5};
    for (double lfl : g.lfl_mm)
        for (double fd : g.fd_m) g.states.push_back({lfl, fd});
    return g;
}

SynthConfig quiet_synth(uint64_t seed) {
    SynthConfig cfg;
    cfg.pixel_noise_px = 0.0;
    cfg.seed = seed;
    return cfg;
}

CalibConfig quick_calib(uint64_t seed) {
    CalibConfig cfg;
    cfg.rollouts = 1;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_SUITE_BEGIN("runner");

TEST_CASE("grid runs are deterministic and schedule-independent") {
    ExperimentGrid grid = tiny_grid();
    SensorSpec sensor = default_sensor();

    std::vector<CellResult> serial =
        run_grid(grid, sensor, quiet_synth(7), quick_calib(9), 1);
    std::vector<CellResult> pooled =
        run_grid(grid, sensor, quiet_synth(7), quick_calib(9), 3);

    REQUIRE(serial.size() == 4);
    REQUIRE(pooled.size() == 4);
    for (size_t i = 0; i < serial.size(); ++i) {
        CAPTURE(i);
        CHECK(serial[i].index == i);
        CHECK(serial[i].ok);
        CHECK(pooled[i].ok);
        CHECK(serial[i].state.lfl_mm == grid.states[i].lfl_mm);
        CHECK(serial[i].state.fd_m == grid.states[i].fd_m);
        // Bitwise identical regardless of worker count.
        CHECK(serial[i].calib.intrinsics.fx == pooled[i].calib.intrinsics.fx);
        CHECK(serial[i].calib.intrinsics.fy == pooled[i].calib.intrinsics.fy);
        CHECK(serial[i].calib.intrinsics.cx == pooled[i].calib.intrinsics.cx);
        CHECK(serial[i].calib.intrinsics.cy == pooled[i].calib.intrinsics.cy);
        CHECK(serial[i].calib.intrinsics.k1 == pooled[i].calib.intrinsics.k1);
        CHECK(serial[i].calib.reproj_rms_px == pooled[i].calib.reproj_rms_px);
        CHECK(serial[i].drone_mode == pooled[i].drone_mode);
        // Noiseless cells must land on the generating intrinsics.
        CHECK(std::abs(serial[i].calib.intrinsics.fx - serial[i].gt.fx) <
              0.005 * serial[i].gt.fx);
        CHECK(serial[i].calib.reproj_rms_px < 0.05);
    }
    // Far focus flips the short lens to the drone regime; the long lens
    // magnifies enough to keep the board filling the frame.
    CHECK(serial[1].drone_mode);
    CHECK_FALSE(serial[0].drone_mode);
    CHECK_FALSE(serial[3].drone_mode);
}

TEST_CASE("completion callbacks fire once per cell") {
    ExperimentGrid grid = tiny_grid();
    SensorSpec sensor = default_sensor();
    std::set<size_t> seen;
    size_t calls = 0;
    run_grid(grid, sensor, quiet_synth(7), quick_calib(9), 2,
             [&](const CellResult& r) {
                 ++calls;
                 seen.insert(r.index);
             });
    CHECK(calls == 4);
    CHECK(seen == std::set<size_t>({0, 1, 2, 3}));
}

TEST_CASE("failing cells are reported, not fatal") {
    ExperimentGrid grid;
    grid.lens = canon17_lens();
    grid.lfl_mm = {17.0, 120.0};
    grid.fd_m = {2.25, 13.5};
    // 120 mm cannot focus at 0.3 m (needs fd >= 4 lfl).
    grid.states = {{17.0, 2.25}, {120.0, 0.3}, {120.0, 13.5}};
    std::vector<CellResult> results =
        run_grid(grid, default_sensor(), quiet_synth(1), quick_calib(1), 1);
    REQUIRE(results.size() == 3);
    CHECK(results[0].ok);
    CHECK_FALSE(results[1].ok);
    CHECK_FALSE(results[1].error.empty());
    CHECK(results[2].ok);
}

TEST_CASE("table entries come from the successful cells only") {
    std::vector<CellResult> results(3);
    results[0].ok = true;
    results[0].state = {20.0, 2.0};
    results[0].drone_mode = false;
    results[0].calib.intrinsics.fx = 2400.0;
    results[0].calib.reproj_rms_px = 0.013;
    results[1].ok = false;
    results[1].error = "boom";
    results[2].ok = true;
    results[2].state = {120.0, 13.5};
    results[2].drone_mode = true;
    results[2].calib.intrinsics.fx = 14000.0;
    results[2].calib.reproj_rms_px = 0.4;

    std::vector<LutEntry> entries = entries_from_results(results);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].lfl_mm == 20.0);
    CHECK(entries[0].fd_m == 2.0);
    CHECK(entries[0].source == LutSource::board);
    CHECK(entries[0].intrinsics.fx == 2400.0);
    CHECK(entries[0].quality_rms_px == 0.013);
    CHECK(entries[1].source == LutSource::drone);
    CHECK(entries[1].quality_rms_px == 0.4);
}

TEST_CASE("manifests carry command, config, seed, and version") {
    std::string m = manifest_json("calibrate", "{\"rollouts\": 3}", 42);
    Json j = parse_json(m, "manifest");
    CHECK(j["schema"] == "fluxcal-manifest-v1");
    CHECK(j["command"] == "calibrate");
    CHECK(j["config"]["rollouts"] == 3);
    CHECK(j["seed"] == 42);
    CHECK(j["version"] == "1.0.0");
    std::string ts = j["generated_utc"].get<std::string>();
    CHECK(ts.size() == 20);
    CHECK(ts[4] == '-');
    CHECK(ts[10] == 'T');
    CHECK(ts.back() == 'Z');
    CHECK_THROWS_AS(manifest_json("x", "not json", 1), ValidationError);
}

TEST_SUITE_END();

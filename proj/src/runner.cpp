#include "fluxcal/runner.hpp"

#include "fluxcal/io/json_util.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <limits>
#include <mutex>
#include <thread>

namespace fluxcal {

namespace {

// Distinct, deterministic calibration seed per grid cell.
uint64_t cell_seed(uint64_t base, uint64_t index) {
    return base + 0x9e3779b97f4a7c15ull * (index + 1);
}

} // namespace

std::vector<CellResult> run_grid(const ExperimentGrid& grid, const SensorSpec& sensor,
                                 const SynthConfig& scfg, const CalibConfig& ccfg,
                                 int jobs,
                                 const std::function<void(const CellResult&)>& on_done) {
    if (jobs <= 0) jobs = (int)std::max(1u, std::thread::hardware_concurrency());
    const size_t n = grid.states.size();
    std::vector<CellResult> results(n);
    if (n == 0) return results;

    // Build the distortion schedule from the states that have a thin-lens
    // solution; a state that has none fails in its own cell below instead of
    // poisoning the whole run. The extra ground-truth terms ride along from
    // the synthesis config.
    ScheduleParams sched;
    sched.k1_min = scfg.k1_min;
    sched.k2 = scfg.k2;
    sched.p1 = scfg.p1;
    sched.p2 = scfg.p2;
    {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const LensState& st : grid.states) {
            try {
                double cfl = cfl_mm_to_px(thin_lens_cfl(st), sensor);
                lo = std::min(lo, cfl);
                hi = std::max(hi, cfl);
            } catch (const std::exception&) {
                // reported per cell
            }
        }
        sched.cfl_min_px = lo;
        sched.cfl_max_px = hi;
    }
    std::atomic<size_t> next{0};
    std::mutex done_mutex;

    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= n) return;
            CellResult& r = results[i];
            r.index = i;
            r.state = grid.states[i];
            auto t0 = std::chrono::steady_clock::now();
            try {
                SyntheticExperiment exp =
                    synth_experiment(r.state, sensor, sched, scfg, (uint64_t)i);
                r.drone_mode = exp.drone_mode;
                r.gt = exp.gt;
                CalibConfig cell_cfg = ccfg;
                cell_cfg.seed = cell_seed(ccfg.seed, (uint64_t)i);
                r.calib = calibrate(exp.detections, exp.target, r.state, sensor, cell_cfg);
                r.ok = true;
            } catch (const std::exception& e) {
                r.ok = false;
                r.error = e.what();
            }
            r.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                        t0)
                              .count();
            if (on_done) {
                std::lock_guard<std::mutex> lock(done_mutex);
                on_done(r);
            }
        }
    };

    if (jobs == 1 || n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        int count = std::min<int>(jobs, (int)n);
        pool.reserve((size_t)count);
        for (int t = 0; t < count; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    return results;
}

std::vector<LutEntry> entries_from_results(const std::vector<CellResult>& results) {
    std::vector<LutEntry> entries;
    entries.reserve(results.size());
    for (const CellResult& r : results) {
        if (!r.ok) continue;
        LutEntry e;
        e.lfl_mm = r.state.lfl_mm;
        e.fd_m = r.state.fd_m;
        e.intrinsics = r.calib.intrinsics;
        e.source = r.drone_mode ? LutSource::drone : LutSource::board;
        e.quality_rms_px = r.calib.reproj_rms_px;
        entries.push_back(e);
    }
    return entries;
}

std::string manifest_json(const std::string& command, const std::string& config_json,
                          uint64_t seed) {
    Json j;
    j["schema"] = "fluxcal-manifest-v1";
    j["command"] = command;
    j["config"] = parse_json(config_json, "manifest config");
    j["seed"] = seed;
    j["version"] = "1.0.0";
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    j["generated_utc"] = buf;
    return j.dump(2);
}

} // namespace fluxcal

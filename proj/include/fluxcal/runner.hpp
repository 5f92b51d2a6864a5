#pragma once

#include "fluxcal/calib.hpp"
#include "fluxcal/lut.hpp"
#include "fluxcal/sampling.hpp"
#include "fluxcal/synth.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fluxcal {

// Outcome of one grid cell run end to end: synthesize, then calibrate
// against the synthetic detections. Failed cells carry the error text
// instead of aborting the whole grid.
struct CellResult {
    size_t index = 0; // position in the grid's state list
    LensState state;
    bool drone_mode = false;
    Intrinsics gt;
    CalibrationResult calib;
    double elapsed_s = 0.0;
    bool ok = false;
    std::string error;
};

// Runs every state of the grid through synth + calibrate on a pool of
// `jobs` worker threads (<= 0 uses the hardware thread count). Each cell
// draws its noise from cfg.seed and its grid index, and its calibration
// seed from ccfg.seed and the same index, so results are byte-identical
// regardless of scheduling. Results come back in grid order. `on_done`,
// when set, is invoked once per finished cell under a lock, in completion
// order, for progress reporting.
std::vector<CellResult> run_grid(const ExperimentGrid& grid, const SensorSpec& sensor,
                                 const SynthConfig& scfg, const CalibConfig& ccfg,
                                 int jobs,
                                 const std::function<void(const CellResult&)>& on_done = {});

// Table entries from the successful cells: board/drone source by the mode
// the cell ran in, quality from the final reprojection RMS.
std::vector<LutEntry> entries_from_results(const std::vector<CellResult>& results);

// Manifest accompanying every numeric output: the command that produced it,
// its full configuration (as a JSON object dump), the seed, and tool
// version. The timestamp lives here and only here, keeping result files
// byte-identical across reruns.
std::string manifest_json(const std::string& command, const std::string& config_json,
                          uint64_t seed);

} // namespace fluxcal

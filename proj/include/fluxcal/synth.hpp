#pragma once

#include "fluxcal/camera_model.hpp"
#include "fluxcal/detections.hpp"
#include "fluxcal/sampling.hpp"

#include <cstdint>
#include <vector>

namespace fluxcal {

// Tag-grid calibration board. The 100 x 75 mm board carries 8 x 11 tags of
// 6 mm with 1.8 mm spacing; other sizes scale that layout uniformly by
// width_mm / 100.
struct BoardSpec {
    double width_mm = 0.0;
    double height_mm = 0.0;

    static constexpr int kTagRows = 8;
    static constexpr int kTagCols = 11;
    double tag_mm() const { return 6.0 * width_mm / 100.0; }
    double gap_mm() const { return 1.8 * width_mm / 100.0; }
};

// The four board sizes on hand, ascending.
std::vector<BoardSpec> default_boards();

// Metric tag-corner coordinates (meters), grid centered on the origin in the
// z = 0 plane: 8 x 11 tags x 4 corners = 352 points. Corner order per tag is
// counterclockwise from the minimum-x/y corner; tags scan row-major.
std::vector<Eigen::Vector3d> board_corners(const BoardSpec& board);

// Ground-truth distortion schedule across a lens grid: k1 sweeps from
// k1_min at the shortest calibrated focal length through zero mid-range to
// the mirrored positive value at the longest, via
//   k1(cfl) = cfl^2 * (1 - 2 P) * k1_min / cfl_min^2,
// P = (cfl - cfl_min) / (cfl_max - cfl_min), all focal lengths in pixels.
struct ScheduleParams {
    double cfl_min_px = 0.0;
    double cfl_max_px = 0.0;
    double k1_min = -0.2;
    double k2 = 0.0, p1 = 0.0, p2 = 0.0; // optional extra ground-truth terms
};

// Schedule bounds from the thin-lens focal lengths over a full grid.
ScheduleParams schedule_for_grid(const ExperimentGrid& grid, const SensorSpec& sensor,
                                 double k1_min = -0.2);

double schedule_k1(double cfl_px, const ScheduleParams& sched);

// Ground-truth intrinsics for one lens state: thin-lens focal, centered
// principal point, scheduled distortion.
Intrinsics gt_intrinsics(const LensState& state, const SensorSpec& sensor,
                         const ScheduleParams& sched);

// Board poses for one experiment: 5 orientations (frontal and +-45 degrees
// about the two in-plane axes) x a 5 x 4 placement grid on the focus plane,
// shrunk uniformly until every pose projects all corners inside the 2%-inset
// image. Returns camera-from-board poses (metric board points), frame order
// orientation-major then row-major over the grid.
std::vector<Pose> board_placements(const LensState& state, const SensorSpec& sensor,
                                   const BoardSpec& board, const Intrinsics& gt);

// Largest default board whose placements exist for this state; throws
// NumericalError if even the smallest board cannot be placed.
BoardSpec pick_board(const LensState& state, const SensorSpec& sensor,
                     const Intrinsics& gt, const std::vector<BoardSpec>& boards);

// The 24-point drone constellation in front of the camera: two depth blocks
// at factors p and p + 0.5 of the focus-plane distance, each a 4 x 3
// lawnmower grid spanning the p-scaled focus plane inset by margin_m.
std::vector<Eigen::Vector3d> drone_flight_points(double tuned_cfl_mm, double fd_m,
                                                 const SensorSpec& sensor,
                                                 double p = 0.75, double margin_m = 0.2);

struct SynthConfig {
    double pixel_noise_px = 0.0; // gaussian sigma on detections
    double rtk_noise_m = 0.0;    // survey noise ball radius (drone mode)
    uint64_t seed = 0;
    double k1_min = -0.2;
    double k2 = 0.0, p1 = 0.0, p2 = 0.0;
    double h_cam_m = 1.44; // camera height driving the board/drone switch
    double p = 0.75;       // near-plane scale for the drone constellation
    double margin_m = 0.2; // flight margin inside the scaled focus plane
};

// One grid cell's synthetic experiment: target + poses + detections, plus
// the ground truth needed to score a calibration against it.
struct SyntheticExperiment {
    LensState state;
    bool drone_mode = false;
    BoardSpec board;            // board mode only
    Intrinsics gt;
    TargetModel target;         // what the calibrator is told (drone: surveyed)
    std::vector<Pose> gt_poses; // camera-from-metric-target, one per frame
    DetectionSet detections;
};

// Builds the experiment for one state. The schedule must come from the full
// grid so distortion is consistent across cells; seed_index selects the
// cell's deterministic noise stream from cfg.seed.
SyntheticExperiment synth_experiment(const LensState& state, const SensorSpec& sensor,
                                     const ScheduleParams& sched, const SynthConfig& cfg,
                                     uint64_t seed_index);

} // namespace fluxcal

#pragma once

#include "fluxcal/raster.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fluxcal {

// Calibration target geometry. Points are stored normalized (centroid at the
// origin, max radius 1); scale_m restores meters. planar is derived from the
// geometry on construction.
struct TargetModel {
    std::vector<Eigen::Vector3d> points; // normalized
    double scale_m = 1.0;
    bool planar = false;

    Eigen::Vector3d metric_point(size_t i) const { return points[i] * scale_m; }
};

// Centers and uniformly scales metric points into a TargetModel.
TargetModel make_target(const std::vector<Eigen::Vector3d>& metric_points);

// Plain-text target file: comment header with the scale, then one
// "id x y z" line per normalized point, ids dense from 0.
void save_target(const std::filesystem::path& path, const TargetModel& target);
TargetModel load_target(const std::filesystem::path& path);

// One 2D measurement of a target point in one frame.
struct Observation {
    int point_id = 0;
    double u = 0.0;
    double v = 0.0;
    bool valid = true;
};

struct FrameObservations {
    long frame_id = 0;
    std::vector<Observation> obs;
};

struct DetectionSet {
    std::vector<FrameObservations> frames;

    size_t total_valid() const {
        size_t n = 0;
        for (const auto& f : frames)
            for (const auto& o : f.obs) n += o.valid ? 1 : 0;
        return n;
    }
};

// CSV with header frame_id,point_id,u_px,v_px,valid; rows grouped by frame,
// ascending point ids inside a frame.
void save_detections(const std::filesystem::path& path, const DetectionSet& det);
DetectionSet load_detections(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Keyframe selection

struct FrameStrength {
    long frame_id = 0;
    int count = 0; // detected target points in that frame
};

// Adaptive non-maximum suppression over the detection-count signal:
//  * zero-count frames are dropped up front;
//  * maximal runs of consecutive full-count frames collapse to the run's
//    lower-middle frame;
//  * each frame gets the distance to the nearest stronger frame (strictly
//    stronger after multiplying by c_robust); full-count frames are immune;
//  * the kept set is every frame whose radius reaches the elbow radius of
//    the retained-count curve f(r), where the elbow maximizes the discrete
//    curvature f(r-1) - 2 f(r) + f(r+1) (ties to the smaller radius);
//  * the pass repeats on its own output until it reaches a fixed point, so
//    selection is idempotent.
// Returns selected frame ids in ascending order.
std::vector<long> select_keyframes(const std::vector<FrameStrength>& strengths,
                                   int full_count = 352, double c_robust = 1.0);

// ---------------------------------------------------------------------------
// LED detection

struct LedObservation {
    double u = 0.0; // pixel centroid
    double v = 0.0;
    double r_major = 0.0; // second-moment ellipse radii
    double r_minor = 0.0;
    int tier = 0; // 1, 2 or 3: which heuristic fired
};

struct LedConfig {
    // Tier 1: bright core with a red surround.
    double lightness_1 = 210.0;
    double min_r_minor_1 = 10.0;
    double max_axis_ratio = 1.5;
    double min_red_fraction = 0.25;
    // Tier 2 relaxation.
    double lightness_2 = 150.0;
    double min_r_minor_2 = 8.0;
    // Tier 3: red-mask saturation ranking.
    double sat_similarity = 0.9;
    int min_component_px = 5;
    // Red in OpenCV-style HSV (H in [0,180), S and V in [0,255]):
    // [(0,100,120)..(50,255,255)] union [(130,100,120)..(180,255,255)].
    double red_h_lo_1 = 0.0, red_h_hi_1 = 50.0;
    double red_h_lo_2 = 130.0, red_h_hi_2 = 180.0;
    double red_s_lo = 100.0, red_v_lo = 120.0;
};

// Finds the LED marker in one frame, or nullopt when no tier fires.
std::optional<LedObservation> detect_led(const Image8& frame, const LedConfig& cfg = {});

// Collapses a per-frame LED track into one averaged observation per hover:
// consecutive detections within move_tol_px of the running hover mean belong
// to the same hover; a larger jump starts the next one. Undetected frames
// are skipped.
std::vector<LedObservation> collapse_led_track(
    const std::vector<std::optional<LedObservation>>& track, double move_tol_px = 20.0);

} // namespace fluxcal

#pragma once

#include "fluxcal/camera_model.hpp"
#include "fluxcal/detections.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fluxcal {

// Levenberg-Marquardt knobs shared by every optimization stage.
struct LmConfig {
    int max_iterations = 50;
    double initial_damping = 1e-6;
    double damping_up = 10.0;
    double damping_down = 0.5;
    double convergence_tol = 1e-12; // relative cost decrease per iteration
    double huber_delta_px = 0.0;    // <= 0 keeps the plain quadratic objective
};

// Full calibration configuration. The joint stage uses a Huber kernel by
// default; the initialization stages stay quadratic.
struct CalibConfig {
    int rollouts = 100;
    uint64_t seed = 0;
    bool extra_lm = true;           // optional middle round of the fixed-point init
    int incremental_iterations = 5; // LM cap while frames are being added
    double outlier_floor_px = 2.0;
    double outlier_mad_scale = 3.0;
    double revert_fraction = 0.02; // principal-point drift bound
    LmConfig lm_init;
    LmConfig lm_joint;
    CalibConfig() { lm_joint.huber_delta_px = 1.0; }
};

struct RolloutSummary {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    double score = 0.0;
    double reproj_rms_px = 0.0;
    bool outlier = false;
    bool failed = false;
};

struct CalibrationResult {
    Intrinsics intrinsics;
    std::vector<Pose> poses;         // aligned with the detection frames
    std::vector<uint8_t> frame_used; // frames excluded by pose init stay 0
    double reproj_rms_px = 0.0;
    Intrinsics stage2, stage3, stage4; // history: CFL init, fixed-point, joint
    bool reverted = false;
    int selected_rollout = -1;
    std::vector<RolloutSummary> rollout_stats;
    long active_observations = 0;
    long total_observations = 0;
};

// Pinhole seed from the thin-lens model: fx = fy = CFL in pixels, principal
// point at the image center, zero distortion.
Intrinsics init_cfl(const LensState& state, const SensorSpec& sensor);

// Per-frame pose initialization at the guess intrinsics: homography
// decomposition for planar targets, DLT + orthonormalization otherwise,
// then a short pose-only refinement. Under-constrained or degenerate frames
// are excluded (used = 0); all frames excluded throws ValidationError.
std::vector<Pose> init_poses(const DetectionSet& det, const TargetModel& target,
                             const Intrinsics& guess, std::vector<uint8_t>* used = nullptr);

// Distortion initialization via the fixed-point scheme: three LM rounds each
// followed by (average fx/fy, snap the principal point, zero distortion), an
// optional extra LM round, then four LM rounds with averaging and snapping
// only. Returns with fx = fy and the principal point exactly centered.
// Poses evolve in place. Throws NumericalError naming the round on LM
// divergence.
Intrinsics fixed_point_init(const DetectionSet& det, const TargetModel& target,
                            const Intrinsics& intr0, std::vector<Pose>& poses,
                            const std::vector<uint8_t>& frame_used, bool extra_lm,
                            const LmConfig& lm, const SensorSpec& sensor);

struct JointResult {
    Intrinsics intrinsics;
    std::vector<Pose> poses;
    double reproj_rms_px = 0.0;
    long active_observations = 0;
    long total_observations = 0;
    bool failed = false;
};

// One rollout of the joint stage: frames are shuffled by order_seed and
// added one at a time; each addition re-optimizes everything added so far
// (iteration-capped) and permanently deactivates observations whose
// reprojection error exceeds max(floor, mad_scale * MAD); a full-budget LM
// pass finishes the surviving set. Deterministic in order_seed.
JointResult joint_optimize(const DetectionSet& det, const TargetModel& target,
                           const Intrinsics& init, const std::vector<Pose>& poses,
                           const std::vector<uint8_t>& frame_used, uint64_t order_seed,
                           const LmConfig& lm, int incremental_iterations,
                           double outlier_floor_px, double outlier_mad_scale);

// Flags per-parameter IQR outliers, scores survivors by summed percent
// deviation from the survivor medians, and returns the lowest-score index
// (ties break to the lowest index). Failed rollouts never win. If every
// candidate is flagged, all of them are scored anyway (fallback).
int select_representative(std::vector<RolloutSummary>& rollouts);

// True when either principal-point coordinate sits further than
// fraction * (its centered value) from the image center.
bool principal_drift_exceeds(const Intrinsics& intr, const SensorSpec& sensor,
                             double fraction);

// The full four-stage pipeline: pose init, CFL init, fixed-point distortion
// init, then N joint-optimization rollouts and representative selection.
// A representative whose principal point drifts more than revert_fraction
// from the image center is discarded in favor of the stage-3 intrinsics.
CalibrationResult calibrate(const DetectionSet& det, const TargetModel& target,
                            const LensState& state, const SensorSpec& sensor,
                            const CalibConfig& cfg);

// Serialization of results (strict JSON, round-trip safe).
std::string calibration_to_json(const CalibrationResult& result, const LensState& state,
                                bool drone_mode);

// The slice of a stored result that downstream consumers (LUT build) need.
struct CalibrationRecord {
    LensState state;
    bool drone_mode = false;
    Intrinsics intrinsics;
    double reproj_rms_px = 0.0;
    bool reverted = false;
};

CalibrationRecord calibration_record_from_json(const std::string& text);

} // namespace fluxcal

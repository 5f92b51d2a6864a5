#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

namespace fluxcal {

// Physical sensor: metric active area plus pixel raster.
struct SensorSpec {
    double width_mm = 0.0;
    double height_mm = 0.0;
    int width_px = 0;
    int height_px = 0;

    double pixel_width_mm() const { return width_mm / width_px; }
    double pixel_height_mm() const { return height_mm / height_px; }
    double center_x() const { return width_px / 2.0; }
    double center_y() const { return height_px / 2.0; }
};

// Returns the 28.25 x 18.17 mm, 3424 x 2202 px sensor used throughout.
SensorSpec default_sensor();

// Pinhole + Brown-Conrady intrinsics. fx, fy, cx, cy in pixels; k3 of the
// radial series is fixed at zero and therefore not represented.
struct Intrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    double k1 = 0.0, k2 = 0.0;
    double p1 = 0.0, p2 = 0.0;
};

// Rigid camera-from-target transform: X_cam = rotation * X_target + translation.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

/// Zoom-lens state: lens focal length (the engraving) and focus distance.
struct LensState {
    double lfl_mm = 0.0;
    double fd_m = 0.0;
};

// Projection result. Points at or behind the camera plane are reported
// in-band so FOV filters can count them instead of catching errors.
struct Projection {
    double u = 0.0;
    double v = 0.0;
    bool behind = false;
};

// Calibrated focal length in mm from the thin-lens model. The real root
//   CFL = (FD - sqrt(FD^2 - 4 FD LFL)) / 2
// is evaluated in the cancellation-free form 2 LFL / (1 + sqrt(1 - 4 LFL/FD)).
// Requires fd_m >= 4 * lfl (in common units); throws NumericalError otherwise.
double thin_lens_cfl(const LensState& state);

// Converts a metric focal length to pixels via the horizontal pixel pitch.
double cfl_mm_to_px(double cfl_mm, const SensorSpec& sensor);

// True iff the focus distance exceeds 2 * h_cam * CFL / h_sensor, i.e. the
// board sizes on hand can no longer fill the focus plane and the experiment
// must switch to surveyed outdoor points.
bool use_drone_mode(const LensState& state, const SensorSpec& sensor,
                    double h_cam_m = 1.44);

// Brown-Conrady forward distortion on normalized coordinates.
Eigen::Vector2d distort(const Eigen::Vector2d& xy, const Intrinsics& intr);

// Inverse distortion by damped fixed-point iteration (cap 50 iterations,
// tolerance 1e-10 in normalized units). Throws NumericalError with the
// residual if the iteration fails to contract.
Eigen::Vector2d undistort(const Eigen::Vector2d& xy_distorted, const Intrinsics& intr);

// Full projection of a target-frame point to pixels.
Projection project(const Eigen::Vector3d& point_target, const Pose& pose,
                   const Intrinsics& intr);

// Corners of the focus-plane rectangle (the "full sensor frame") for a lens
// state: at depth s * CFL with s = (FD - CFL) / CFL, spanning s * sensor
// width/height. Camera-frame coordinates in meters, ordered
// (-x,-y), (+x,-y), (+x,+y), (-x,+y).
std::array<Eigen::Vector3d, 4> fsf_plane(const LensState& state, const SensorSpec& sensor);

// Strict JSON (de)serialization. Unknown or missing fields are rejected
// with ValidationError naming the field.
std::string sensor_to_json(const SensorSpec& s);
SensorSpec sensor_from_json(const std::string& text);
std::string intrinsics_to_json(const Intrinsics& i);
Intrinsics intrinsics_from_json(const std::string& text);

} // namespace fluxcal

#pragma once

#include "fluxcal/camera_model.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace fluxcal {

// Mean-earth sphere radius used for all geodetic conversions. At flight-path
// scale (< 1 km) the gap to an ellipsoid model is far below survey noise.
inline constexpr double kEarthRadiusM = 6371008.8;

// Where and how the camera is planted: geodetic anchor, height above ground,
// compass orientation alpha (counterclockwise from north), and theta, the
// angle between the optical axis and the vertical.
struct CameraSiting {
    double lat0_deg = 0.0;
    double lon0_deg = 0.0;
    double height_m = 0.0;
    double alpha_rad = 0.0;
    double theta_rad = 0.0;
};

// Enforces |lat0| <= 90, |lon0| <= 180, height > 0, 0 <= theta <= pi.
// Throws ValidationError otherwise.
void validate_siting(const CameraSiting& siting);

std::string siting_to_json(const CameraSiting& siting);
CameraSiting siting_from_json(const std::string& text);

// Camera space (+x right, +y image-down, +z optical axis) to world space
// (east, north, up): tilt about x by theta, lift by the camera height, then
// yaw by alpha. Rigid, so pairwise distances are preserved.
Eigen::Vector3d cam_to_world(const Eigen::Vector3d& p, const CameraSiting& siting);

struct Geodetic {
    double lat_deg = 0.0;
    double lon_deg = 0.0;
    double alt_m = 0.0;
};

// Forward azimuthal-equidistant step on the sphere from the siting anchor:
// east/north become range + azimuth, altitude is up relative to the ground
// at the camera base. Meant for local displacements (flight scale, well
// under 100 km); throws ValidationError past 1000 km, where the small-earth
// picture has no meaning at all.
Geodetic world_to_geodetic(const Eigen::Vector3d& world, const CameraSiting& siting);

// A flight mission: the camera-space constellation, the same points as
// geodetic waypoints in flight order, and the siting that ties them.
struct FlightPlan {
    std::vector<Eigen::Vector3d> camera_points;
    std::vector<Geodetic> waypoints;
    CameraSiting siting;
};

// Plans the 24-point constellation for one lens state: camera-space points
// from the tuned metric focal length, then cam_to_world and geodetic
// conversion. Waypoints keep the lawnmower order, near depth block first.
// Throws ValidationError (listing the offenders) if any point would sit at
// or below the ground.
FlightPlan plan_flight(const LensState& state, const SensorSpec& sensor,
                       double tuned_cfl_m, const CameraSiting& siting, double p = 0.75,
                       double margin_m = 0.2);

// Writes a QGroundControl-compatible mission: `path` gets the plan-format
// JSON (one hover waypoint item per point, in order) and a CSV sidecar
// (index, lat, lon, alt) lands next to it -- `path` with its extension
// replaced by .csv. Returns the sidecar path.
std::filesystem::path export_mission(const FlightPlan& plan,
                                     const std::filesystem::path& path);

// Parses the CSV sidecar back into waypoints; the round trip is bit-exact.
std::vector<Geodetic> waypoints_from_csv(const std::string& text);

} // namespace fluxcal

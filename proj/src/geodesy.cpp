#include "fluxcal/geodesy.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/csv.hpp"
#include "fluxcal/io/files.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/synth.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fluxcal {

namespace {

constexpr double kPi = 3.14159265358979323846;

double deg2rad(double d) { return d * kPi / 180.0; }
double rad2deg(double r) { return r * 180.0 / kPi; }

} // namespace

void validate_siting(const CameraSiting& s) {
    if (!(std::abs(s.lat0_deg) <= 90.0))
        throw ValidationError("siting: latitude " + std::to_string(s.lat0_deg) +
                              " outside [-90, 90]");
    if (!(std::abs(s.lon0_deg) <= 180.0))
        throw ValidationError("siting: longitude " + std::to_string(s.lon0_deg) +
                              " outside [-180, 180]");
    if (!(s.height_m > 0.0))
        throw ValidationError("siting: camera height must be positive, got " +
                              std::to_string(s.height_m));
    if (!(s.theta_rad >= 0.0 && s.theta_rad <= kPi))
        throw ValidationError("siting: theta " + std::to_string(s.theta_rad) +
                              " outside [0, pi]");
}

std::string siting_to_json(const CameraSiting& s) {
    Json j;
    j["lat0_deg"] = s.lat0_deg;
    j["lon0_deg"] = s.lon0_deg;
    j["height_m"] = s.height_m;
    j["alpha_rad"] = s.alpha_rad;
    j["theta_rad"] = s.theta_rad;
    return j.dump(2);
}

CameraSiting siting_from_json(const std::string& text) {
    Json j = parse_json(text, "siting");
    require_fields(j, {"lat0_deg", "lon0_deg", "height_m", "alpha_rad", "theta_rad"},
                   "siting");
    CameraSiting s;
    s.lat0_deg = json_num(j, "lat0_deg", "siting");
    s.lon0_deg = json_num(j, "lon0_deg", "siting");
    s.height_m = json_num(j, "height_m", "siting");
    s.alpha_rad = json_num(j, "alpha_rad", "siting");
    s.theta_rad = json_num(j, "theta_rad", "siting");
    validate_siting(s);
    return s;
}

Eigen::Vector3d cam_to_world(const Eigen::Vector3d& p, const CameraSiting& siting) {
    double ca = std::cos(siting.alpha_rad), sa = std::sin(siting.alpha_rad);
    double ct = std::cos(siting.theta_rad), st = std::sin(siting.theta_rad);
    // Tilt about x, lift to camera height.
    Eigen::Vector3d t(p.x(), ct * p.y() + st * p.z(),
                      -st * p.y() + ct * p.z() + siting.height_m);
    // Yaw by alpha (counterclockwise from north; z untouched).
    return {ca * t.x() + sa * t.y(), -sa * t.x() + ca * t.y(), t.z()};
}

Geodetic world_to_geodetic(const Eigen::Vector3d& world, const CameraSiting& siting) {
    double east = world.x(), north = world.y();
    double rho = std::hypot(east, north);
    if (!(rho < 1000e3))
        throw ValidationError("world_to_geodetic: displacement " + std::to_string(rho) +
                              " m is far outside the local validity range");
    Geodetic g;
    g.alt_m = world.z();
    if (rho == 0.0) {
        g.lat_deg = siting.lat0_deg;
        g.lon_deg = siting.lon0_deg;
        return g;
    }
    // Spherical azimuthal-equidistant inverse about the anchor.
    double lat0 = deg2rad(siting.lat0_deg);
    double c = rho / kEarthRadiusM;
    double sc = std::sin(c), cc = std::cos(c);
    double lat = std::asin(cc * std::sin(lat0) + north * sc * std::cos(lat0) / rho);
    double dlon = std::atan2(east * sc,
                             rho * std::cos(lat0) * cc - north * std::sin(lat0) * sc);
    g.lat_deg = rad2deg(lat);
    g.lon_deg = siting.lon0_deg + rad2deg(dlon);
    return g;
}

FlightPlan plan_flight(const LensState& state, const SensorSpec& sensor,
                       double tuned_cfl_m, const CameraSiting& siting, double p,
                       double margin_m) {
    validate_siting(siting);
    FlightPlan plan;
    plan.siting = siting;
    plan.camera_points =
        drone_flight_points(tuned_cfl_m * 1000.0, state.fd_m, sensor, p, margin_m);

    std::vector<Eigen::Vector3d> world(plan.camera_points.size());
    std::string grounded;
    for (size_t i = 0; i < plan.camera_points.size(); ++i) {
        world[i] = cam_to_world(plan.camera_points[i], siting);
        if (!(world[i].z() > 0.0)) {
            if (!grounded.empty()) grounded += ", ";
            grounded += std::to_string(i) + " (up " + std::to_string(world[i].z()) + " m)";
        }
    }
    if (!grounded.empty())
        throw ValidationError("plan_flight: waypoints at or below ground: " + grounded);

    plan.waypoints.reserve(world.size());
    for (const Eigen::Vector3d& w : world) plan.waypoints.push_back(world_to_geodetic(w, siting));
    return plan;
}

std::filesystem::path export_mission(const FlightPlan& plan,
                                     const std::filesystem::path& path) {
    Json mission;
    mission["cruiseSpeed"] = 5.0;
    mission["hoverSpeed"] = 2.0;
    mission["firmwareType"] = 12;
    mission["vehicleType"] = 2;
    mission["version"] = 2;
    mission["plannedHomePosition"] =
        Json::array({plan.siting.lat0_deg, plan.siting.lon0_deg, 0.0});
    Json items = Json::array();
    for (size_t i = 0; i < plan.waypoints.size(); ++i) {
        const Geodetic& w = plan.waypoints[i];
        Json item;
        item["type"] = "SimpleItem";
        item["command"] = 16; // NAV_WAYPOINT: fly there and hold
        item["frame"] = 3;    // global position, altitude relative to home
        item["doJumpId"] = (int)i + 1;
        item["autoContinue"] = true;
        item["Altitude"] = w.alt_m;
        item["AltitudeMode"] = 1;
        // hold seconds, acceptance radius, pass radius, yaw, lat, lon, alt
        item["params"] = Json::array({2.0, 0.0, 0.0, nullptr, w.lat_deg, w.lon_deg, w.alt_m});
        items.push_back(item);
    }
    mission["items"] = items;

    Json j;
    j["fileType"] = "Plan";
    j["groundStation"] = "fluxcal";
    j["version"] = 1;
    j["mission"] = mission;
    j["geoFence"] = Json{{"circles", Json::array()}, {"polygons", Json::array()}, {"version", 2}};
    j["rallyPoints"] = Json{{"points", Json::array()}, {"version", 2}};
    write_file(path, j.dump(2) + "\n");

    std::string csv = "index,lat_deg,lon_deg,alt_m\n";
    for (size_t i = 0; i < plan.waypoints.size(); ++i) {
        const Geodetic& w = plan.waypoints[i];
        csv += std::to_string(i) + ',' + fmt_double(w.lat_deg) + ',' +
               fmt_double(w.lon_deg) + ',' + fmt_double(w.alt_m) + '\n';
    }
    std::filesystem::path sidecar = path;
    sidecar.replace_extension(".csv");
    write_file(sidecar, csv);
    return sidecar;
}

std::vector<Geodetic> waypoints_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_lines(text);
    if (lines.empty() || lines[0] != "index,lat_deg,lon_deg,alt_m")
        throw ValidationError("waypoint csv: missing or wrong header");
    std::vector<Geodetic> out;
    for (size_t i = 1; i < lines.size(); ++i) {
        std::vector<std::string> f = split_csv_line(lines[i]);
        if (f.size() != 4)
            throw ValidationError("waypoint csv: line " + std::to_string(i + 1) +
                                  " has " + std::to_string(f.size()) + " fields, want 4");
        if (std::stol(f[0]) != (long)(i - 1))
            throw ValidationError("waypoint csv: line " + std::to_string(i + 1) +
                                  " is out of order");
        Geodetic g;
        g.lat_deg = std::stod(f[1]);
        g.lon_deg = std::stod(f[2]);
        g.alt_m = std::stod(f[3]);
        out.push_back(g);
    }
    return out;
}

} // namespace fluxcal

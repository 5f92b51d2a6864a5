#include "fluxcal/camera_model.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/kernels/project_math.hpp"

#include <cmath>
#include <limits>

namespace fluxcal {

SensorSpec default_sensor() {
    SensorSpec s;
    s.width_mm = 28.25;
    s.height_mm = 18.17;
    s.width_px = 3424;
    s.height_px = 2202;
    return s;
}

double thin_lens_cfl(const LensState& state) {
    double lfl = state.lfl_mm / 1000.0; // meters
    double fd = state.fd_m;
    if (!(lfl > 0.0) || !(fd > 0.0))
        throw NumericalError("thin_lens_cfl: non-positive lens state (lfl_mm=" +
                             std::to_string(state.lfl_mm) + ", fd_m=" + std::to_string(fd) + ")");
    double q = 1.0 - 4.0 * lfl / fd;
    if (q < 0.0) {
        // Allow a hair of rounding slack at the fd = 4 lfl boundary.
        if (q > -1e-12) {
            q = 0.0;
        } else {
            throw NumericalError("thin_lens_cfl: no real solution, focus distance below 4x "
                                 "focal length (lfl_mm=" + std::to_string(state.lfl_mm) +
                                 ", fd_m=" + std::to_string(fd) + ")");
        }
    }
    // (fd - sqrt(fd^2 - 4 fd lfl)) / 2 without the large-fd cancellation.
    double cfl_m = 2.0 * lfl / (1.0 + std::sqrt(q));
    return cfl_m * 1000.0;
}

double cfl_mm_to_px(double cfl_mm, const SensorSpec& sensor) {
    return cfl_mm / sensor.pixel_width_mm();
}

bool use_drone_mode(const LensState& state, const SensorSpec& sensor, double h_cam_m) {
    double cfl_m = thin_lens_cfl(state) / 1000.0;
    double h_sensor_m = sensor.height_mm / 1000.0;
    return state.fd_m > 2.0 * h_cam_m * cfl_m / h_sensor_m;
}

Eigen::Vector2d distort(const Eigen::Vector2d& xy, const Intrinsics& intr) {
    double x = xy.x(), y = xy.y();
    double r2 = x * x + y * y;
    double r4 = r2 * r2;
    double g = 1.0 + intr.k1 * r2 + intr.k2 * r4;
    double a1 = 2.0 * x * y;
    return {x * g + intr.p1 * a1 + intr.p2 * (r2 + 2.0 * x * x),
            y * g + intr.p1 * (r2 + 2.0 * y * y) + intr.p2 * a1};
}

Eigen::Vector2d undistort(const Eigen::Vector2d& xy_distorted, const Intrinsics& intr) {
    // Newton iteration on distort(x, y) = target with the analytic 2x2
    // Jacobian, halving steps that fail to reduce the residual.
    double x = xy_distorted.x(), y = xy_distorted.y();
    auto residual_of = [&](double px, double py) {
        return (distort({px, py}, intr) - xy_distorted).norm();
    };
    double res = residual_of(x, y);
    for (int it = 0; it < 50 && res >= 1e-12; ++it) {
        double r2 = x * x + y * y;
        double g = 1.0 + r2 * (intr.k1 + r2 * intr.k2);
        double h = intr.k1 + 2.0 * intr.k2 * r2;
        double d11 = g + 2.0 * x * x * h + 2.0 * intr.p1 * y + 6.0 * intr.p2 * x;
        double d12 = 2.0 * x * y * h + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y;
        double d22 = g + 2.0 * y * y * h + 6.0 * intr.p1 * y + 2.0 * intr.p2 * x;
        double det = d11 * d22 - d12 * d12;
        if (!std::isfinite(det) || std::abs(det) < 1e-14) break;
        Eigen::Vector2d f = distort({x, y}, intr) - xy_distorted;
        double dx = (d22 * f.x() - d12 * f.y()) / det;
        double dy = (d11 * f.y() - d12 * f.x()) / det;
        double scale = 1.0;
        double nres = res;
        for (int back = 0; back < 20; ++back) {
            nres = residual_of(x - scale * dx, y - scale * dy);
            if (nres < res) break;
            scale *= 0.5;
        }
        if (nres >= res) break; // stalled at a local minimum
        x -= scale * dx;
        y -= scale * dy;
        res = nres;
    }
    if (!(res < 1e-8))
        throw NumericalError("undistort: no convergence, residual " +
                             std::to_string(res) + " normalized units");
    return {x, y};
}

Projection project(const Eigen::Vector3d& point_target, const Pose& pose,
                   const Intrinsics& intr) {
    kernels::ProjectParams P;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) P.r[r * 3 + c] = pose.rotation(r, c);
    for (int i = 0; i < 3; ++i) P.t[i] = pose.translation(i);
    P.fx = intr.fx;
    P.fy = intr.fy;
    P.cx = intr.cx;
    P.cy = intr.cy;
    P.k1 = intr.k1;
    P.k2 = intr.k2;
    P.p1 = intr.p1;
    P.p2 = intr.p2;
    Projection out;
    out.behind = !kernels::project_point(P, point_target.x(), point_target.y(),
                                         point_target.z(), out.u, out.v);
    return out;
}

std::array<Eigen::Vector3d, 4> fsf_plane(const LensState& state, const SensorSpec& sensor) {
    double cfl_m = thin_lens_cfl(state) / 1000.0;
    double s = (state.fd_m - cfl_m) / cfl_m;
    double hw = s * (sensor.width_mm / 1000.0) / 2.0;
    double hh = s * (sensor.height_mm / 1000.0) / 2.0;
    double z = s * cfl_m;
    return {Eigen::Vector3d(-hw, -hh, z), Eigen::Vector3d(hw, -hh, z),
            Eigen::Vector3d(hw, hh, z), Eigen::Vector3d(-hw, hh, z)};
}

std::string sensor_to_json(const SensorSpec& s) {
    Json j;
    j["width_mm"] = s.width_mm;
    j["height_mm"] = s.height_mm;
    j["width_px"] = s.width_px;
    j["height_px"] = s.height_px;
    return j.dump(2);
}

SensorSpec sensor_from_json(const std::string& text) {
    Json j = parse_json(text, "sensor");
    require_fields(j, {"width_mm", "height_mm", "width_px", "height_px"}, "sensor");
    SensorSpec s;
    s.width_mm = json_num(j, "width_mm", "sensor");
    s.height_mm = json_num(j, "height_mm", "sensor");
    s.width_px = json_int(j, "width_px", "sensor");
    s.height_px = json_int(j, "height_px", "sensor");
    if (s.width_mm <= 0 || s.height_mm <= 0 || s.width_px <= 0 || s.height_px <= 0)
        throw ValidationError("sensor: dimensions must be positive");
    return s;
}

std::string intrinsics_to_json(const Intrinsics& i) {
    Json j;
    j["fx"] = i.fx;
    j["fy"] = i.fy;
    j["cx"] = i.cx;
    j["cy"] = i.cy;
    j["k1"] = i.k1;
    j["k2"] = i.k2;
    j["p1"] = i.p1;
    j["p2"] = i.p2;
    return j.dump(2);
}

Intrinsics intrinsics_from_json(const std::string& text) {
    Json j = parse_json(text, "intrinsics");
    require_fields(j, {"fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2"}, "intrinsics");
    Intrinsics i;
    i.fx = json_num(j, "fx", "intrinsics");
    i.fy = json_num(j, "fy", "intrinsics");
    i.cx = json_num(j, "cx", "intrinsics");
    i.cy = json_num(j, "cy", "intrinsics");
    i.k1 = json_num(j, "k1", "intrinsics");
    i.k2 = json_num(j, "k2", "intrinsics");
    i.p1 = json_num(j, "p1", "intrinsics");
    i.p2 = json_num(j, "p2", "intrinsics");
    if (i.fx <= 0 || i.fy <= 0) throw ValidationError("intrinsics: fx and fy must be positive");
    return i;
}

} // namespace fluxcal

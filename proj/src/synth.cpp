#include "fluxcal/synth.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fluxcal {

std::vector<BoardSpec> default_boards() {
    return {{100.0, 75.0}, {200.0, 150.0}, {400.0, 300.0}, {800.0, 600.0}};
}

std::vector<Eigen::Vector3d> board_corners(const BoardSpec& board) {
    if (board.width_mm <= 0 || board.height_mm <= 0)
        throw ValidationError("board_corners: board dimensions must be positive");
    const double t = board.tag_mm() / 1000.0;
    const double g = board.gap_mm() / 1000.0;
    const double pitch = t + g;
    const double total_w = BoardSpec::kTagCols * t + (BoardSpec::kTagCols - 1) * g;
    const double total_h = BoardSpec::kTagRows * t + (BoardSpec::kTagRows - 1) * g;
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(BoardSpec::kTagRows * BoardSpec::kTagCols * 4);
    for (int r = 0; r < BoardSpec::kTagRows; ++r) {
        for (int c = 0; c < BoardSpec::kTagCols; ++c) {
            double x0 = c * pitch - total_w / 2.0;
            double y0 = r * pitch - total_h / 2.0;
            pts.emplace_back(x0, y0, 0.0);
            pts.emplace_back(x0 + t, y0, 0.0);
            pts.emplace_back(x0 + t, y0 + t, 0.0);
            pts.emplace_back(x0, y0 + t, 0.0);
        }
    }
    return pts;
}

ScheduleParams schedule_for_grid(const ExperimentGrid& grid, const SensorSpec& sensor,
                                 double k1_min) {
    ScheduleParams s;
    s.k1_min = k1_min;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& st : grid.states) {
        double cfl = cfl_mm_to_px(thin_lens_cfl(st), sensor);
        lo = std::min(lo, cfl);
        hi = std::max(hi, cfl);
    }
    s.cfl_min_px = lo;
    s.cfl_max_px = hi;
    return s;
}

double schedule_k1(double cfl_px, const ScheduleParams& sched) {
    if (!(sched.cfl_max_px > sched.cfl_min_px))
        throw ValidationError("schedule_k1: need cfl_max_px > cfl_min_px");
    double P = (cfl_px - sched.cfl_min_px) / (sched.cfl_max_px - sched.cfl_min_px);
    double visual_factor = (1.0 - 2.0 * P) * sched.k1_min / (sched.cfl_min_px * sched.cfl_min_px);
    return cfl_px * cfl_px * visual_factor;
}

Intrinsics gt_intrinsics(const LensState& state, const SensorSpec& sensor,
                         const ScheduleParams& sched) {
    Intrinsics intr;
    double cfl_px = cfl_mm_to_px(thin_lens_cfl(state), sensor);
    intr.fx = cfl_px;
    intr.fy = cfl_px;
    intr.cx = sensor.center_x();
    intr.cy = sensor.center_y();
    intr.k1 = schedule_k1(cfl_px, sched);
    intr.k2 = sched.k2;
    intr.p1 = sched.p1;
    intr.p2 = sched.p2;
    return intr;
}

namespace {

kernels::ProjectParams to_params(const Pose& pose, const Intrinsics& intr) {
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
    return P;
}

// Checks one pose against the 2%-of-width inset rectangle.
bool pose_contained(const std::vector<double>& bx, const std::vector<double>& by,
                    const std::vector<double>& bz, const Pose& pose,
                    const Intrinsics& gt, const SensorSpec& sensor) {
    size_t n = bx.size();
    std::vector<double> u(n), v(n);
    std::vector<uint8_t> ok(n);
    kernels::project_batch(bx.data(), by.data(), bz.data(), n, to_params(pose, gt),
                           u.data(), v.data(), ok.data());
    double inset = 0.02 * sensor.width_px;
    double umax = sensor.width_px - inset;
    double vmax = sensor.height_px - inset;
    for (size_t i = 0; i < n; ++i) {
        if (!ok[i]) return false;
        if (u[i] < inset || u[i] > umax || v[i] < inset || v[i] > vmax) return false;
    }
    return true;
}

std::vector<Eigen::Matrix3d> board_orientations() {
    double a = M_PI / 4.0;
    std::vector<Eigen::Matrix3d> rots;
    rots.push_back(Eigen::Matrix3d::Identity());
    rots.push_back(Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix());
    rots.push_back(Eigen::AngleAxisd(-a, Eigen::Vector3d::UnitX()).toRotationMatrix());
    rots.push_back(Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix());
    rots.push_back(Eigen::AngleAxisd(-a, Eigen::Vector3d::UnitY()).toRotationMatrix());
    return rots;
}

std::vector<Pose> placements_or_empty(const LensState& state, const SensorSpec& sensor,
                                      const BoardSpec& board, const Intrinsics& gt) {
    auto corners = board_corners(board);
    size_t n = corners.size();
    std::vector<double> bx(n), by(n), bz(n);
    for (size_t i = 0; i < n; ++i) {
        bx[i] = corners[i].x();
        by[i] = corners[i].y();
        bz[i] = corners[i].z();
    }

    auto fsf = fsf_plane(state, sensor);
    double hw = fsf[2].x(); // focus-plane half extents
    double hh = fsf[2].y();
    double z0 = fsf[2].z();
    double bhw = 0.0, bhh = 0.0;
    for (const auto& c : corners) {
        bhw = std::max(bhw, std::abs(c.x()));
        bhh = std::max(bhh, std::abs(c.y()));
    }

    auto rots = board_orientations();
    auto poses_for = [&](double mx, double my) {
        std::vector<Pose> poses;
        poses.reserve(100);
        for (const auto& rot : rots) {
            for (int iy = 0; iy < 4; ++iy) {
                for (int ix = 0; ix < 5; ++ix) {
                    Pose p;
                    p.rotation = rot;
                    double ox = mx * (ix / 2.0 - 1.0); // 5 columns in [-mx, mx]
                    double oy = my * (2.0 * iy / 3.0 - 1.0); // 4 rows in [-my, my]
                    p.translation = Eigen::Vector3d(ox, oy, z0);
                    poses.push_back(p);
                }
            }
        }
        return poses;
    };
    auto all_contained = [&](const std::vector<Pose>& poses) {
        for (const auto& p : poses)
            if (!pose_contained(bx, by, bz, p, gt, sensor)) return false;
        return true;
    };

    double mx = std::max(0.0, hw - bhw);
    double my = std::max(0.0, hh - bhh);
    // Shrink the placement extents uniformly until every pose fits.
    for (int it = 0; it < 80; ++it) {
        auto poses = poses_for(mx, my);
        if (all_contained(poses)) return poses;
        mx *= 0.9;
        my *= 0.9;
        if (mx < 1e-9 && my < 1e-9) break;
    }
    auto centered = poses_for(0.0, 0.0);
    if (all_contained(centered)) return centered;
    return {};
}

} // namespace

std::vector<Pose> board_placements(const LensState& state, const SensorSpec& sensor,
                                   const BoardSpec& board, const Intrinsics& gt) {
    auto poses = placements_or_empty(state, sensor, board, gt);
    if (poses.empty())
        throw NumericalError("board_placements: board " + std::to_string(board.width_mm) +
                             "x" + std::to_string(board.height_mm) +
                             " mm does not fit the focus plane at lfl_mm=" +
                             std::to_string(state.lfl_mm) + ", fd_m=" +
                             std::to_string(state.fd_m));
    return poses;
}

BoardSpec pick_board(const LensState& state, const SensorSpec& sensor,
                     const Intrinsics& gt, const std::vector<BoardSpec>& boards) {
    if (boards.empty()) throw ValidationError("pick_board: no boards given");
    std::vector<BoardSpec> sorted = boards;
    std::sort(sorted.begin(), sorted.end(),
              [](const BoardSpec& a, const BoardSpec& b) { return a.width_mm > b.width_mm; });
    for (const auto& b : sorted) {
        if (!placements_or_empty(state, sensor, b, gt).empty()) return b;
    }
    throw NumericalError("pick_board: no board fits at lfl_mm=" + std::to_string(state.lfl_mm) +
                         ", fd_m=" + std::to_string(state.fd_m));
}

std::vector<Eigen::Vector3d> drone_flight_points(double tuned_cfl_mm, double fd_m,
                                                 const SensorSpec& sensor, double p,
                                                 double margin_m) {
    if (tuned_cfl_mm <= 0 || fd_m <= 0)
        throw ValidationError("drone_flight_points: cfl and fd must be positive");
    double cfl_m = tuned_cfl_mm / 1000.0;
    double s = (fd_m - cfl_m) / cfl_m;
    double ex = p * s * (sensor.width_mm / 1000.0) / 2.0 - margin_m;
    double ey = p * s * (sensor.height_mm / 1000.0) / 2.0 - margin_m;
    if (ex <= 0 || ey <= 0)
        throw NumericalError("drone_flight_points: margin exceeds the scaled focus plane");
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(24);
    for (int depth = 0; depth < 2; ++depth) {
        double z = (p + 0.5 * depth) * s * cfl_m;
        for (int y = 0; y < 3; ++y) {
            for (int k = 0; k < 4; ++k) {
                int x = (y % 2 == 0) ? k : 3 - k; // lawnmower sweep
                double mux = (2.0 * x - 3.0) / 3.0;
                double muy = y - 1.0;
                pts.emplace_back(mux * ex, muy * ey, z);
            }
        }
    }
    return pts;
}

namespace {

// Projects metric target points through a pose and ground truth, adding
// pixel noise where requested; marks failures invalid.
FrameObservations project_frame(long frame_id, const std::vector<Eigen::Vector3d>& metric,
                                const Pose& pose, const Intrinsics& gt,
                                double pixel_noise, Rng& rng) {
    size_t n = metric.size();
    std::vector<double> px(n), py(n), pz(n), u(n), v(n);
    std::vector<uint8_t> ok(n);
    for (size_t i = 0; i < n; ++i) {
        px[i] = metric[i].x();
        py[i] = metric[i].y();
        pz[i] = metric[i].z();
    }
    kernels::project_batch(px.data(), py.data(), pz.data(), n, to_params(pose, gt),
                           u.data(), v.data(), ok.data());
    FrameObservations f;
    f.frame_id = frame_id;
    f.obs.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Observation o;
        o.point_id = (int)i;
        o.valid = ok[i] != 0;
        o.u = o.valid ? u[i] : 0.0;
        o.v = o.valid ? v[i] : 0.0;
        if (o.valid && pixel_noise > 0.0) {
            o.u += pixel_noise * rng.gaussian();
            o.v += pixel_noise * rng.gaussian();
        }
        f.obs.push_back(o);
    }
    return f;
}

} // namespace

SyntheticExperiment synth_experiment(const LensState& state, const SensorSpec& sensor,
                                     const ScheduleParams& sched, const SynthConfig& cfg,
                                     uint64_t seed_index) {
    SyntheticExperiment exp;
    exp.state = state;
    exp.gt = gt_intrinsics(state, sensor, sched);
    exp.drone_mode = use_drone_mode(state, sensor, cfg.h_cam_m);
    Rng rng(derive_seed(cfg.seed, seed_index));

    if (!exp.drone_mode) {
        exp.board = pick_board(state, sensor, exp.gt, default_boards());
        auto corners = board_corners(exp.board);
        exp.target = make_target(corners);
        auto poses = board_placements(state, sensor, exp.board, exp.gt);
        // Poses map metric (scale * normalized) board points to camera space;
        // board_corners is already centered so no centroid shift is needed.
        exp.gt_poses = poses;
        std::vector<Eigen::Vector3d> metric(exp.target.points.size());
        for (size_t i = 0; i < metric.size(); ++i) metric[i] = exp.target.metric_point(i);
        for (size_t fi = 0; fi < poses.size(); ++fi) {
            exp.detections.frames.push_back(project_frame(
                (long)fi, metric, poses[fi], exp.gt, cfg.pixel_noise_px, rng));
        }
        return exp;
    }

    // Drone mode: survey the flown points with RTK noise; detections observe
    // the true positions.
    double cfl_mm = thin_lens_cfl(state);
    auto true_pts = drone_flight_points(cfl_mm, state.fd_m, sensor, cfg.p, cfg.margin_m);
    std::vector<Eigen::Vector3d> surveyed = true_pts;
    if (cfg.rtk_noise_m > 0.0) {
        for (auto& pt : surveyed) {
            double d[3];
            rng.in_ball(cfg.rtk_noise_m, d);
            pt += Eigen::Vector3d(d[0], d[1], d[2]);
        }
    }
    exp.target = make_target(surveyed);
    // Recover the centroid the normalization removed, to keep the ground
    // truth pose mapping scale * normalized -> camera exact when noiseless.
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : surveyed) centroid += p;
    centroid /= double(surveyed.size());
    Pose pose;
    pose.translation = centroid;
    exp.gt_poses = {pose};
    exp.detections.frames.push_back(
        project_frame(0, true_pts, Pose{}, exp.gt, cfg.pixel_noise_px, rng));
    return exp;
}

} // namespace fluxcal

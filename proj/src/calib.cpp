#include "fluxcal/calib.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fluxcal {

namespace {

// ---------------------------------------------------------------------------
// Flattened problem data: valid observations only, SoA per frame.
// ---------------------------------------------------------------------------

struct FrameData {
    long frame_id = 0;
    std::vector<double> px, py, pz; // metric target coordinates
    std::vector<double> u, v;       // observed pixels
    size_t n = 0;
};

struct Problem {
    std::vector<FrameData> frames;
    long total_obs = 0;
};

Problem build_problem(const DetectionSet& det, const TargetModel& target) {
    Problem prob;
    prob.frames.reserve(det.frames.size());
    for (const auto& frame : det.frames) {
        FrameData fd;
        fd.frame_id = frame.frame_id;
        for (const auto& ob : frame.obs) {
            if (!ob.valid) continue;
            if (ob.point_id < 0 || (size_t)ob.point_id >= target.points.size())
                throw ValidationError("calibrate: point_id " + std::to_string(ob.point_id) +
                                      " outside the target");
            Eigen::Vector3d p = target.metric_point((size_t)ob.point_id);
            fd.px.push_back(p.x());
            fd.py.push_back(p.y());
            fd.pz.push_back(p.z());
            fd.u.push_back(ob.u);
            fd.v.push_back(ob.v);
        }
        fd.n = fd.px.size();
        prob.total_obs += (long)fd.n;
        prob.frames.push_back(std::move(fd));
    }
    return prob;
}

// Per-rollout activation mask, aligned with Problem frames.
using ActiveMask = std::vector<std::vector<uint8_t>>;

ActiveMask full_mask(const Problem& prob) {
    ActiveMask mask(prob.frames.size());
    for (size_t f = 0; f < prob.frames.size(); ++f)
        mask[f].assign(prob.frames[f].n, 1);
    return mask;
}

kernels::ProjectParams make_params(const Intrinsics& intr, const Pose& pose) {
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

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
    double theta = w.norm();
    if (theta < 1e-12) {
        Eigen::Matrix3d skew;
        skew << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
        return Eigen::Matrix3d::Identity() + skew + 0.5 * skew * skew;
    }
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

// Left-multiplicative pose increment matching the analytic Jacobian:
// X' = exp(dw) (R p + t) + dt.
Pose apply_pose_step(const Pose& pose, const Eigen::Vector3d& dw, const Eigen::Vector3d& dt) {
    Eigen::Matrix3d dR = so3_exp(dw);
    Pose out;
    out.rotation = dR * pose.rotation;
    out.translation = dR * pose.translation + dt;
    return out;
}

void apply_intrinsics_step(Intrinsics& intr, const double* d) {
    intr.fx += d[0];
    intr.fy += d[1];
    intr.cx += d[2];
    intr.cy += d[3];
    intr.k1 += d[4];
    intr.k2 += d[5];
    intr.p1 += d[6];
    intr.p2 += d[7];
}

double subset_cost(const Problem& prob, const ActiveMask& mask, const std::vector<int>& act,
                   const Intrinsics& intr, const std::vector<Pose>& poses, double huber,
                   size_t* n_active_out = nullptr) {
    double cost = 0.0;
    size_t n_active = 0;
    for (int f : act) {
        const FrameData& fd = prob.frames[(size_t)f];
        if (fd.n == 0) continue;
        size_t na = 0;
        cost += kernels::frame_cost(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                                    fd.v.data(), mask[(size_t)f].data(), fd.n,
                                    make_params(intr, poses[(size_t)f]), huber, &na);
        n_active += na;
    }
    if (n_active_out) *n_active_out = n_active;
    return cost;
}

// Root-mean-square 2D reprojection distance over active observations.
double subset_rms(const Problem& prob, const ActiveMask& mask, const std::vector<int>& act,
                  const Intrinsics& intr, const std::vector<Pose>& poses,
                  long* n_active_out = nullptr) {
    double sum = 0.0;
    long n = 0;
    std::vector<double> r2;
    for (int f : act) {
        const FrameData& fd = prob.frames[(size_t)f];
        if (fd.n == 0) continue;
        r2.resize(fd.n);
        kernels::residual_sq(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                             fd.v.data(), mask[(size_t)f].data(), fd.n,
                             make_params(intr, poses[(size_t)f]), r2.data());
        for (double e : r2) {
            if (e >= 0.0) {
                sum += e;
                ++n;
            }
        }
    }
    if (n_active_out) *n_active_out = n;
    return n > 0 ? std::sqrt(sum / (double)n) : 0.0;
}

// ---------------------------------------------------------------------------
// Damped Gauss-Newton over intrinsics + the poses of a frame subset, with
// the per-frame 6x6 blocks eliminated by the Schur complement.
// ---------------------------------------------------------------------------

struct LmOutcome {
    bool failed = false; // stalled with a meaningful gradient
    double cost = 0.0;
    int iterations = 0;
};

struct FrameBlocks {
    Eigen::Matrix<double, 8, 8> Hii;
    Eigen::Matrix<double, 8, 6> Hip;
    Eigen::Matrix<double, 6, 6> Hpp;
    Eigen::Matrix<double, 8, 1> gi;
    Eigen::Matrix<double, 6, 1> gp;
    size_t n_active = 0;
};

LmOutcome lm_run(const Problem& prob, const ActiveMask& mask, const std::vector<int>& act,
                 Intrinsics& intr, std::vector<Pose>& poses, const LmConfig& cfg,
                 int max_iterations) {
    LmOutcome out;
    const double huber = cfg.huber_delta_px;
    double cost = subset_cost(prob, mask, act, intr, poses, huber);
    out.cost = cost;
    if (!std::isfinite(cost)) {
        out.failed = true;
        return out;
    }
    double lambda = cfg.initial_damping;
    const double lambda_cap = 1e12;

    std::vector<FrameBlocks> blocks;
    kernels::NormalAccum acc;

    for (int iter = 0; iter < max_iterations; ++iter) {
        // Accumulate normal equations frame by frame.
        blocks.clear();
        blocks.reserve(act.size());
        Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
        Eigen::Matrix<double, 8, 1> gi_sum = Eigen::Matrix<double, 8, 1>::Zero();
        double grad_inf = 0.0;
        for (int f : act) {
            const FrameData& fd = prob.frames[(size_t)f];
            FrameBlocks fb;
            fb.n_active = 0;
            if (fd.n > 0) {
                acc.reset();
                kernels::accumulate_normal(fd.px.data(), fd.py.data(), fd.pz.data(),
                                           fd.u.data(), fd.v.data(), mask[(size_t)f].data(),
                                           fd.n, make_params(intr, poses[(size_t)f]), huber,
                                           acc);
                fb.n_active = acc.n_active;
                if (acc.n_active > 0) {
                    for (int a = 0; a < 8; ++a)
                        for (int b = 0; b < 8; ++b) fb.Hii(a, b) = acc.h[a * 14 + b];
                    for (int a = 0; a < 8; ++a)
                        for (int b = 0; b < 6; ++b) fb.Hip(a, b) = acc.h[a * 14 + 8 + b];
                    for (int a = 0; a < 6; ++a)
                        for (int b = 0; b < 6; ++b)
                            fb.Hpp(a, b) = acc.h[(8 + a) * 14 + 8 + b];
                    for (int a = 0; a < 8; ++a) fb.gi(a) = acc.g[a];
                    for (int a = 0; a < 6; ++a) fb.gp(a) = acc.g[8 + a];
                    A += fb.Hii;
                    gi_sum += fb.gi;
                    grad_inf = std::max(grad_inf, fb.gp.lpNorm<Eigen::Infinity>());
                }
            }
            blocks.push_back(fb);
        }
        grad_inf = std::max(grad_inf, gi_sum.lpNorm<Eigen::Infinity>());
        if (grad_inf <= 1e-14 * (1.0 + cost)) break; // at a stationary point

        // Inner damping loop: retry the same linearization at higher lambda.
        bool accepted = false;
        while (lambda <= lambda_cap) {
            Eigen::Matrix<double, 8, 8> S = A;
            for (int a = 0; a < 8; ++a) S(a, a) += lambda * (A(a, a) + 1e-300);
            Eigen::Matrix<double, 8, 1> rhs = -gi_sum;

            // Eliminate pose blocks.
            std::vector<Eigen::Matrix<double, 6, 6>> Cinv(blocks.size());
            bool solvable = true;
            for (size_t k = 0; k < blocks.size(); ++k) {
                const FrameBlocks& fb = blocks[k];
                if (fb.n_active == 0) continue;
                Eigen::Matrix<double, 6, 6> C = fb.Hpp;
                for (int a = 0; a < 6; ++a) C(a, a) += lambda * (fb.Hpp(a, a) + 1e-300);
                Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(C);
                if (ldlt.info() != Eigen::Success) {
                    solvable = false;
                    break;
                }
                Cinv[k] = ldlt.solve(Eigen::Matrix<double, 6, 6>::Identity());
                S -= fb.Hip * Cinv[k] * fb.Hip.transpose();
                rhs += fb.Hip * (Cinv[k] * fb.gp);
            }
            Eigen::Matrix<double, 8, 1> di = Eigen::Matrix<double, 8, 1>::Zero();
            if (solvable) {
                Eigen::LDLT<Eigen::Matrix<double, 8, 8>> ldlt(S);
                solvable = ldlt.info() == Eigen::Success;
                if (solvable) {
                    di = ldlt.solve(rhs);
                    solvable = di.allFinite();
                }
            }
            if (!solvable) {
                lambda *= cfg.damping_up;
                continue;
            }

            // Back-substitute pose steps and build the trial state.
            Intrinsics trial_intr = intr;
            apply_intrinsics_step(trial_intr, di.data());
            std::vector<Pose> trial_poses = poses;
            bool finite = true;
            for (size_t k = 0; k < blocks.size(); ++k) {
                const FrameBlocks& fb = blocks[k];
                if (fb.n_active == 0) continue;
                Eigen::Matrix<double, 6, 1> dp =
                    Cinv[k] * (-fb.gp - fb.Hip.transpose() * di);
                if (!dp.allFinite()) {
                    finite = false;
                    break;
                }
                int f = act[k];
                trial_poses[(size_t)f] = apply_pose_step(
                    poses[(size_t)f], dp.template head<3>(), dp.template tail<3>());
            }
            double trial_cost = finite ? subset_cost(prob, mask, act, trial_intr,
                                                     trial_poses, huber)
                                       : std::numeric_limits<double>::infinity();
            if (std::isfinite(trial_cost) && trial_cost < cost) {
                intr = trial_intr;
                poses.swap(trial_poses);
                double decrease = cost - trial_cost;
                cost = trial_cost;
                lambda = std::max(lambda * cfg.damping_down, 1e-14);
                accepted = true;
                out.iterations = iter + 1;
                if (decrease <= cfg.convergence_tol * std::max(cost, 1e-300)) {
                    out.cost = cost;
                    return out;
                }
                break;
            }
            lambda *= cfg.damping_up;
        }
        if (!accepted) {
            // No decrease at any damping. After accepted steps that is the
            // normal convergence exit (e.g. sitting on a robust-cost floor);
            // stalling immediately with a meaningful gradient is a failure.
            out.failed = out.iterations == 0 && grad_inf > 1e-6 * (1.0 + cost);
            break;
        }
    }
    out.cost = cost;
    return out;
}

// ---------------------------------------------------------------------------
// Pose initialization: Hartley-normalized homography / DLT + polish.
// ---------------------------------------------------------------------------

struct Norm2d {
    Eigen::Matrix3d T;
    std::vector<Eigen::Vector2d> pts;
};

Norm2d hartley_2d(const std::vector<Eigen::Vector2d>& pts) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : pts) c += p;
    c /= (double)pts.size();
    double mean_norm = 0.0;
    for (const auto& p : pts) mean_norm += (p - c).norm();
    mean_norm /= (double)pts.size();
    double s = mean_norm > 1e-300 ? std::sqrt(2.0) / mean_norm : 1.0;
    Norm2d out;
    out.T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    out.pts.reserve(pts.size());
    for (const auto& p : pts) out.pts.emplace_back(s * (p - c));
    return out;
}

struct Norm3d {
    Eigen::Matrix4d T;
    std::vector<Eigen::Vector3d> pts;
};

Norm3d hartley_3d(const std::vector<Eigen::Vector3d>& pts) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& p : pts) c += p;
    c /= (double)pts.size();
    double mean_norm = 0.0;
    for (const auto& p : pts) mean_norm += (p - c).norm();
    mean_norm /= (double)pts.size();
    double s = mean_norm > 1e-300 ? std::sqrt(3.0) / mean_norm : 1.0;
    Norm3d out;
    out.T.setIdentity();
    out.T(0, 0) = out.T(1, 1) = out.T(2, 2) = s;
    out.T.block<3, 1>(0, 3) = -s * c;
    out.pts.reserve(pts.size());
    for (const auto& p : pts) out.pts.emplace_back(s * (p - c));
    return out;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& M) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        R = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return R;
}

// Homography from plane coordinates to normalized image coordinates, then
// the standard decomposition into a camera-from-plane pose.
bool homography_pose(const std::vector<Eigen::Vector2d>& plane,
                     const std::vector<Eigen::Vector2d>& img, Pose& pose) {
    size_t n = plane.size();
    Norm2d np = hartley_2d(plane);
    Norm2d ni = hartley_2d(img);
    Eigen::MatrixXd Amat(2 * n, 9);
    for (size_t i = 0; i < n; ++i) {
        double X = np.pts[i].x(), Y = np.pts[i].y();
        double x = ni.pts[i].x(), y = ni.pts[i].y();
        Amat.row(2 * i) << -X, -Y, -1, 0, 0, 0, x * X, x * Y, x;
        Amat.row(2 * i + 1) << 0, 0, 0, -X, -Y, -1, y * X, y * Y, y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Amat, Eigen::ComputeThinV);
    Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
    Eigen::Matrix3d Hn;
    Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    Eigen::Matrix3d H = ni.T.inverse() * Hn * np.T;
    if (!H.allFinite()) return false;

    Eigen::Vector3d h1 = H.col(0), h2 = H.col(1), h3 = H.col(2);
    double n1 = h1.norm(), n2 = h2.norm();
    if (n1 < 1e-300 || n2 < 1e-300) return false;
    double lambda = 2.0 / (n1 + n2);
    Eigen::Vector3d r1 = lambda * h1, r2 = lambda * h2, t = lambda * h3;
    if (t.z() < 0.0) { // plane centroid must sit in front of the camera
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    Eigen::Matrix3d R0;
    R0.col(0) = r1;
    R0.col(1) = r2;
    R0.col(2) = r1.cross(r2);
    pose.rotation = orthonormalize(R0);
    pose.translation = t;
    return pose.rotation.allFinite() && t.allFinite();
}

// DLT for a general 3D target: estimate [R|t] (intrinsics already removed
// from the image coordinates), orthonormalize, fix the sign by depth.
bool dlt_pose(const std::vector<Eigen::Vector3d>& pts,
              const std::vector<Eigen::Vector2d>& img, Pose& pose) {
    size_t n = pts.size();
    Norm3d np = hartley_3d(pts);
    Norm2d ni = hartley_2d(img);
    Eigen::MatrixXd Amat(2 * n, 12);
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d& P = np.pts[i];
        double x = ni.pts[i].x(), y = ni.pts[i].y();
        Amat.row(2 * i) << P.x(), P.y(), P.z(), 1, 0, 0, 0, 0, -x * P.x(), -x * P.y(),
            -x * P.z(), -x;
        Amat.row(2 * i + 1) << 0, 0, 0, 0, P.x(), P.y(), P.z(), 1, -y * P.x(), -y * P.y(),
            -y * P.z(), -y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Amat, Eigen::ComputeThinV);
    Eigen::Matrix<double, 12, 1> p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> Pn;
    Pn << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
    Eigen::Matrix<double, 3, 4> P = ni.T.inverse() * Pn * np.T;
    if (!P.allFinite()) return false;

    Eigen::Matrix3d M = P.block<3, 3>(0, 0);
    double row3 = M.row(2).norm();
    if (row3 < 1e-300) return false;
    double s = 1.0 / row3;
    // Majority of target points must project with positive depth.
    double depth_sum = 0.0;
    for (const auto& q : pts) depth_sum += s * (M.row(2).dot(q) + P(2, 3));
    if (depth_sum < 0.0) s = -s;
    pose.rotation = orthonormalize(s * M);
    pose.translation = s * P.col(3);
    return pose.rotation.allFinite() && pose.translation.allFinite();
}

// A short damped pose-only refinement at fixed intrinsics.
void pose_polish(const FrameData& fd, const std::vector<uint8_t>& use,
                 const Intrinsics& intr, Pose& pose, int iters) {
    kernels::NormalAccum acc;
    double lambda = 1e-4;
    size_t na = 0;
    double cost = kernels::frame_cost(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                                      fd.v.data(), use.data(), fd.n,
                                      make_params(intr, pose), 0.0, &na);
    if (na == 0) return;
    for (int it = 0; it < iters; ++it) {
        acc.reset();
        kernels::accumulate_normal(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                                   fd.v.data(), use.data(), fd.n, make_params(intr, pose),
                                   0.0, acc);
        if (acc.n_active == 0) return;
        Eigen::Matrix<double, 6, 6> H;
        Eigen::Matrix<double, 6, 1> g;
        for (int a = 0; a < 6; ++a) {
            g(a) = acc.g[8 + a];
            for (int b = 0; b < 6; ++b) H(a, b) = acc.h[(8 + a) * 14 + 8 + b];
        }
        bool accepted = false;
        while (lambda <= 1e10) {
            Eigen::Matrix<double, 6, 6> Hd = H;
            for (int a = 0; a < 6; ++a) Hd(a, a) += lambda * (H(a, a) + 1e-300);
            Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(Hd);
            if (ldlt.info() == Eigen::Success) {
                Eigen::Matrix<double, 6, 1> d = ldlt.solve(-g);
                if (d.allFinite()) {
                    Pose trial = apply_pose_step(pose, d.head<3>(), d.tail<3>());
                    double tc = kernels::frame_cost(fd.px.data(), fd.py.data(), fd.pz.data(),
                                                    fd.u.data(), fd.v.data(), use.data(),
                                                    fd.n, make_params(intr, trial), 0.0,
                                                    nullptr);
                    if (std::isfinite(tc) && tc < cost) {
                        pose = trial;
                        double decrease = cost - tc;
                        cost = tc;
                        lambda = std::max(lambda * 0.5, 1e-12);
                        accepted = true;
                        if (decrease < 1e-14 * std::max(cost, 1e-300)) return;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if (!accepted) return;
    }
}

double median_of(std::vector<double>& v) {
    if (v.empty()) return 0.0;
    size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (v[mid - 1] + hi);
}

// Linear-interpolation quantile on sorted data (the convention most
// statistics packages default to).
double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    double pos = q * (double)(v.size() - 1);
    size_t lo = (size_t)pos;
    if (lo + 1 >= v.size()) return v.back();
    double frac = pos - (double)lo;
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

Json intrinsics_to_json_obj(const Intrinsics& intr) {
    Json j;
    j["fx"] = intr.fx;
    j["fy"] = intr.fy;
    j["cx"] = intr.cx;
    j["cy"] = intr.cy;
    j["k1"] = intr.k1;
    j["k2"] = intr.k2;
    j["p1"] = intr.p1;
    j["p2"] = intr.p2;
    return j;
}

Intrinsics intrinsics_from_json_obj(const Json& j, const std::string& where) {
    require_fields(j, {"fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2"}, where);
    Intrinsics intr;
    intr.fx = json_num(j, "fx", where);
    intr.fy = json_num(j, "fy", where);
    intr.cx = json_num(j, "cx", where);
    intr.cy = json_num(j, "cy", where);
    intr.k1 = json_num(j, "k1", where);
    intr.k2 = json_num(j, "k2", where);
    intr.p1 = json_num(j, "p1", where);
    intr.p2 = json_num(j, "p2", where);
    return intr;
}

} // namespace

// ---------------------------------------------------------------------------
// Public operations.
// ---------------------------------------------------------------------------

Intrinsics init_cfl(const LensState& state, const SensorSpec& sensor) {
    Intrinsics intr;
    double cfl_px = cfl_mm_to_px(thin_lens_cfl(state), sensor);
    intr.fx = cfl_px;
    intr.fy = cfl_px;
    intr.cx = sensor.center_x();
    intr.cy = sensor.center_y();
    return intr;
}

std::vector<Pose> init_poses(const DetectionSet& det, const TargetModel& target,
                             const Intrinsics& guess, std::vector<uint8_t>* used) {
    if (det.frames.empty()) throw ValidationError("init_poses: no frames");

    // Plane basis for planar targets (right-handed, columns = in-plane axes).
    Eigen::Matrix3d basis = Eigen::Matrix3d::Identity();
    if (target.planar) {
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& p : target.points) cov += p * p.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        // Eigenvalues ascending: columns 2 and 1 span the plane.
        Eigen::Vector3d e1 = eig.eigenvectors().col(2);
        Eigen::Vector3d e2 = eig.eigenvectors().col(1);
        basis.col(0) = e1;
        basis.col(1) = e2;
        basis.col(2) = e1.cross(e2);
    }

    Problem prob = build_problem(det, target);
    std::vector<Pose> poses(det.frames.size());
    std::vector<uint8_t> ok(det.frames.size(), 0);
    size_t n_ok = 0;

    for (size_t f = 0; f < prob.frames.size(); ++f) {
        const FrameData& fd = prob.frames[f];
        size_t min_obs = target.planar ? 4 : 6;
        if (fd.n < min_obs) continue;

        // Normalized image coordinates through the guess intrinsics.
        std::vector<Eigen::Vector2d> img;
        img.reserve(fd.n);
        bool bad = false;
        for (size_t i = 0; i < fd.n; ++i) {
            Eigen::Vector2d d((fd.u[i] - guess.cx) / guess.fx,
                              (fd.v[i] - guess.cy) / guess.fy);
            try {
                img.push_back(undistort(d, guess));
            } catch (const NumericalError&) {
                bad = true;
                break;
            }
        }
        if (bad) continue;

        Pose pose;
        bool got = false;
        if (target.planar) {
            std::vector<Eigen::Vector2d> plane;
            plane.reserve(fd.n);
            std::vector<Eigen::Vector3d> metric;
            metric.reserve(fd.n);
            for (size_t i = 0; i < fd.n; ++i) {
                Eigen::Vector3d p(fd.px[i], fd.py[i], fd.pz[i]);
                metric.push_back(p);
                Eigen::Vector3d q = basis.transpose() * p;
                plane.emplace_back(q.x(), q.y());
            }
            Pose plane_pose;
            if (homography_pose(plane, img, plane_pose)) {
                pose.rotation = plane_pose.rotation * basis.transpose();
                pose.translation = plane_pose.translation;
                got = true;
            }
        } else {
            std::vector<Eigen::Vector3d> metric;
            metric.reserve(fd.n);
            for (size_t i = 0; i < fd.n; ++i)
                metric.emplace_back(fd.px[i], fd.py[i], fd.pz[i]);
            got = dlt_pose(metric, img, pose);
        }
        if (!got) continue;

        std::vector<uint8_t> use(fd.n, 1);
        pose_polish(fd, use, guess, pose, 20);

        // Sanity: the polished pose must keep the frame in front and fit
        // reasonably (a garbage pose leaves most points behind the camera).
        size_t na = 0;
        kernels::frame_cost(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                            fd.v.data(), use.data(), fd.n, make_params(guess, pose), 0.0,
                            &na);
        if (na < min_obs) continue;

        poses[f] = pose;
        ok[f] = 1;
        ++n_ok;
    }
    if (n_ok == 0) throw ValidationError("init_poses: every frame was under-constrained");
    if (used) *used = ok;
    return poses;
}

Intrinsics fixed_point_init(const DetectionSet& det, const TargetModel& target,
                            const Intrinsics& intr0, std::vector<Pose>& poses,
                            const std::vector<uint8_t>& frame_used, bool extra_lm,
                            const LmConfig& lm, const SensorSpec& sensor) {
    Problem prob = build_problem(det, target);
    ActiveMask mask = full_mask(prob);
    std::vector<int> act;
    for (size_t f = 0; f < prob.frames.size(); ++f)
        if (f < frame_used.size() && frame_used[f]) act.push_back((int)f);
    if (act.empty()) throw ValidationError("fixed_point_init: no usable frames");

    Intrinsics intr = intr0;
    auto reset = [&](bool zero_distortion) {
        double f = 0.5 * (intr.fx + intr.fy);
        intr.fx = f;
        intr.fy = f;
        intr.cx = sensor.center_x();
        intr.cy = sensor.center_y();
        if (zero_distortion) {
            intr.k1 = 0.0;
            intr.k2 = 0.0;
            intr.p1 = 0.0;
            intr.p2 = 0.0;
        }
    };

    int round = 0;
    auto run = [&](const char* phase) {
        ++round;
        LmOutcome out = lm_run(prob, mask, act, intr, poses, lm, lm.max_iterations);
        // A stall (no step accepted at any damping, cost finite) leaves the
        // iterate unchanged and the next snap-back reshapes the landscape;
        // only a non-finite cost is an unrecoverable divergence.
        if (out.failed && !std::isfinite(out.cost))
            throw NumericalError(std::string("fixed_point_init: LM diverged in ") + phase +
                                 " round " + std::to_string(round));
    };

    for (int i = 0; i < 3; ++i) {
        run("focal");
        reset(true);
    }
    if (extra_lm) run("extra");
    for (int i = 0; i < 4; ++i) {
        run("joint");
        reset(false);
    }
    return intr;
}

JointResult joint_optimize(const DetectionSet& det, const TargetModel& target,
                           const Intrinsics& init, const std::vector<Pose>& poses,
                           const std::vector<uint8_t>& frame_used, uint64_t order_seed,
                           const LmConfig& lm, int incremental_iterations,
                           double outlier_floor_px, double outlier_mad_scale) {
    Problem prob = build_problem(det, target);
    ActiveMask mask = full_mask(prob);

    JointResult jr;
    jr.intrinsics = init;
    jr.poses = poses;
    jr.total_observations = 0;
    for (const auto& fd : prob.frames) jr.total_observations += (long)fd.n;

    std::vector<int> order;
    for (size_t f = 0; f < prob.frames.size(); ++f)
        if (f < frame_used.size() && frame_used[f] && prob.frames[f].n > 0)
            order.push_back((int)f);
    if (order.empty()) {
        jr.failed = true;
        return jr;
    }
    Rng rng(order_seed);
    rng.shuffle(order);

    std::vector<int> act;
    act.reserve(order.size());
    std::vector<double> r2, norms, dev;
    for (int f : order) {
        act.push_back(f);
        LmOutcome out = lm_run(prob, mask, act, jr.intrinsics, jr.poses, lm,
                               incremental_iterations);
        // A finite-cost stall keeps the current iterate; the next frame
        // addition reshapes the problem. Only non-finite cost is divergence.
        if (out.failed && !std::isfinite(out.cost)) {
            jr.failed = true;
            return jr;
        }

        // Outlier deactivation against the robust scale of current errors.
        norms.clear();
        for (int g : act) {
            const FrameData& fd = prob.frames[(size_t)g];
            r2.resize(fd.n);
            kernels::residual_sq(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                                 fd.v.data(), mask[(size_t)g].data(), fd.n,
                                 make_params(jr.intrinsics, jr.poses[(size_t)g]), r2.data());
            for (double e : r2)
                if (e >= 0.0) norms.push_back(std::sqrt(e));
        }
        if (norms.empty()) {
            jr.failed = true;
            return jr;
        }
        dev = norms;
        double med = median_of(dev);
        for (double& d : dev) d = std::abs(d - med);
        double mad = median_of(dev);
        double thr = std::max(outlier_floor_px, outlier_mad_scale * mad);
        for (int g : act) {
            const FrameData& fd = prob.frames[(size_t)g];
            r2.resize(fd.n);
            kernels::residual_sq(fd.px.data(), fd.py.data(), fd.pz.data(), fd.u.data(),
                                 fd.v.data(), mask[(size_t)g].data(), fd.n,
                                 make_params(jr.intrinsics, jr.poses[(size_t)g]), r2.data());
            for (size_t i = 0; i < fd.n; ++i)
                if (r2[i] >= 0.0 && std::sqrt(r2[i]) > thr) mask[(size_t)g][i] = 0;
        }
    }

    // Final full-budget pass over the surviving observations.
    LmOutcome out = lm_run(prob, mask, act, jr.intrinsics, jr.poses, lm, lm.max_iterations);
    if (out.failed && !std::isfinite(out.cost)) {
        jr.failed = true;
        return jr;
    }
    jr.reproj_rms_px = subset_rms(prob, mask, act, jr.intrinsics, jr.poses,
                                  &jr.active_observations);
    return jr;
}

int select_representative(std::vector<RolloutSummary>& rollouts) {
    std::vector<int> cands;
    for (size_t i = 0; i < rollouts.size(); ++i)
        if (!rollouts[i].failed) cands.push_back((int)i);
    if (cands.empty()) throw NumericalError("select_representative: every rollout failed");

    auto param = [&](int i, int p) -> double {
        const RolloutSummary& r = rollouts[(size_t)i];
        switch (p) {
            case 0: return r.fx;
            case 1: return r.fy;
            case 2: return r.cx;
            default: return r.cy;
        }
    };

    for (int p = 0; p < 4; ++p) {
        std::vector<double> vals;
        vals.reserve(cands.size());
        for (int i : cands) vals.push_back(param(i, p));
        std::sort(vals.begin(), vals.end());
        double q1 = quantile_sorted(vals, 0.25);
        double q3 = quantile_sorted(vals, 0.75);
        double iqr = q3 - q1;
        double lo = q1 - 1.5 * iqr, hi = q3 + 1.5 * iqr;
        for (int i : cands) {
            double v = param(i, p);
            if (v < lo || v > hi) rollouts[(size_t)i].outlier = true;
        }
    }

    std::vector<int> survivors;
    for (int i : cands)
        if (!rollouts[(size_t)i].outlier) survivors.push_back(i);
    if (survivors.empty()) survivors = cands; // fallback: score everyone

    double med[4];
    for (int p = 0; p < 4; ++p) {
        std::vector<double> vals;
        vals.reserve(survivors.size());
        for (int i : survivors) vals.push_back(param(i, p));
        med[p] = median_of(vals);
    }

    int best = -1;
    double best_score = std::numeric_limits<double>::infinity();
    for (int i : survivors) {
        double score = 0.0;
        for (int p = 0; p < 4; ++p) {
            double m = med[p];
            if (m == 0.0) continue;
            score += std::abs(param(i, p) - m) / std::abs(m);
        }
        score *= 100.0;
        rollouts[(size_t)i].score = score;
        if (score < best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

bool principal_drift_exceeds(const Intrinsics& intr, const SensorSpec& sensor,
                             double fraction) {
    double cx0 = sensor.center_x(), cy0 = sensor.center_y();
    return std::abs(intr.cx - cx0) > fraction * cx0 ||
           std::abs(intr.cy - cy0) > fraction * cy0;
}

CalibrationResult calibrate(const DetectionSet& det, const TargetModel& target,
                            const LensState& state, const SensorSpec& sensor,
                            const CalibConfig& cfg) {
    if (cfg.rollouts < 1) throw ValidationError("calibrate: rollouts must be >= 1");
    CalibrationResult res;
    res.stage2 = init_cfl(state, sensor);

    std::vector<uint8_t> used;
    std::vector<Pose> poses = init_poses(det, target, res.stage2, &used);
    std::vector<Pose> stage3_poses = poses;
    res.stage3 = fixed_point_init(det, target, res.stage2, stage3_poses, used,
                                  cfg.extra_lm, cfg.lm_init, sensor);

    // Weak geometry (long focal length, a planar board at a single depth)
    // lets the fixed-point output slide along the focal-distortion ambiguity
    // family (f, k1, k2, p) ~ (s f, s^2 k1, s^4 k2, s^2 p) with the target
    // distance following f. The thin-lens CFL is the trusted physical scale,
    // so move the initialization along that family back to it and restart
    // the poses from the re-anchored intrinsics before the joint stage.
    Intrinsics anchored = res.stage3;
    if (res.stage3.fx > 0.0 && std::isfinite(res.stage3.fx)) {
        double s = res.stage2.fx / res.stage3.fx;
        anchored.fx = res.stage2.fx;
        anchored.fy = res.stage2.fx;
        anchored.k1 *= s * s;
        anchored.k2 *= s * s * s * s;
        anchored.p1 *= s * s;
        anchored.p2 *= s * s;
        poses = init_poses(det, target, anchored, &used);
        stage3_poses = poses;
    }

    std::vector<JointResult> joints((size_t)cfg.rollouts);
    res.rollout_stats.resize((size_t)cfg.rollouts);
    for (int r = 0; r < cfg.rollouts; ++r) {
        joints[(size_t)r] = joint_optimize(det, target, anchored, stage3_poses, used,
                                           derive_seed(cfg.seed, (uint64_t)r), cfg.lm_joint,
                                           cfg.incremental_iterations, cfg.outlier_floor_px,
                                           cfg.outlier_mad_scale);
        RolloutSummary& s = res.rollout_stats[(size_t)r];
        const JointResult& jr = joints[(size_t)r];
        s.failed = jr.failed;
        if (!jr.failed) {
            s.fx = jr.intrinsics.fx;
            s.fy = jr.intrinsics.fy;
            s.cx = jr.intrinsics.cx;
            s.cy = jr.intrinsics.cy;
            s.reproj_rms_px = jr.reproj_rms_px;
        }
    }

    int pick = select_representative(res.rollout_stats);
    res.selected_rollout = pick;
    const JointResult& chosen = joints[(size_t)pick];
    res.stage4 = chosen.intrinsics;
    res.total_observations = chosen.total_observations;

    if (principal_drift_exceeds(chosen.intrinsics, sensor, cfg.revert_fraction)) {
        res.reverted = true;
        res.intrinsics = anchored; // the initialization the joint stage started from
        res.poses = stage3_poses;
        // Reverted quality is the stage-3 fit over all valid observations.
        Problem prob = build_problem(det, target);
        ActiveMask mask = full_mask(prob);
        std::vector<int> act;
        for (size_t f = 0; f < prob.frames.size(); ++f)
            if (used[f] && prob.frames[f].n > 0) act.push_back((int)f);
        res.reproj_rms_px = subset_rms(prob, mask, act, res.intrinsics, res.poses,
                                       &res.active_observations);
    } else {
        res.intrinsics = chosen.intrinsics;
        res.poses = chosen.poses;
        res.reproj_rms_px = chosen.reproj_rms_px;
        res.active_observations = chosen.active_observations;
    }
    res.frame_used = used;
    return res;
}

std::string calibration_to_json(const CalibrationResult& result, const LensState& state,
                                bool drone_mode) {
    Json j;
    j["schema"] = "fluxcal-calibration-v1";
    j["lens_state"] = {{"lfl_mm", state.lfl_mm}, {"fd_m", state.fd_m}};
    j["mode"] = drone_mode ? "drone" : "board";
    j["intrinsics"] = intrinsics_to_json_obj(result.intrinsics);
    j["reproj_rms_px"] = result.reproj_rms_px;
    j["reverted"] = result.reverted;
    j["selected_rollout"] = result.selected_rollout;
    j["active_observations"] = result.active_observations;
    j["total_observations"] = result.total_observations;
    j["stage_history"] = {{"stage2", intrinsics_to_json_obj(result.stage2)},
                          {"stage3", intrinsics_to_json_obj(result.stage3)},
                          {"stage4", intrinsics_to_json_obj(result.stage4)}};
    Json stats = Json::array();
    for (const auto& s : result.rollout_stats) {
        stats.push_back({{"fx", s.fx},
                         {"fy", s.fy},
                         {"cx", s.cx},
                         {"cy", s.cy},
                         {"score", s.score},
                         {"reproj_rms_px", s.reproj_rms_px},
                         {"outlier", s.outlier},
                         {"failed", s.failed}});
    }
    j["rollout_stats"] = stats;
    Json poses = Json::array();
    for (size_t f = 0; f < result.poses.size(); ++f) {
        Json pj;
        pj["used"] = f < result.frame_used.size() ? (bool)result.frame_used[f] : true;
        Json rot = Json::array();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rot.push_back(result.poses[f].rotation(r, c));
        pj["rotation"] = rot;
        pj["translation"] = {result.poses[f].translation.x(),
                             result.poses[f].translation.y(),
                             result.poses[f].translation.z()};
        poses.push_back(pj);
    }
    j["poses"] = poses;
    return j.dump(2);
}

CalibrationRecord calibration_record_from_json(const std::string& text) {
    Json j = parse_json(text, "calibration result");
    const char* where = "calibration result";
    if (!j.contains("schema") || j["schema"] != "fluxcal-calibration-v1")
        throw ValidationError(std::string(where) + ": unknown schema");
    for (const char* key : {"lens_state", "mode", "intrinsics", "reproj_rms_px", "reverted"})
        if (!j.contains(key))
            throw ValidationError(std::string(where) + ": missing field '" + key + "'");
    CalibrationRecord rec;
    require_fields(j["lens_state"], {"lfl_mm", "fd_m"}, "calibration lens_state");
    rec.state.lfl_mm = json_num(j["lens_state"], "lfl_mm", where);
    rec.state.fd_m = json_num(j["lens_state"], "fd_m", where);
    std::string mode = j["mode"].get<std::string>();
    if (mode != "board" && mode != "drone")
        throw ValidationError(std::string(where) + ": mode must be board or drone");
    rec.drone_mode = mode == "drone";
    rec.intrinsics = intrinsics_from_json_obj(j["intrinsics"], "calibration intrinsics");
    rec.reproj_rms_px = json_num(j, "reproj_rms_px", where);
    rec.reverted = j["reverted"].get<bool>();
    return rec;
}

} // namespace fluxcal

#include "fluxcal/camera_model.hpp"
#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace fluxcal;
namespace k = fluxcal::kernels;

namespace {

// Restores the startup backend when a test pins one.
struct BackendGuard {
    k::Backend saved = k::active_backend();
    ~BackendGuard() { k::set_backend(saved); }
};

struct Batch {
    std::vector<double> px, py, pz, uo, vo;
    std::vector<uint8_t> use;
    k::ProjectParams P;
    size_t n = 0;
};

Batch random_batch(Rng& rng, size_t n, bool with_behind, bool with_inactive) {
    Batch b;
    b.n = n;
    Pose pose;
    Eigen::Vector3d axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (axis.norm() < 1e-6) axis = Eigen::Vector3d::UnitZ();
    pose.rotation = Eigen::AngleAxisd(rng.uniform(-0.5, 0.5), axis.normalized())
                        .toRotationMatrix();
    pose.translation = Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                       rng.uniform(1.0, 4.0));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) b.P.r[r * 3 + c] = pose.rotation(r, c);
    for (int i = 0; i < 3; ++i) b.P.t[i] = pose.translation(i);
    b.P.fx = rng.uniform(800, 4000);
    b.P.fy = rng.uniform(800, 4000);
    b.P.cx = rng.uniform(1500, 1900);
    b.P.cy = rng.uniform(900, 1300);
    b.P.k1 = rng.uniform(-0.3, 0.3);
    b.P.k2 = rng.uniform(-0.05, 0.05);
    b.P.p1 = rng.uniform(-0.01, 0.01);
    b.P.p2 = rng.uniform(-0.01, 0.01);
    for (size_t i = 0; i < n; ++i) {
        b.px.push_back(rng.uniform(-0.5, 0.5));
        b.py.push_back(rng.uniform(-0.5, 0.5));
        double z = rng.uniform(-0.3, 0.3);
        if (with_behind && rng.uniform() < 0.1) z = rng.uniform(-6.0, -4.0);
        b.pz.push_back(z);
        b.uo.push_back(rng.uniform(0, 3424));
        b.vo.push_back(rng.uniform(0, 2202));
        b.use.push_back(with_inactive && rng.uniform() < 0.15 ? 0 : 1);
    }
    return b;
}

} // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("scalar batch projection agrees with the single-point camera model") {
    Rng rng(42);
    BackendGuard guard;
    REQUIRE(k::set_backend(k::Backend::scalar));
    for (int trial = 0; trial < 5; ++trial) {
        Batch b = random_batch(rng, 57, true, false);
        std::vector<double> u(b.n), v(b.n);
        std::vector<uint8_t> ok(b.n);
        k::project_batch(b.px.data(), b.py.data(), b.pz.data(), b.n, b.P, u.data(),
                         v.data(), ok.data());
        Pose pose;
        pose.rotation << b.P.r[0], b.P.r[1], b.P.r[2], b.P.r[3], b.P.r[4], b.P.r[5],
            b.P.r[6], b.P.r[7], b.P.r[8];
        pose.translation = Eigen::Vector3d(b.P.t[0], b.P.t[1], b.P.t[2]);
        Intrinsics intr;
        intr.fx = b.P.fx;
        intr.fy = b.P.fy;
        intr.cx = b.P.cx;
        intr.cy = b.P.cy;
        intr.k1 = b.P.k1;
        intr.k2 = b.P.k2;
        intr.p1 = b.P.p1;
        intr.p2 = b.P.p2;
        for (size_t i = 0; i < b.n; ++i) {
            Projection pr = project({b.px[i], b.py[i], b.pz[i]}, pose, intr);
            CHECK(pr.behind == (ok[i] == 0));
            if (!pr.behind) {
                CHECK(pr.u == u[i]);
                CHECK(pr.v == v[i]);
            }
        }
    }
}

TEST_CASE("avx2 projection matches scalar") {
    if (!k::backend_supported(k::Backend::avx2)) return; // nothing to compare on this host
    Rng rng(7);
    BackendGuard guard;
    for (size_t n : {1u, 3u, 4u, 5u, 64u, 353u}) {
        Batch b = random_batch(rng, n, true, false);
        std::vector<double> us(n), vs(n), ua(n), va(n);
        std::vector<uint8_t> oks(n), oka(n);
        REQUIRE(k::set_backend(k::Backend::scalar));
        k::project_batch(b.px.data(), b.py.data(), b.pz.data(), n, b.P, us.data(),
                         vs.data(), oks.data());
        REQUIRE(k::set_backend(k::Backend::avx2));
        k::project_batch(b.px.data(), b.py.data(), b.pz.data(), n, b.P, ua.data(),
                         va.data(), oka.data());
        for (size_t i = 0; i < n; ++i) {
            REQUIRE(oks[i] == oka[i]);
            if (oks[i]) {
                CHECK(ua[i] == doctest::Approx(us[i]).epsilon(1e-11));
                CHECK(va[i] == doctest::Approx(vs[i]).epsilon(1e-11));
            }
        }
    }
}

TEST_CASE("avx2 normal equations match scalar") {
    if (!k::backend_supported(k::Backend::avx2)) return;
    Rng rng(13);
    BackendGuard guard;
    for (double huber : {0.0, 1.0}) {
        for (size_t n : {4u, 21u, 352u}) {
            Batch b = random_batch(rng, n, true, true);
            k::NormalAccum as, aa;
            as.reset();
            aa.reset();
            REQUIRE(k::set_backend(k::Backend::scalar));
            k::accumulate_normal(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(),
                                 b.vo.data(), b.use.data(), n, b.P, huber, as);
            size_t ns = 0;
            double cs = k::frame_cost(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(),
                                      b.vo.data(), b.use.data(), n, b.P, huber, &ns);
            REQUIRE(k::set_backend(k::Backend::avx2));
            k::accumulate_normal(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(),
                                 b.vo.data(), b.use.data(), n, b.P, huber, aa);
            size_t na = 0;
            double ca = k::frame_cost(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(),
                                      b.vo.data(), b.use.data(), n, b.P, huber, &na);

            CHECK(as.n_active == aa.n_active);
            CHECK(ns == na);
            CHECK(aa.cost == doctest::Approx(as.cost).epsilon(1e-10));
            CHECK(ca == doctest::Approx(cs).epsilon(1e-10));
            CHECK(cs == doctest::Approx(as.cost).epsilon(1e-12));
            for (int i = 0; i < k::kNumParams; ++i) {
                CHECK(aa.g[i] == doctest::Approx(as.g[i]).epsilon(1e-9));
                for (int j = 0; j < k::kNumParams; ++j) {
                    double want = as.h[i * k::kNumParams + j];
                    double got = aa.h[i * k::kNumParams + j];
                    CHECK(got == doctest::Approx(want).epsilon(1e-9));
                }
            }
        }
    }
}

TEST_CASE("avx2 residuals match scalar and flag skipped entries") {
    if (!k::backend_supported(k::Backend::avx2)) return;
    Rng rng(29);
    BackendGuard guard;
    Batch b = random_batch(rng, 101, true, true);
    std::vector<double> rs(b.n), ra(b.n);
    REQUIRE(k::set_backend(k::Backend::scalar));
    k::residual_sq(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(), b.vo.data(),
                   b.use.data(), b.n, b.P, rs.data());
    REQUIRE(k::set_backend(k::Backend::avx2));
    k::residual_sq(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(), b.vo.data(),
                   b.use.data(), b.n, b.P, ra.data());
    for (size_t i = 0; i < b.n; ++i) {
        if (rs[i] < 0) {
            CHECK(ra[i] < 0);
            if (!b.use[i]) CHECK(rs[i] < 0);
        } else {
            CHECK(ra[i] == doctest::Approx(rs[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("normal equations honor the use mask and huber weights") {
    Rng rng(31);
    BackendGuard guard;
    REQUIRE(k::set_backend(k::Backend::scalar));
    Batch b = random_batch(rng, 16, false, false);
    // Duplicate batch with half the points masked out; the accumulator must
    // equal accumulating only the kept half.
    std::vector<uint8_t> mask(b.n, 1);
    for (size_t i = 0; i < b.n; i += 2) mask[i] = 0;
    k::NormalAccum masked, manual;
    masked.reset();
    manual.reset();
    k::accumulate_normal(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(), b.vo.data(),
                         mask.data(), b.n, b.P, 0.0, masked);
    std::vector<double> px, py, pz, uo, vo;
    for (size_t i = 0; i < b.n; ++i) {
        if (!mask[i]) continue;
        px.push_back(b.px[i]);
        py.push_back(b.py[i]);
        pz.push_back(b.pz[i]);
        uo.push_back(b.uo[i]);
        vo.push_back(b.vo[i]);
    }
    k::accumulate_normal(px.data(), py.data(), pz.data(), uo.data(), vo.data(), nullptr,
                         px.size(), b.P, 0.0, manual);
    CHECK(masked.n_active == manual.n_active);
    CHECK(masked.cost == doctest::Approx(manual.cost).epsilon(1e-14));
    for (int i = 0; i < k::kNumParams * k::kNumParams; ++i)
        CHECK(masked.h[i] == doctest::Approx(manual.h[i]).epsilon(1e-13));

    // Huber: a far outlier's contribution grows linearly, not quadratically.
    size_t na = 0;
    double base = k::frame_cost(b.px.data(), b.py.data(), b.pz.data(), b.uo.data(),
                                b.vo.data(), nullptr, b.n, b.P, 0.0, &na);
    std::vector<double> uo_out = b.uo;
    uo_out[0] += 1000.0;
    double robust = k::frame_cost(b.px.data(), b.py.data(), b.pz.data(), uo_out.data(),
                                  b.vo.data(), nullptr, b.n, b.P, 1.0, &na);
    double quad = k::frame_cost(b.px.data(), b.py.data(), b.pz.data(), uo_out.data(),
                                b.vo.data(), nullptr, b.n, b.P, 0.0, &na);
    CHECK(robust < quad);
    CHECK(robust < base + 1.0 * (1000.0 + 3424.0)); // linear tail bound
}

TEST_CASE("analytic jacobians match central differences") {
    Rng rng(4242);
    BackendGuard guard;
    REQUIRE(k::set_backend(k::Backend::scalar));
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Batch b = random_batch(rng, 1, false, false);
        double u, v, ju[k::kNumParams], jv[k::kNumParams];
        if (!k::project_point_jacobian(b.P, b.px[0], b.py[0], b.pz[0], u, v, ju, jv))
            continue;
        ++checked;
        for (int p = 0; p < k::kNumParams; ++p) {
            auto eval = [&](double eps) {
                k::ProjectParams P = b.P;
                double x = b.px[0], y = b.py[0], z = b.pz[0];
                if (p < 8) {
                    double* fields[8] = {&P.fx, &P.fy, &P.cx, &P.cy,
                                         &P.k1, &P.k2, &P.p1, &P.p2};
                    *fields[p] += eps;
                } else if (p < 11) {
                    // Left-increment rotation and rotated translation.
                    Eigen::Vector3d w = Eigen::Vector3d::Zero();
                    w[p - 8] = eps;
                    Eigen::Matrix3d R;
                    R << P.r[0], P.r[1], P.r[2], P.r[3], P.r[4], P.r[5], P.r[6], P.r[7],
                        P.r[8];
                    Eigen::Matrix3d dR =
                        Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
                    Eigen::Matrix3d Rn = dR * R;
                    Eigen::Vector3d tn = dR * Eigen::Vector3d(P.t[0], P.t[1], P.t[2]);
                    for (int r = 0; r < 3; ++r)
                        for (int c = 0; c < 3; ++c) P.r[r * 3 + c] = Rn(r, c);
                    for (int i = 0; i < 3; ++i) P.t[i] = tn(i);
                } else {
                    P.t[p - 11] += eps;
                }
                double uu = 0, vv = 0;
                REQUIRE(k::project_point(P, x, y, z, uu, vv));
                return std::pair<double, double>{uu, vv};
            };
            double h = 1e-6;
            auto [up, vp] = eval(h);
            auto [um, vm] = eval(-h);
            double fdu = (up - um) / (2 * h);
            double fdv = (vp - vm) / (2 * h);
            double su = std::max({1.0, std::abs(ju[p])});
            double sv = std::max({1.0, std::abs(jv[p])});
            CHECK(std::abs(fdu - ju[p]) / su < 1e-5);
            CHECK(std::abs(fdv - jv[p]) / sv < 1e-5);
        }
    }
    CHECK(checked >= 150);
}

TEST_CASE("backend pinning round-trips and rejects unsupported requests") {
    BackendGuard guard;
    CHECK(k::backend_supported(k::Backend::scalar));
    REQUIRE(k::set_backend(k::Backend::scalar));
    CHECK(k::active_backend() == k::Backend::scalar);
    if (k::backend_supported(k::Backend::avx2)) {
        REQUIRE(k::set_backend(k::Backend::avx2));
        CHECK(k::active_backend() == k::Backend::avx2);
        CHECK(k::backend_name(k::active_backend()) == "avx2");
    } else {
        CHECK_FALSE(k::set_backend(k::Backend::avx2));
        CHECK(k::active_backend() == k::Backend::scalar);
    }
}

TEST_SUITE_END();

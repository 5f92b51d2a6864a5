// 4-wide AVX2/FMA implementations of the batch kernels. Lane math mirrors
// project_math.hpp exactly; equivalence against the scalar table is enforced
// by tests rather than bit-identity (FMA contraction differs).

#if defined(__x86_64__) || defined(_M_X64)

#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/kernels/kernel_table.hpp"

#include <cmath>
#include <cstring>
#include <immintrin.h>

namespace fluxcal::kernels {
namespace avx2 {
namespace {

constexpr int kTri = kNumParams * (kNumParams + 1) / 2; // 105 upper-tri entries

struct BParams {
    __m256d r[9], t[3];
    __m256d fx, fy, cx, cy, k1, k2, p1, p2;
};

inline BParams broadcast(const ProjectParams& P) {
    BParams b;
    for (int i = 0; i < 9; ++i) b.r[i] = _mm256_set1_pd(P.r[i]);
    for (int i = 0; i < 3; ++i) b.t[i] = _mm256_set1_pd(P.t[i]);
    b.fx = _mm256_set1_pd(P.fx);
    b.fy = _mm256_set1_pd(P.fy);
    b.cx = _mm256_set1_pd(P.cx);
    b.cy = _mm256_set1_pd(P.cy);
    b.k1 = _mm256_set1_pd(P.k1);
    b.k2 = _mm256_set1_pd(P.k2);
    b.p1 = _mm256_set1_pd(P.p1);
    b.p2 = _mm256_set1_pd(P.p2);
    return b;
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// One block of four observations after the projection chain.
struct Chain {
    __m256d good; // all-ones mask where depth is valid and lane is active
    __m256d x, y, iz, X, Y, Z;
    __m256d r2, r4, g, h, a1, xd, yd, u, v;
};

inline Chain run_chain(__m256d px, __m256d py, __m256d pz, const BParams& b,
                       __m256d active) {
    Chain c;
    c.X = _mm256_fmadd_pd(b.r[0], px, _mm256_fmadd_pd(b.r[1], py, _mm256_fmadd_pd(b.r[2], pz, b.t[0])));
    c.Y = _mm256_fmadd_pd(b.r[3], px, _mm256_fmadd_pd(b.r[4], py, _mm256_fmadd_pd(b.r[5], pz, b.t[1])));
    c.Z = _mm256_fmadd_pd(b.r[6], px, _mm256_fmadd_pd(b.r[7], py, _mm256_fmadd_pd(b.r[8], pz, b.t[2])));
    __m256d one = _mm256_set1_pd(1.0);
    c.good = _mm256_and_pd(_mm256_cmp_pd(c.Z, _mm256_set1_pd(kMinDepth), _CMP_GT_OQ), active);
    // Substitute depth 1 on dead lanes so the chain stays finite.
    __m256d zsafe = _mm256_blendv_pd(one, c.Z, c.good);
    c.iz = _mm256_div_pd(one, zsafe);
    c.x = _mm256_mul_pd(c.X, c.iz);
    c.y = _mm256_mul_pd(c.Y, c.iz);
    c.r2 = _mm256_fmadd_pd(c.x, c.x, _mm256_mul_pd(c.y, c.y));
    c.r4 = _mm256_mul_pd(c.r2, c.r2);
    c.g = _mm256_fmadd_pd(b.k1, c.r2, _mm256_fmadd_pd(b.k2, c.r4, one));
    c.h = _mm256_fmadd_pd(_mm256_add_pd(b.k2, b.k2), c.r2, b.k1);
    __m256d two = _mm256_set1_pd(2.0);
    c.a1 = _mm256_mul_pd(two, _mm256_mul_pd(c.x, c.y));
    __m256d xx2 = _mm256_mul_pd(two, _mm256_mul_pd(c.x, c.x));
    __m256d yy2 = _mm256_mul_pd(two, _mm256_mul_pd(c.y, c.y));
    c.xd = _mm256_fmadd_pd(c.x, c.g, _mm256_fmadd_pd(b.p1, c.a1, _mm256_mul_pd(b.p2, _mm256_add_pd(c.r2, xx2))));
    c.yd = _mm256_fmadd_pd(c.y, c.g, _mm256_fmadd_pd(b.p1, _mm256_add_pd(c.r2, yy2), _mm256_mul_pd(b.p2, c.a1)));
    c.u = _mm256_fmadd_pd(b.fx, c.xd, b.cx);
    c.v = _mm256_fmadd_pd(b.fy, c.yd, b.cy);
    return c;
}

// Residual weighting shared by cost and normal-equation paths.
struct Weighted {
    __m256d eu, ev, w, cost, count;
};

inline Weighted run_weight(const Chain& c, __m256d uo, __m256d vo, double huber) {
    Weighted r;
    r.eu = _mm256_sub_pd(c.u, uo);
    r.ev = _mm256_sub_pd(c.v, vo);
    __m256d e2 = _mm256_fmadd_pd(r.eu, r.eu, _mm256_mul_pd(r.ev, r.ev));
    __m256d half_e2 = _mm256_mul_pd(_mm256_set1_pd(0.5), e2);
    __m256d one = _mm256_set1_pd(1.0);
    if (huber > 0.0) {
        __m256d delta = _mm256_set1_pd(huber);
        __m256d norm = _mm256_sqrt_pd(e2);
        __m256d safe = _mm256_max_pd(norm, _mm256_set1_pd(1e-300));
        __m256d wrob = _mm256_div_pd(delta, safe);
        __m256d big = _mm256_cmp_pd(norm, delta, _CMP_GT_OQ);
        __m256d lin = _mm256_mul_pd(delta, _mm256_fnmadd_pd(_mm256_set1_pd(0.5), delta, norm));
        r.w = _mm256_blendv_pd(one, wrob, big);
        r.cost = _mm256_blendv_pd(half_e2, lin, big);
    } else {
        r.w = one;
        r.cost = half_e2;
    }
    r.w = _mm256_and_pd(r.w, c.good);
    r.cost = _mm256_and_pd(r.cost, c.good);
    r.count = _mm256_and_pd(one, c.good);
    return r;
}

// Jacobian rows for four lanes (parameter order of project_math.hpp).
inline void run_jacobian(const Chain& c, const BParams& b, __m256d ju[kNumParams],
                         __m256d jv[kNumParams]) {
    __m256d zero = _mm256_setzero_pd();
    __m256d one = _mm256_set1_pd(1.0);
    __m256d two = _mm256_set1_pd(2.0);
    __m256d six = _mm256_set1_pd(6.0);

    __m256d xx = _mm256_mul_pd(c.x, c.x);
    __m256d yy = _mm256_mul_pd(c.y, c.y);
    __m256d d11 = _mm256_add_pd(c.g, _mm256_fmadd_pd(_mm256_mul_pd(two, xx), c.h,
                  _mm256_fmadd_pd(_mm256_mul_pd(two, b.p1), c.y, _mm256_mul_pd(_mm256_mul_pd(six, b.p2), c.x))));
    __m256d d12 = _mm256_fmadd_pd(c.a1, c.h, _mm256_fmadd_pd(_mm256_mul_pd(two, b.p1), c.x,
                  _mm256_mul_pd(_mm256_mul_pd(two, b.p2), c.y)));
    __m256d d22 = _mm256_add_pd(c.g, _mm256_fmadd_pd(_mm256_mul_pd(two, yy), c.h,
                  _mm256_fmadd_pd(_mm256_mul_pd(six, b.p1), c.y, _mm256_mul_pd(_mm256_mul_pd(two, b.p2), c.x))));

    ju[0] = c.xd;
    ju[1] = zero;
    ju[2] = one;
    ju[3] = zero;
    ju[4] = _mm256_mul_pd(b.fx, _mm256_mul_pd(c.x, c.r2));
    ju[5] = _mm256_mul_pd(b.fx, _mm256_mul_pd(c.x, c.r4));
    ju[6] = _mm256_mul_pd(b.fx, c.a1);
    ju[7] = _mm256_mul_pd(b.fx, _mm256_add_pd(c.r2, _mm256_mul_pd(two, xx)));
    jv[0] = zero;
    jv[1] = c.yd;
    jv[2] = zero;
    jv[3] = one;
    jv[4] = _mm256_mul_pd(b.fy, _mm256_mul_pd(c.y, c.r2));
    jv[5] = _mm256_mul_pd(b.fy, _mm256_mul_pd(c.y, c.r4));
    jv[6] = _mm256_mul_pd(b.fy, _mm256_add_pd(c.r2, _mm256_mul_pd(two, yy)));
    jv[7] = _mm256_mul_pd(b.fy, c.a1);

    __m256d fxiz = _mm256_mul_pd(b.fx, c.iz);
    __m256d fyiz = _mm256_mul_pd(b.fy, c.iz);
    __m256d gu0 = _mm256_mul_pd(fxiz, d11);
    __m256d gu1 = _mm256_mul_pd(fxiz, d12);
    __m256d gu2 = _mm256_sub_pd(zero, _mm256_mul_pd(fxiz, _mm256_fmadd_pd(d11, c.x, _mm256_mul_pd(d12, c.y))));
    __m256d gv0 = _mm256_mul_pd(fyiz, d12);
    __m256d gv1 = _mm256_mul_pd(fyiz, d22);
    __m256d gv2 = _mm256_sub_pd(zero, _mm256_mul_pd(fyiz, _mm256_fmadd_pd(d12, c.x, _mm256_mul_pd(d22, c.y))));

    ju[8] = _mm256_fmsub_pd(gu2, c.Y, _mm256_mul_pd(gu1, c.Z));
    ju[9] = _mm256_fmsub_pd(gu0, c.Z, _mm256_mul_pd(gu2, c.X));
    ju[10] = _mm256_fmsub_pd(gu1, c.X, _mm256_mul_pd(gu0, c.Y));
    ju[11] = gu0;
    ju[12] = gu1;
    ju[13] = gu2;
    jv[8] = _mm256_fmsub_pd(gv2, c.Y, _mm256_mul_pd(gv1, c.Z));
    jv[9] = _mm256_fmsub_pd(gv0, c.Z, _mm256_mul_pd(gv2, c.X));
    jv[10] = _mm256_fmsub_pd(gv1, c.X, _mm256_mul_pd(gv0, c.Y));
    jv[11] = gv0;
    jv[12] = gv1;
    jv[13] = gv2;
}

// Builds the lane-activity mask for a (possibly partial) block.
inline __m256d block_mask(const uint8_t* use, size_t base, size_t n) {
    alignas(32) long long m[4];
    for (int l = 0; l < 4; ++l) {
        size_t i = base + l;
        m[l] = (i < n && (!use || use[i])) ? -1LL : 0LL;
    }
    return _mm256_castsi256_pd(_mm256_load_si256((const __m256i*)m));
}

// Loads a lane quad, zero-padding past the end of the array.
inline __m256d load_pad(const double* p, size_t base, size_t n) {
    if (base + 4 <= n) return _mm256_loadu_pd(p + base);
    alignas(32) double buf[4] = {0, 0, 0, 0};
    for (size_t l = 0; base + l < n; ++l) buf[l] = p[base + l];
    return _mm256_load_pd(buf);
}

} // namespace

void project_batch(const double* px, const double* py, const double* pz, size_t n,
                   const ProjectParams& P, double* u, double* v, uint8_t* ok) {
    BParams b = broadcast(P);
    __m256d all = _mm256_castsi256_pd(_mm256_set1_epi64x(-1LL));
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        Chain c = run_chain(_mm256_loadu_pd(px + i), _mm256_loadu_pd(py + i),
                            _mm256_loadu_pd(pz + i), b, all);
        _mm256_storeu_pd(u + i, c.u);
        _mm256_storeu_pd(v + i, c.v);
        int m = _mm256_movemask_pd(c.good);
        ok[i] = (m >> 0) & 1;
        ok[i + 1] = (m >> 1) & 1;
        ok[i + 2] = (m >> 2) & 1;
        ok[i + 3] = (m >> 3) & 1;
    }
    for (; i < n; ++i) {
        double uu = 0.0, vv = 0.0;
        bool good = project_point(P, px[i], py[i], pz[i], uu, vv);
        ok[i] = good ? 1 : 0;
        u[i] = uu;
        v[i] = vv;
    }
}

void accumulate_normal(const double* px, const double* py, const double* pz,
                       const double* u_obs, const double* v_obs, const uint8_t* use,
                       size_t n, const ProjectParams& P, double huber_delta_px,
                       NormalAccum& acc) {
    BParams b = broadcast(P);
    __m256d hacc[kTri];
    __m256d gacc[kNumParams];
    for (int i = 0; i < kTri; ++i) hacc[i] = _mm256_setzero_pd();
    for (int i = 0; i < kNumParams; ++i) gacc[i] = _mm256_setzero_pd();
    __m256d costv = _mm256_setzero_pd();
    __m256d countv = _mm256_setzero_pd();
    __m256d ju[kNumParams], jv[kNumParams];

    for (size_t base = 0; base < n; base += 4) {
        __m256d active = block_mask(use, base, n);
        if (_mm256_movemask_pd(active) == 0) continue;
        Chain c = run_chain(load_pad(px, base, n), load_pad(py, base, n),
                            load_pad(pz, base, n), b, active);
        Weighted wr = run_weight(c, load_pad(u_obs, base, n), load_pad(v_obs, base, n),
                                 huber_delta_px);
        run_jacobian(c, b, ju, jv);
        costv = _mm256_add_pd(costv, wr.cost);
        countv = _mm256_add_pd(countv, wr.count);
        int idx = 0;
        for (int a = 0; a < kNumParams; ++a) {
            __m256d wa_u = _mm256_mul_pd(wr.w, ju[a]);
            __m256d wa_v = _mm256_mul_pd(wr.w, jv[a]);
            gacc[a] = _mm256_fmadd_pd(wa_u, wr.eu, _mm256_fmadd_pd(wa_v, wr.ev, gacc[a]));
            for (int bb = a; bb < kNumParams; ++bb, ++idx) {
                hacc[idx] = _mm256_fmadd_pd(wa_u, ju[bb], _mm256_fmadd_pd(wa_v, jv[bb], hacc[idx]));
            }
        }
    }

    acc.cost += hsum(costv);
    acc.n_active += (size_t)llround(hsum(countv));
    int idx = 0;
    for (int a = 0; a < kNumParams; ++a) {
        acc.g[a] += hsum(gacc[a]);
        for (int bb = a; bb < kNumParams; ++bb, ++idx) {
            acc.h[a * kNumParams + bb] += hsum(hacc[idx]);
        }
    }
    for (int a = 1; a < kNumParams; ++a)
        for (int bb = 0; bb < a; ++bb)
            acc.h[a * kNumParams + bb] = acc.h[bb * kNumParams + a];
}

double frame_cost(const double* px, const double* py, const double* pz,
                  const double* u_obs, const double* v_obs, const uint8_t* use,
                  size_t n, const ProjectParams& P, double huber_delta_px,
                  size_t* n_active) {
    BParams b = broadcast(P);
    __m256d costv = _mm256_setzero_pd();
    __m256d countv = _mm256_setzero_pd();
    for (size_t base = 0; base < n; base += 4) {
        __m256d active = block_mask(use, base, n);
        if (_mm256_movemask_pd(active) == 0) continue;
        Chain c = run_chain(load_pad(px, base, n), load_pad(py, base, n),
                            load_pad(pz, base, n), b, active);
        Weighted wr = run_weight(c, load_pad(u_obs, base, n), load_pad(v_obs, base, n),
                                 huber_delta_px);
        costv = _mm256_add_pd(costv, wr.cost);
        countv = _mm256_add_pd(countv, wr.count);
    }
    if (n_active) *n_active = (size_t)llround(hsum(countv));
    return hsum(costv);
}

void residual_sq(const double* px, const double* py, const double* pz,
                 const double* u_obs, const double* v_obs, const uint8_t* use,
                 size_t n, const ProjectParams& P, double* r2) {
    BParams b = broadcast(P);
    for (size_t base = 0; base < n; base += 4) {
        __m256d active = block_mask(use, base, n);
        Chain c = run_chain(load_pad(px, base, n), load_pad(py, base, n),
                            load_pad(pz, base, n), b, active);
        __m256d eu = _mm256_sub_pd(c.u, load_pad(u_obs, base, n));
        __m256d ev = _mm256_sub_pd(c.v, load_pad(v_obs, base, n));
        __m256d e2 = _mm256_fmadd_pd(eu, eu, _mm256_mul_pd(ev, ev));
        e2 = _mm256_blendv_pd(_mm256_set1_pd(-1.0), e2, c.good);
        alignas(32) double out[4];
        _mm256_store_pd(out, e2);
        for (size_t l = 0; l < 4 && base + l < n; ++l) r2[base + l] = out[l];
    }
}

} // namespace avx2

const KernelTable kAvx2Table = {
    &avx2::project_batch,
    &avx2::accumulate_normal,
    &avx2::frame_cost,
    &avx2::residual_sq,
};

} // namespace fluxcal::kernels

#endif // x86_64

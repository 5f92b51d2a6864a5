#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/kernels/kernel_table.hpp"

#include <cmath>
#include <cstring>

namespace fluxcal::kernels {

void NormalAccum::reset() {
    std::memset(h, 0, sizeof(h));
    std::memset(g, 0, sizeof(g));
    cost = 0.0;
    n_active = 0;
}

namespace scalar {

void project_batch(const double* px, const double* py, const double* pz, size_t n,
                   const ProjectParams& P, double* u, double* v, uint8_t* ok) {
    for (size_t i = 0; i < n; ++i) {
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
    double ju[kNumParams], jv[kNumParams];
    for (size_t i = 0; i < n; ++i) {
        if (use && !use[i]) continue;
        double u = 0.0, v = 0.0;
        if (!project_point_jacobian(P, px[i], py[i], pz[i], u, v, ju, jv)) continue;
        double eu = u - u_obs[i];
        double ev = v - v_obs[i];
        double e2 = eu * eu + ev * ev;
        double w = 1.0;
        if (huber_delta_px > 0.0) {
            double norm = std::sqrt(e2);
            if (norm > huber_delta_px) {
                w = huber_delta_px / norm;
                acc.cost += huber_delta_px * (norm - 0.5 * huber_delta_px);
            } else {
                acc.cost += 0.5 * e2;
            }
        } else {
            acc.cost += 0.5 * e2;
        }
        for (int a = 0; a < kNumParams; ++a) {
            double wja_u = w * ju[a];
            double wja_v = w * jv[a];
            acc.g[a] += wja_u * eu + wja_v * ev;
            double* hrow = acc.h + a * kNumParams;
            for (int b = a; b < kNumParams; ++b) {
                hrow[b] += wja_u * ju[b] + wja_v * jv[b];
            }
        }
        acc.n_active++;
    }
    // Mirror the upper triangle.
    for (int a = 1; a < kNumParams; ++a)
        for (int b = 0; b < a; ++b)
            acc.h[a * kNumParams + b] = acc.h[b * kNumParams + a];
}

double frame_cost(const double* px, const double* py, const double* pz,
                  const double* u_obs, const double* v_obs, const uint8_t* use,
                  size_t n, const ProjectParams& P, double huber_delta_px,
                  size_t* n_active) {
    double cost = 0.0;
    size_t active = 0;
    for (size_t i = 0; i < n; ++i) {
        if (use && !use[i]) continue;
        double u = 0.0, v = 0.0;
        if (!project_point(P, px[i], py[i], pz[i], u, v)) continue;
        double eu = u - u_obs[i];
        double ev = v - v_obs[i];
        double e2 = eu * eu + ev * ev;
        if (huber_delta_px > 0.0) {
            double norm = std::sqrt(e2);
            cost += (norm > huber_delta_px) ? huber_delta_px * (norm - 0.5 * huber_delta_px)
                                            : 0.5 * e2;
        } else {
            cost += 0.5 * e2;
        }
        active++;
    }
    if (n_active) *n_active = active;
    return cost;
}

void residual_sq(const double* px, const double* py, const double* pz,
                 const double* u_obs, const double* v_obs, const uint8_t* use,
                 size_t n, const ProjectParams& P, double* r2) {
    for (size_t i = 0; i < n; ++i) {
        r2[i] = -1.0;
        if (use && !use[i]) continue;
        double u = 0.0, v = 0.0;
        if (!project_point(P, px[i], py[i], pz[i], u, v)) continue;
        double eu = u - u_obs[i];
        double ev = v - v_obs[i];
        r2[i] = eu * eu + ev * ev;
    }
}

} // namespace scalar

const KernelTable kScalarTable = {
    &scalar::project_batch,
    &scalar::accumulate_normal,
    &scalar::frame_cost,
    &scalar::residual_sq,
};

} // namespace fluxcal::kernels

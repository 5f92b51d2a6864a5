#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/kernels/kernel_table.hpp"

#include <atomic>

namespace fluxcal::kernels {

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_default() {
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend> g_backend{pick_default()};

const KernelTable& table(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2) return kAvx2Table;
#endif
    (void)b;
    return kScalarTable;
}

} // namespace

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2();
}

bool set_backend(Backend b) {
    if (!backend_supported(b)) return false;
    g_backend.store(b, std::memory_order_relaxed);
    return true;
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "unknown";
}

void project_batch(const double* px, const double* py, const double* pz, size_t n,
                   const ProjectParams& params, double* u, double* v, uint8_t* ok) {
    table(active_backend()).project_batch(px, py, pz, n, params, u, v, ok);
}

void accumulate_normal(const double* px, const double* py, const double* pz,
                       const double* u_obs, const double* v_obs, const uint8_t* use,
                       size_t n, const ProjectParams& params, double huber_delta_px,
                       NormalAccum& acc) {
    table(active_backend())
        .accumulate_normal(px, py, pz, u_obs, v_obs, use, n, params, huber_delta_px, acc);
}

double frame_cost(const double* px, const double* py, const double* pz,
                  const double* u_obs, const double* v_obs, const uint8_t* use,
                  size_t n, const ProjectParams& params, double huber_delta_px,
                  size_t* n_active) {
    return table(active_backend())
        .frame_cost(px, py, pz, u_obs, v_obs, use, n, params, huber_delta_px, n_active);
}

void residual_sq(const double* px, const double* py, const double* pz,
                 const double* u_obs, const double* v_obs, const uint8_t* use,
                 size_t n, const ProjectParams& params, double* r2) {
    table(active_backend()).residual_sq(px, py, pz, u_obs, v_obs, use, n, params, r2);
}

} // namespace fluxcal::kernels

#pragma once

#include "fluxcal/kernels/project_math.hpp"

#include <cstddef>
#include <cstdint>
#include <string>

namespace fluxcal::kernels {

// Batch kernels come in a scalar reference flavor and a 4-wide AVX2 flavor.
// The fastest supported flavor is selected once at startup; tests may pin a
// specific one to compare outputs.
enum class Backend { scalar = 0, avx2 = 1 };

Backend active_backend();
bool backend_supported(Backend b);
// Pins the backend; returns false (and changes nothing) if unsupported.
bool set_backend(Backend b);
std::string backend_name(Backend b);

// Projects n target-frame points (SoA) to pixels. ok[i] = 0 marks a point at
// or behind the camera plane; u/v are defined only where ok[i] = 1.
void project_batch(const double* px, const double* py, const double* pz, size_t n,
                   const ProjectParams& params, double* u, double* v, uint8_t* ok);

// Accumulated Gauss-Newton normal equations for one frame: the 14x14
// (intrinsics + pose) system in the parameter order of project_math.hpp.
// h is row-major and fully mirrored; g = J^T r; cost is the (optionally
// Huber-robustified) objective; n_active counts contributing observations.
struct NormalAccum {
    double h[kNumParams * kNumParams];
    double g[kNumParams];
    double cost;
    size_t n_active;
    void reset();
};

// Adds one frame's observations to the accumulator. use[i] = 0 skips an
// observation (deactivated outlier or invalid detection); behind-camera
// points are skipped and NOT counted. huber_delta_px <= 0 disables the
// robust kernel; otherwise residual norms above it get IRLS weight
// delta / norm and linear cost growth.
void accumulate_normal(const double* px, const double* py, const double* pz,
                       const double* u_obs, const double* v_obs, const uint8_t* use,
                       size_t n, const ProjectParams& params, double huber_delta_px,
                       NormalAccum& acc);

// Objective value only (same weighting rules as accumulate_normal).
// Returns the summed cost; n_active (optional) counts contributing terms.
double frame_cost(const double* px, const double* py, const double* pz,
                  const double* u_obs, const double* v_obs, const uint8_t* use,
                  size_t n, const ProjectParams& params, double huber_delta_px,
                  size_t* n_active);

// Squared pixel residuals per observation (for outlier statistics).
// r2[i] is set to a negative value where use[i] = 0 or the point is behind
// the camera.
void residual_sq(const double* px, const double* py, const double* pz,
                 const double* u_obs, const double* v_obs, const uint8_t* use,
                 size_t n, const ProjectParams& params, double* r2);

} // namespace fluxcal::kernels

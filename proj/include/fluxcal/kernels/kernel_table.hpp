#pragma once

#include "fluxcal/kernels/batch.hpp"

namespace fluxcal::kernels {

// Internal dispatch table; one instance per backend.
struct KernelTable {
    void (*project_batch)(const double*, const double*, const double*, size_t,
                          const ProjectParams&, double*, double*, uint8_t*);
    void (*accumulate_normal)(const double*, const double*, const double*,
                              const double*, const double*, const uint8_t*, size_t,
                              const ProjectParams&, double, NormalAccum&);
    double (*frame_cost)(const double*, const double*, const double*, const double*,
                         const double*, const uint8_t*, size_t, const ProjectParams&,
                         double, size_t*);
    void (*residual_sq)(const double*, const double*, const double*, const double*,
                        const double*, const uint8_t*, size_t, const ProjectParams&,
                        double*);
};

extern const KernelTable kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable kAvx2Table;
#endif

} // namespace fluxcal::kernels

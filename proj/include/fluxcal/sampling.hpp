#pragma once

#include "fluxcal/camera_model.hpp"

#include <string>
#include <vector>

namespace fluxcal {

// Zoom lens envelope: focal-length engraving range plus the minimum focus
// distance and the lower end used for the harmonic focus sweep.
struct LensSpec {
    std::string name;
    double lfl_min_mm = 0.0;
    double lfl_max_mm = 0.0;
    double fd_min_m = 0.0;
    double fd_lower_m = 0.0;
};

// Built-in lenses exercised throughout the tests and the pipeline defaults.
LensSpec canon17_lens();   // 17-120 mm, FD 0.853 m / sweep from 1.5 m
LensSpec premista80_lens(); // 80-250 mm, FD 1.5 m / sweep from 2.5 m

std::string lens_to_json(const LensSpec& l);
LensSpec lens_from_json(const std::string& text);

// Focal-length samples: start at the minimum, step by 1, 2, 4, ... mm while
// below the maximum, then force the maximum and deduplicate.
std::vector<double> sample_lfl(double lfl_min_mm, double lfl_max_mm);

// Focus-distance samples: the minimum plus ten harmonically spaced values
// from fd_lower upward, via diopters D_i = (10 - i) / (9 * fd_lower) for
// i = 1..9. Sorted ascending, deduplicated.
std::vector<double> sample_fd(double fd_min_m, double fd_lower_m);

// One lens state per (LFL, FD) pair, FD varying fastest.
struct ExperimentGrid {
    LensSpec lens;
    std::vector<double> lfl_mm;
    std::vector<double> fd_m;
    std::vector<LensState> states;
};

ExperimentGrid build_grid(const LensSpec& lens);

} // namespace fluxcal

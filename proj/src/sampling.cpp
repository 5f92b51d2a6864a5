#include "fluxcal/sampling.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/json_util.hpp"

#include <algorithm>
#include <cmath>

namespace fluxcal {

LensSpec canon17_lens() {
    return {"canon17", 17.0, 120.0, 0.853, 1.5};
}

LensSpec premista80_lens() {
    return {"premista80", 80.0, 250.0, 1.5, 2.5};
}

std::string lens_to_json(const LensSpec& l) {
    Json j;
    j["name"] = l.name;
    j["lfl_min_mm"] = l.lfl_min_mm;
    j["lfl_max_mm"] = l.lfl_max_mm;
    j["fd_min_m"] = l.fd_min_m;
    j["fd_lower_m"] = l.fd_lower_m;
    return j.dump(2);
}

LensSpec lens_from_json(const std::string& text) {
    Json j = parse_json(text, "lens");
    require_fields(j, {"name", "lfl_min_mm", "lfl_max_mm", "fd_min_m", "fd_lower_m"}, "lens");
    LensSpec l;
    if (!j.at("name").is_string()) throw ValidationError("lens: field \"name\" must be a string");
    l.name = j.at("name").get<std::string>();
    l.lfl_min_mm = json_num(j, "lfl_min_mm", "lens");
    l.lfl_max_mm = json_num(j, "lfl_max_mm", "lens");
    l.fd_min_m = json_num(j, "fd_min_m", "lens");
    l.fd_lower_m = json_num(j, "fd_lower_m", "lens");
    if (l.lfl_min_mm <= 0 || l.lfl_max_mm < l.lfl_min_mm)
        throw ValidationError("lens: need 0 < lfl_min_mm <= lfl_max_mm");
    if (l.fd_min_m <= 0 || l.fd_lower_m < l.fd_min_m)
        throw ValidationError("lens: need 0 < fd_min_m <= fd_lower_m");
    return l;
}

std::vector<double> sample_lfl(double lfl_min_mm, double lfl_max_mm) {
    if (lfl_min_mm <= 0 || lfl_max_mm < lfl_min_mm)
        throw ValidationError("sample_lfl: need 0 < min <= max");
    std::vector<double> out;
    double v = lfl_min_mm;
    double step = 1.0;
    while (v < lfl_max_mm) {
        out.push_back(v);
        v += step;
        step *= 2.0;
    }
    out.push_back(lfl_max_mm);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<double> sample_fd(double fd_min_m, double fd_lower_m) {
    if (fd_min_m <= 0 || fd_lower_m < fd_min_m)
        throw ValidationError("sample_fd: need 0 < fd_min <= fd_lower");
    std::vector<double> out;
    out.push_back(fd_min_m);
    for (int i = 1; i <= 9; ++i) {
        double diopters = (10.0 - i) / (9.0 * fd_lower_m);
        out.push_back(1.0 / diopters);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              out.end());
    return out;
}

ExperimentGrid build_grid(const LensSpec& lens) {
    ExperimentGrid g;
    g.lens = lens;
    g.lfl_mm = sample_lfl(lens.lfl_min_mm, lens.lfl_max_mm);
    g.fd_m = sample_fd(lens.fd_min_m, lens.fd_lower_m);
    for (double lfl : g.lfl_mm)
        for (double fd : g.fd_m) g.states.push_back({lfl, fd});
    return g;
}

} // namespace fluxcal

#pragma once

#include "fluxcal/camera_model.hpp"
#include "fluxcal/sampling.hpp"

#include <string>
#include <vector>

namespace fluxcal {

// One calibrated (LFL, FD) datapoint of a per-lens lookup table.
enum class LutSource { board, drone };

struct LutEntry {
    double lfl_mm = 0.0;
    double fd_m = 0.0;
    Intrinsics intrinsics;
    LutSource source = LutSource::board;
    double quality_rms_px = 0.0;
};

// Grid cell between two LFL columns: LFL coordinates are exact per column,
// FD jitters, so the cell is a trapezoid with vertical parallel sides.
// Corners are entry indices: A=(lfl0, fd low), B=(lfl0, fd high),
// C=(lfl1, fd high), D=(lfl1, fd low).
struct LutCell {
    int a = -1, b = -1, c = -1, d = -1;
};

struct LutTriangle {
    int v0 = -1, v1 = -1, v2 = -1;
};

// Cells cover the grid-like part of the table; Delaunay triangles cover the
// rest of the convex hull. Cells win where the two overlap.
struct LutRegions {
    std::vector<LutCell> cells;
    std::vector<LutTriangle> triangles;
};

struct LutTable {
    LensSpec lens;
    SensorSpec sensor;
    std::vector<LutEntry> entries;
    double row_tolerance = 0.05; // relative FD agreement that makes a grid row
    LutRegions regions;          // derived from entries on build/load
};

// Decomposes the entry cloud: FD-rank pairing between consecutive LFL
// columns yields trapezoids wherever paired FDs agree within row_tolerance;
// a Delaunay triangulation over all entries (computed on axis-normalized
// coordinates) covers everything else, dropping triangles that lie inside
// cells. Throws ValidationError for < 3 entries or an all-collinear cloud.
LutRegions build_regions(const std::vector<LutEntry>& entries, double row_tolerance = 0.05);

// Validates entry uniqueness and builds the regions.
LutTable make_lut(const LensSpec& lens, const SensorSpec& sensor,
                  std::vector<LutEntry> entries, double row_tolerance = 0.05);

// Trapezoid geometry and the bilinear weights of a query inside it. y1/y2
// are where the vertical line through the query meets edges AD and BC.
struct TrapezoidCorners {
    double lfl0 = 0.0, lfl1 = 0.0;     // left and right column positions
    double fd0 = 0.0, fd1 = 0.0;       // A (low) and B (high) on the left
    double fd2 = 0.0, fd3 = 0.0;       // C (high) and D (low) on the right
};

struct BilinearWeights {
    double p_lfl = 0.0, p_fd = 0.0;
    double y1 = 0.0, y2 = 0.0;
    double wa = 0.0, wb = 0.0, wc = 0.0, wd = 0.0;
};

BilinearWeights trapezoid_weights(const TrapezoidCorners& tz, double lfl, double fd);

// Componentwise bilinear blend of the four corner intrinsics.
Intrinsics interp_trapezoid(const TrapezoidCorners& tz, const Intrinsics& a,
                            const Intrinsics& b, const Intrinsics& c, const Intrinsics& d,
                            double lfl, double fd);

// Barycentric coordinates of (x, y) in the triangle p0-p1-p2 (throws on a
// degenerate triangle), and the matching componentwise blend.
struct Barycentric {
    double w0 = 0.0, w1 = 0.0, w2 = 0.0;
};

Barycentric barycentric_weights(double x0, double y0, double x1, double y1, double x2,
                                double y2, double x, double y);

Intrinsics interp_triangle(double x0, double y0, const Intrinsics& i0, double x1, double y1,
                           const Intrinsics& i1, double x2, double y2, const Intrinsics& i2,
                           double x, double y);

enum class LutProvenance { exact, cell, triangle, extrapolated };

struct LutQueryResult {
    Intrinsics intrinsics;
    LutProvenance provenance = LutProvenance::exact;
};

// Extrapolated fx/fy for a query whose FD exceeds the table maximum: each
// bracketing LFL column is reduced to a thin-lens effective LFL via the
// harmonic mean of 1/CFL + 1/(FD - CFL) over its entries, the thin-lens CFL
// at the query FD is evaluated per column, and the two are blended linearly
// in LFL. Both values are returned in pixels.
struct ExtrapolatedCfl {
    double fx = 0.0;
    double fy = 0.0;
};

ExtrapolatedCfl extrapolate_cfl(const LutTable& table, const LensState& state);

// Resolves a lens state against the table: an exact entry within 1e-9 on
// both axes, else the containing cell, else the containing triangle, else
// (FD above the table maximum) thin-lens extrapolation for fx/fy with the
// remaining parameters taken at the nearest in-bounds FD on the same LFL
// line. LFL outside the table's column range throws ValidationError.
LutQueryResult lut_query(const LutTable& table, const LensState& state);

// Leave-one-out validation. Grid entries are re-interpolated from the
// axis-aligned region with the least LFL extent that still brackets them;
// everything else falls back to a Delaunay triangulation of the remaining
// entries. Hull entries with no enclosing region are marked none.
enum class XvalMethod { grid, triangle, none };

struct XvalRow {
    int entry = -1;
    double lfl_mm = 0.0, fd_m = 0.0;
    XvalMethod method = XvalMethod::none;
    double fx_pct = 0.0, fy_pct = 0.0, cx_pct = 0.0, cy_pct = 0.0;
    double cfl_pct = 0.0;                                        // metric CFL
    double k1_abs = 0.0, k2_abs = 0.0, p1_abs = 0.0, p2_abs = 0.0;
};

std::vector<XvalRow> cross_validate(const LutTable& table);

std::string xval_to_csv(const std::vector<XvalRow>& rows);

// Strict JSON serialization; regions are rebuilt on load.
std::string lut_to_json(const LutTable& table);
LutTable lut_from_json(const std::string& text);

} // namespace fluxcal

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fluxcal {

// Minimal interleaved RGB8 image with binary PPM (P6) I/O.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb; // 3 * width * height

    Image8() = default;
    Image8(int w, int h, uint8_t r = 0, uint8_t g = 0, uint8_t b = 0);

    uint8_t* px(int x, int y) { return rgb.data() + 3 * (size_t(y) * width + x); }
    const uint8_t* px(int x, int y) const {
        return rgb.data() + 3 * (size_t(y) * width + x);
    }
    bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image8& img);

// Filled disk; pixels whose center lies within radius of (cx, cy).
void paint_disk(Image8& img, double cx, double cy, double radius, uint8_t r, uint8_t g,
                uint8_t b);

// Filled annulus between the two radii.
void paint_annulus(Image8& img, double cx, double cy, double r_inner, double r_outer,
                   uint8_t r, uint8_t g, uint8_t b);

// Canonical synthetic LED marker: white core disk with a red halo annulus,
// as used by the detector tests and demo frames.
void paint_led(Image8& img, double cx, double cy, double core_radius = 15.0,
               double halo_radius = 35.0);

} // namespace fluxcal

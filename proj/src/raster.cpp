#include "fluxcal/raster.hpp"

#include "fluxcal/errors.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace fluxcal {

Image8::Image8(int w, int h, uint8_t r, uint8_t g, uint8_t b)
    : width(w), height(h), rgb(3 * size_t(w) * size_t(h)) {
    for (size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
}

Image8 read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open image: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ValidationError("not a binary PPM (P6): " + path.string());
    auto next_int = [&in, &path]() {
        // Skip whitespace and '#' comment lines between header tokens.
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw ValidationError("bad PPM header: " + path.string());
        return v;
    };
    long w = next_int();
    long h = next_int();
    long maxval = next_int();
    if (maxval != 255) throw ValidationError("PPM maxval must be 255: " + path.string());
    in.get(); // single whitespace after maxval
    Image8 img((int)w, (int)h);
    in.read(reinterpret_cast<char*>(img.rgb.data()), (std::streamsize)img.rgb.size());
    if ((size_t)in.gcount() != img.rgb.size())
        throw ValidationError("truncated PPM payload: " + path.string());
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image8& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write image: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), (std::streamsize)img.rgb.size());
    if (!out) throw ValidationError("short image write: " + path.string());
}

namespace {
void paint_ring(Image8& img, double cx, double cy, double r_in, double r_out, uint8_t r,
                uint8_t g, uint8_t b) {
    int x0 = std::max(0, (int)std::floor(cx - r_out - 1));
    int x1 = std::min(img.width - 1, (int)std::ceil(cx + r_out + 1));
    int y0 = std::max(0, (int)std::floor(cy - r_out - 1));
    int y1 = std::min(img.height - 1, (int)std::ceil(cy + r_out + 1));
    double ri2 = r_in * r_in;
    double ro2 = r_out * r_out;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            double dx = x - cx, dy = y - cy;
            double d2 = dx * dx + dy * dy;
            if (d2 >= ri2 && d2 <= ro2) {
                uint8_t* p = img.px(x, y);
                p[0] = r;
                p[1] = g;
                p[2] = b;
            }
        }
    }
}
} // namespace

void paint_disk(Image8& img, double cx, double cy, double radius, uint8_t r, uint8_t g,
                uint8_t b) {
    paint_ring(img, cx, cy, 0.0, radius, r, g, b);
}

void paint_annulus(Image8& img, double cx, double cy, double r_inner, double r_outer,
                   uint8_t r, uint8_t g, uint8_t b) {
    paint_ring(img, cx, cy, r_inner, r_outer, r, g, b);
}

void paint_led(Image8& img, double cx, double cy, double core_radius, double halo_radius) {
    // Halo first so the core overwrites the overlap.
    paint_annulus(img, cx, cy, core_radius, halo_radius, 200, 30, 30);
    paint_disk(img, cx, cy, core_radius, 255, 255, 255);
}

} // namespace fluxcal

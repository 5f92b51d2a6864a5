#pragma once

#include "fluxcal/errors.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fluxcal {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path.string());
    out << content;
    if (!out) throw ValidationError("short write: " + path.string());
}

} // namespace fluxcal

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "radiff/radarframe/types.hpp"

namespace radiff::radar {

// RDF v1 text frames. Numbers are written with 6 significant digits; only
// valid (mask = 1) radar points are written, so a loaded cloud is mask-complete.
std::string format_frame(const Frame& frame);
Frame parse_frame(std::istream& in, int num_classes = kDefaultNumClasses);

void save_frame(const Frame& frame, const std::filesystem::path& path);
Frame load_frame(const std::filesystem::path& path, int num_classes = kDefaultNumClasses);

// Value as it reads back after a save (6 significant digits).
double printed(double v);

}  // namespace radiff::radar

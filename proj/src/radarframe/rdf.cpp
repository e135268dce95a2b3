#include "radiff/radarframe/rdf.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>
#include <vector>

#include <fmt/format.h>

namespace radiff::radar {

namespace {

void append_num(std::string& out, double v) {
  out += ' ';
  out += fmt::format("{:.6g}", v);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw FormatError("bad number '" + std::string(tok) + "'", line);
  }
  return v;
}

template <class Int>
Int parse_int(std::string_view tok, std::size_t line) {
  Int v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw FormatError("bad integer '" + std::string(tok) + "'", line);
  }
  return v;
}

std::string_view keyed(std::string_view tok, std::string_view key, std::size_t line) {
  if (tok.size() <= key.size() || tok.substr(0, key.size()) != key || tok[key.size()] != '=') {
    throw FormatError("expected " + std::string(key) + "=<value>, got '" + std::string(tok) + "'", line);
  }
  return tok.substr(key.size() + 1);
}

void expect_fields(const std::vector<std::string_view>& toks, std::size_t n, std::size_t line) {
  if (toks.size() != n) {
    throw FormatError("'" + std::string(toks[0]) + "' needs " + std::to_string(n - 1) + " fields, got " +
                          std::to_string(toks.size() - 1),
                      line);
  }
}

}  // namespace

double printed(double v) {
  const auto s = fmt::format("{:.6g}", v);
  double out = 0.0;
  std::from_chars(s.data(), s.data() + s.size(), out);
  return out;
}

std::string format_frame(const Frame& f) {
  std::string out = "#RDF v1\n";
  out += fmt::format("meta frame_id={} timestamp_us={}\n", f.frame_id, f.timestamp_us);
  out += fmt::format("ego vx={:.6g} vy={:.6g} yawrate={:.6g}\n", f.ego.vx, f.ego.vy, f.ego.yaw_rate);
  for (std::size_t i = 0; i < f.radar.points.size(); ++i) {
    if (!f.radar.mask[i]) continue;
    const auto& p = f.radar.points[i];
    out += "pt";
    for (double v : {p.x, p.y, p.z, p.doppler, p.rcs}) append_num(out, v);
    out += '\n';
  }
  for (const auto& q : f.lidar) {
    out += "lpt";
    for (double v : {q.x, q.y, q.z}) append_num(out, v);
    out += '\n';
  }
  for (const auto& b : f.boxes) {
    out += "box";
    for (double v : {b.center.x, b.center.y, b.center.z, b.length, b.width, b.height, b.yaw, b.vx, b.vy})
      append_num(out, v);
    out += fmt::format(" {}\n", b.class_id);
  }
  return out;
}

Frame parse_frame(std::istream& in, int num_classes) {
  Frame f;
  std::string raw;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    auto toks = split_ws(raw);
    if (toks.empty()) continue;
    if (!header) {
      if (toks.size() != 2 || toks[0] != "#RDF" || toks[1] != "v1") throw FormatError("missing '#RDF v1' header", line);
      header = true;
      continue;
    }
    const auto tag = toks[0];
    if (tag == "meta") {
      expect_fields(toks, 3, line);
      f.frame_id = parse_int<std::uint64_t>(keyed(toks[1], "frame_id", line), line);
      f.timestamp_us = parse_int<std::uint64_t>(keyed(toks[2], "timestamp_us", line), line);
    } else if (tag == "ego") {
      expect_fields(toks, 4, line);
      f.ego.vx = parse_double(keyed(toks[1], "vx", line), line);
      f.ego.vy = parse_double(keyed(toks[2], "vy", line), line);
      f.ego.yaw_rate = parse_double(keyed(toks[3], "yawrate", line), line);
    } else if (tag == "pt") {
      expect_fields(toks, 6, line);
      RadarPoint p{parse_double(toks[1], line), parse_double(toks[2], line), parse_double(toks[3], line),
                   parse_double(toks[4], line), parse_double(toks[5], line)};
      f.radar.push_back(p);
    } else if (tag == "lpt") {
      expect_fields(toks, 4, line);
      f.lidar.push_back({parse_double(toks[1], line), parse_double(toks[2], line), parse_double(toks[3], line)});
    } else if (tag == "box") {
      expect_fields(toks, 11, line);
      Box3D b;
      b.center = {parse_double(toks[1], line), parse_double(toks[2], line), parse_double(toks[3], line)};
      b.length = parse_double(toks[4], line);
      b.width = parse_double(toks[5], line);
      b.height = parse_double(toks[6], line);
      b.yaw = parse_double(toks[7], line);
      b.vx = parse_double(toks[8], line);
      b.vy = parse_double(toks[9], line);
      b.class_id = parse_int<int>(toks[10], line);
      if (b.class_id < 1 || b.class_id > num_classes) {
        throw FormatError("unknown class id " + std::to_string(b.class_id), line);
      }
      if (!(b.length > 0 && b.width > 0 && b.height > 0)) throw FormatError("box size must be positive", line);
      f.boxes.push_back(b);
    } else {
      throw FormatError("unknown line tag '" + std::string(tag) + "'", line);
    }
  }
  if (!header) throw FormatError("empty file, missing '#RDF v1' header", line);
  return f;
}

void save_frame(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_frame(frame);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Frame load_frame(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_frame(in, num_classes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

}  // namespace radiff::radar

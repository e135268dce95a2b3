#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace radiff::radar {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

struct Vec2 {
  double x = 0.0, y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

// Doppler is ego-motion compensated, positive = receding from the sensor.
struct RadarPoint {
  double x = 0.0, y = 0.0, z = 0.0;
  double doppler = 0.0;  // m/s
  double rcs = 0.0;      // dBsm
  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
  Vec3 position() const { return {x, y, z}; }
};

// Points plus a validity mask; mask[i] == 0 marks a padding slot.
struct RadarPointCloud {
  std::vector<RadarPoint> points;
  std::vector<std::uint8_t> mask;

  static RadarPointCloud from_points(std::vector<RadarPoint> pts);
  std::size_t size() const { return points.size(); }
  std::size_t valid_count() const;
  // Copies of the valid points, in order.
  std::vector<RadarPoint> valid_points() const;
  void push_back(const RadarPoint& p, bool valid = true);
  friend bool operator==(const RadarPointCloud&, const RadarPointCloud&) = default;
};

struct Box3D {
  Vec3 center;
  double length = 1.0, width = 1.0, height = 1.0;  // along heading, lateral, vertical
  double yaw = 0.0;                                 // (-pi, pi]
  double vx = 0.0, vy = 0.0;
  int class_id = 1;
  friend bool operator==(const Box3D&, const Box3D&) = default;
};

struct EgoMotion {
  double vx = 0.0, vy = 0.0, yaw_rate = 0.0;
  friend bool operator==(const EgoMotion&, const EgoMotion&) = default;
};

struct Frame {
  std::uint64_t frame_id = 0;
  std::uint64_t timestamp_us = 0;
  EgoMotion ego;
  RadarPointCloud radar;
  std::vector<Vec3> lidar;
  std::vector<Box3D> boxes;
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct Interval {
  double lo = 0.0, hi = 1.0;
  double span() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class Profile { Vod, TruckScenes, Toy };

std::string profile_name(Profile p);
Profile parse_profile(const std::string& name);

struct RangeSpec {
  Interval x, y, z;
  Profile profile = Profile::Toy;
  std::size_t sweeps = 1;

  static RangeSpec for_profile(Profile p);
  bool contains(const Vec3& p) const { return x.contains(p.x) && y.contains(p.y) && z.contains(p.z); }
  void validate() const;
};

// Normalization intervals for the two radar feature channels.
struct FeatureRanges {
  Interval doppler{-30.0, 30.0};
  Interval rcs{-40.0, 20.0};
};

// Class catalogue for the toy/VoD-style label set.
inline constexpr int kDefaultNumClasses = 3;
enum ClassId : int { kCar = 1, kPedestrian = 2, kCyclist = 3 };

double wrap_angle(double a);  // into (-pi, pi]
double point_range(const RadarPoint& p);  // planar range hypot(x, y)

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace radiff::radar

#pragma once

#include <cstdint>

#include "radiff/radarframe/types.hpp"

namespace radiff::radar {

// Procedural scene generator. Object returns are sampled on the box faces
// that look toward the sensor, with Poisson counts of mean area / spacing^2
// per face; their Doppler is the radial projection of the box velocity plus
// Gaussian noise. Walls give dense LiDAR returns and sparse, near-static
// radar clutter.
struct SynthConfig {
  RangeSpec range = RangeSpec::for_profile(Profile::Toy);
  int min_boxes = 0;
  int max_boxes = 8;
  double surface_spacing = 0.5;   // m
  double doppler_noise = 0.25;    // sigma_d, m/s
  double rcs_noise = 2.0;         // dBsm
  double moving_fraction = 0.7;
  int max_walls = 3;
  double wall_height = 3.0;
  double lidar_spacing = 0.4;     // m along walls and boxes
  double clutter_per_meter = 0.6; // mean radar clutter points per wall meter
  double clutter_doppler_noise = 0.05;
  FeatureRanges features;

  static SynthConfig for_profile(Profile p);
};

// Deterministic in (seed, config, frame_id). Timestamps advance 100 ms per id.
Frame synth_scene(std::uint64_t seed, const SynthConfig& config, std::uint64_t frame_id = 0);

struct ClassPrior {
  double length, width, height;  // mean size
  double max_speed;              // m/s
  double rcs_mean;               // dBsm
};
ClassPrior class_prior(int class_id);

}  // namespace radiff::radar

#pragma once

#include <cmath>
#include <utility>

#include "rnr/common.hpp"

namespace rnr {

// Pinhole camera over a flat ground plane z=0. The optical axis is
// horizontal along world +Y, world Z up, X right; image u right, v down.
// A pixel sees the ground iff it lies below the horizon row v = cy.
struct CameraModel {
  double focal = 44.0;  // px
  double cx = 32.0;
  double cy = 28.0;
  double height = 1.5;  // camera height above ground, m
  int image_h = 64;
  int image_w = 64;

  // World (X, Y, Z) with Y > 0 -> pixel (u, v).
  std::pair<double, double> project(double X, double Y, double Z) const {
    if (Y <= 0) throw ContractError("camera: cannot project a point behind the image plane");
    return {cx + focal * X / Y, cy + focal * (height - Z) / Y};
  }

  std::pair<double, double> ground_to_pixel(double X, double Y) const { return project(X, Y, 0.0); }

  // Pixel (u, v) -> ground plane point (X, Y); similar triangles.
  std::pair<double, double> pixel_to_ground(double u, double v) const {
    if (v <= cy)
      throw HorizonError("pixel row " + std::to_string(v) + " is at or above the horizon row " +
                         std::to_string(cy));
    const double Y = focal * height / (v - cy);
    const double X = (u - cx) * height / (v - cy);
    return {X, Y};
  }

  bool below_horizon(double v) const { return v > cy; }
};

}  // namespace rnr

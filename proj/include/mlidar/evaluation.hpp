#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlidar/geometry.hpp"
#include "mlidar/scene.hpp"

namespace mlidar {

/// No estimated pose has a ground-truth stamp within the tolerance.
class AssociationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AteResult {
  double ate = 0.0;
  std::size_t matches = 0;
  bool aligned = false;
};

/// RMS position error over nearest-timestamp pairs. With `align`, the
/// estimate is first rigidly aligned to the ground truth (Umeyama, no scale).
AteResult compute_ate(const Trajectory& est, const Trajectory& gt, double assoc_tol = 0.02,
                      bool align = false);

struct TimedPoints {
  double timestamp = 0.0;
  std::vector<Vec3> points;  // world frame
};

struct TimedCells {
  double timestamp = 0.0;
  std::vector<CellKey> cells;
};

struct CmpltResult {
  double cmplt = 0.0;
  std::vector<std::size_t> per_period;
};

/// Distinct voxels hit per window [t0 + qT, t0 + (q+1)T), t0 the first
/// timestamp; the count resets every window. Windows with no scans count 0.
CmpltResult compute_cmplt(std::span<const TimedPoints> scans, double voxel = 0.5, double period = 5.0);

/// Same over pre-voxelized hits.
CmpltResult compute_cmplt_cells(std::span<const TimedCells> scans, double period = 5.0);

struct EvalReport {
  std::string scene;
  std::string controller;
  double ate = 0.0;
  bool aligned = false;
  std::size_t matches = 0;
  double cmplt = 0.0;
  std::vector<std::size_t> voxels_per_period;

  std::size_t periods() const { return voxels_per_period.size(); }
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace mlidar

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "mvt/config.hpp"

namespace mvt {

/// The six procedural solid categories; the enum value is the class label.
enum class Solid { Sphere, Box, Cylinder, Cone, Torus, Cross };

inline constexpr int kSolidCount = 6;
std::string to_string(Solid s);
Solid parse_solid(const std::string& s);

/// A posed parametric solid. All solids fit inside the unit ball before scaling.
///   sphere:   size[0] radius                       in [0.60, 0.95]
///   box:      size[0..2] half extents              in [0.30, 0.55]
///   cylinder: size[0] radius, size[1] half height  in [0.30, 0.60], [0.30, 0.70]
///   cone:     size[0] base radius, size[1] height  in [0.35, 0.60], [0.70, 1.20]
///   torus:    size[0] major, size[1] minor radius  in [0.45, 0.65], [0.12, 0.25]
///   cross:    size[0] arm half length, size[1] arm half width, size[2] half thickness
///                                                  in [0.55, 0.85], [0.10, 0.20], [0.10, 0.25]
/// The pose is x ↦ scale · R x with R from `rotation`; scale is drawn in [0.8, 1.0].
struct ShapeSpec {
  Solid category = Solid::Sphere;
  std::array<double, 3> size{0.8, 0.0, 0.0};
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  double scale = 1.0;

  /// Throws ConfigError when a parameter leaves its documented range or the quaternion is not unit.
  void validate() const;
  /// Analytic inside test for a point in world coordinates.
  bool contains(const Eigen::Vector3d& world) const;
};

/// Draws size parameters in their ranges and a uniformly random rotation.
ShapeSpec sample_shape(Solid category, std::mt19937_64& rng);

/// Rendering geometry shared by every view of a dataset.
struct RenderGeometry {
  Index views = 6;
  Index height = 32;
  Index width = 32;
  double elevation_deg = 30.0;
  double extent = 1.1;     // the image plane spans [-extent, extent] in both axes
  Index depth_samples = 1025;  // odd, so the ray midpoint through the origin is sampled

  bool operator==(const RenderGeometry&) const = default;
};

/// Orthographic camera for view j of L: azimuth 360·j/L degrees, fixed elevation.
struct Camera {
  Eigen::Vector3d right, up, forward;  // forward points from the camera into the scene
};
Camera view_camera(Index view, Index views, double elevation_deg);

/// World point under pixel (row, col) at depth 0; rows run top to bottom.
Eigen::Vector3d pixel_origin(const Camera& cam, Index row, Index col, const RenderGeometry& g);

/// Binary silhouettes (H×W×1, values 0/1) of every view, before blurring.
std::vector<Tensor<float>> render_silhouettes(const ShapeSpec& spec, const RenderGeometry& g);

/// 3×3 box blur with zero padding.
Tensor<float> box_blur(const Tensor<float>& image);

/// One labeled object: L views of H×W×1 in [0, 1].
struct ViewSet {
  std::vector<Tensor<float>> views;
  int label = 0;
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
};

/// Blurred silhouettes of every view. Throws DegenerateShapeError when a view
/// is empty (the caller resamples).
std::vector<Tensor<float>> render_views(const ShapeSpec& spec, const RenderGeometry& g);

/// Keeps views floor(k·L/L') for k < L'; L' > L is a ConfigError.
ViewSet subsample_views(const ViewSet& sample, Index views);

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetSpec {
  std::uint64_t seed = 7;
  Index classes = kSolidCount;
  Index train = 500;
  Index val = 100;
  Index test = 0;
  RenderGeometry geometry;

  void validate() const;
};

struct DatasetManifest {
  std::uint32_t version = kDatasetVersion;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  Index train = 0, val = 0, test = 0;
  Index views = 0, height = 0, width = 0, channels = 1;
  double elevation_deg = 30.0;
  std::uint32_t train_crc = 0, val_crc = 0, test_crc = 0;

  bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct Dataset {
  DatasetManifest manifest;
  std::vector<ViewSet> train, val, test;
};

/// Renders one object deterministically from its id and the dataset seed.
ViewSet make_sample(const DatasetSpec& spec, std::uint64_t id, int label);

/// Renders every split (ids unique across splits, label = index mod classes)
/// in memory. Deterministic for any worker count.
Dataset generate_dataset(const DatasetSpec& spec, int workers);

/// Writes manifest.json and one .mvtd file per split.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, int workers);

/// Split file: "MVTD", u32 version, u64 count, u32 L, H, W, C, then per sample
/// u32 label, u64 id, u64 seed and L·H·W·C fp32 values; trailing CRC-32.
std::string encode_split(const std::vector<ViewSet>& samples, const DatasetManifest& m);
std::vector<ViewSet> decode_split(std::string_view bytes, const DatasetManifest& m, const std::string& context);

DatasetManifest load_manifest(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// ConfigError naming both geometries when the dataset cannot feed `config`.
void check_compatible(const DatasetManifest& m, const MVTConfig& config);

/// Silhouette area and boundary-pixel count of each view, thresholded at 0.5.
std::vector<double> silhouette_features(const ViewSet& sample);

/// Nearest-centroid classifier on standardized silhouette features; returns val accuracy.
double nearest_centroid_accuracy(const std::vector<ViewSet>& train, const std::vector<ViewSet>& val, Index classes);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mvt

#include "mvt/viewgen.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "mvt/binary_io.hpp"
#include "mvt/parallel.hpp"

namespace mvt {

namespace {

constexpr std::array<const char*, kSolidCount> kSolidNames{"sphere", "box", "cylinder", "cone", "torus", "cross"};
constexpr std::string_view kDatasetMagic = "MVTD";

struct Range {
  double lo, hi;
};

// Per-category parameter ranges; unused slots are {0, 0}.
constexpr std::array<std::array<Range, 3>, kSolidCount> kRanges{{
    {{{0.60, 0.95}, {0, 0}, {0, 0}}},
    {{{0.30, 0.55}, {0.30, 0.55}, {0.30, 0.55}}},
    {{{0.30, 0.60}, {0.30, 0.70}, {0, 0}}},
    {{{0.35, 0.60}, {0.70, 1.20}, {0, 0}}},
    {{{0.45, 0.65}, {0.12, 0.25}, {0, 0}}},
    {{{0.55, 0.85}, {0.10, 0.20}, {0.10, 0.25}}},
}};
constexpr Range kScale{0.8, 1.0};

// sin and cos of 2π·j/n, exact at the quadrant angles so symmetric views match bit for bit.
std::pair<double, double> circle_point(Index j, Index n) {
  const Index quarter = 4 * j;
  if (quarter % n == 0) {
    switch ((quarter / n) % 4) {
      case 0: return {0.0, 1.0};
      case 1: return {1.0, 0.0};
      case 2: return {0.0, -1.0};
      default: return {-1.0, 0.0};
    }
  }
  const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
  return {std::sin(a), std::cos(a)};
}

bool inside_local(const ShapeSpec& s, double x, double y, double z) {
  const auto& k = s.size;
  switch (s.category) {
    case Solid::Sphere: return x * x + y * y + z * z <= k[0] * k[0];
    case Solid::Box: return std::abs(x) <= k[0] && std::abs(y) <= k[1] && std::abs(z) <= k[2];
    case Solid::Cylinder: return x * x + y * y <= k[0] * k[0] && std::abs(z) <= k[1];
    case Solid::Cone: {
      const double half = 0.5 * k[1];
      if (z < -half || z > half) return false;
      const double r = k[0] * (half - z) / k[1];
      return x * x + y * y <= r * r;
    }
    case Solid::Torus: {
      const double ring = std::sqrt(x * x + y * y) - k[0];
      return ring * ring + z * z <= k[1] * k[1];
    }
    case Solid::Cross: {
      if (std::abs(z) > k[2]) return false;
      const double ax = std::abs(x), ay = std::abs(y);
      return (ax <= k[0] && ay <= k[1]) || (ay <= k[0] && ax <= k[1]);
    }
  }
  return false;
}

double uniform(std::mt19937_64& rng, Range r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }

std::string dataset_geometry(const DatasetManifest& m) {
  return "views=" + std::to_string(m.views) + " height=" + std::to_string(m.height) +
         " width=" + std::to_string(m.width) + " channels=" + std::to_string(m.channels) +
         " classes=" + std::to_string(m.classes.size());
}

}  // namespace

std::string to_string(Solid s) { return kSolidNames.at(static_cast<std::size_t>(s)); }

Solid parse_solid(const std::string& s) {
  for (int i = 0; i < kSolidCount; ++i)
    if (s == kSolidNames[static_cast<std::size_t>(i)]) return static_cast<Solid>(i);
  throw ConfigError("unknown solid '" + s + "'");
}

void ShapeSpec::validate() const {
  const auto c = static_cast<std::size_t>(category);
  if (c >= kRanges.size()) throw ConfigError("shape category out of range");
  for (std::size_t i = 0; i < 3; ++i) {
    const Range r = kRanges[c][i];
    if (r.hi == 0.0) continue;
    if (!(size[i] >= r.lo && size[i] <= r.hi)) {
      throw ConfigError(to_string(category) + " size[" + std::to_string(i) + "] = " + std::to_string(size[i]) +
                        " outside [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    }
  }
  if (!(scale >= kScale.lo && scale <= kScale.hi)) throw ConfigError("shape scale outside [0.8, 1.0]");
  if (std::abs(rotation.norm() - 1.0) > 1e-9) throw ConfigError("shape rotation is not a unit quaternion");
}

bool ShapeSpec::contains(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d p = rotation.conjugate() * world / scale;
  return inside_local(*this, p.x(), p.y(), p.z());
}

ShapeSpec sample_shape(Solid category, std::mt19937_64& rng) {
  ShapeSpec s;
  s.category = category;
  const auto& ranges = kRanges[static_cast<std::size_t>(category)];
  for (std::size_t i = 0; i < 3; ++i) s.size[i] = ranges[i].hi == 0.0 ? 0.0 : uniform(rng, ranges[i]);
  // Normalized Gaussian 4-vectors are uniform on the rotation group.
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    q = Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-6);
  q.normalize();
  s.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  s.scale = uniform(rng, kScale);
  return s;
}

Camera view_camera(Index view, Index views, double elevation_deg) {
  const auto [sa, ca] = circle_point(view, views);
  const double e = elevation_deg * std::numbers::pi / 180.0;
  const double se = std::sin(e), ce = std::cos(e);
  Camera cam;
  cam.right = Eigen::Vector3d(-sa, ca, 0.0);
  cam.up = Eigen::Vector3d(-se * ca, -se * sa, ce);
  cam.forward = Eigen::Vector3d(-ce * ca, -ce * sa, -se);
  return cam;
}

Eigen::Vector3d pixel_origin(const Camera& cam, Index row, Index col, const RenderGeometry& g) {
  // Integer numerators keep the grid exactly symmetric about the image centre.
  const double u = static_cast<double>(2 * col + 1 - g.width) / static_cast<double>(g.width) * g.extent;
  const double v = static_cast<double>(g.height - 2 * row - 1) / static_cast<double>(g.height) * g.extent;
  return u * cam.right + v * cam.up;
}

std::vector<Tensor<float>> render_silhouettes(const ShapeSpec& spec, const RenderGeometry& g) {
  if (g.views < 1 || g.height < 1 || g.width < 1) throw ConfigError("render geometry needs positive views and size");
  if (g.depth_samples < 3 || g.depth_samples % 2 == 0) throw ConfigError("depth_samples must be odd and >= 3");
  const Eigen::Quaterniond inv = spec.rotation.conjugate();
  const double inv_scale = 1.0 / spec.scale;
  const Index half = g.depth_samples / 2;
  const double step = g.extent / static_cast<double>(half);
  std::vector<Tensor<float>> out;
  for (Index j = 0; j < g.views; ++j) {
    const Camera cam = view_camera(j, g.views, g.elevation_deg);
    const Eigen::Vector3d dir = inv * cam.forward * inv_scale;
    Tensor<float> img(Shape{g.height, g.width, 1});
    for (Index r = 0; r < g.height; ++r) {
      for (Index c = 0; c < g.width; ++c) {
        const Eigen::Vector3d o = inv * pixel_origin(cam, r, c, g) * inv_scale;
        bool hit = false;
        for (Index k = -half; k <= half && !hit; ++k) {
          const double t = static_cast<double>(k) * step;
          hit = inside_local(spec, o.x() + t * dir.x(), o.y() + t * dir.y(), o.z() + t * dir.z());
        }
        img[r * g.width + c] = hit ? 1.0f : 0.0f;
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

Tensor<float> box_blur(const Tensor<float>& image) {
  const Index h = image.dim(0), w = image.dim(1);
  Tensor<float> out(image.shape());
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      float acc = 0.0f;
      for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w) acc += image[rr * w + cc];
        }
      out[r * w + c] = acc / 9.0f;
    }
  }
  return out;
}

std::vector<Tensor<float>> render_views(const ShapeSpec& spec, const RenderGeometry& g) {
  auto views = render_silhouettes(spec, g);
  for (std::size_t j = 0; j < views.size(); ++j) {
    if (views[j].data().sum() == 0.0f) {
      throw DegenerateShapeError(to_string(spec.category) + " has an empty silhouette in view " + std::to_string(j));
    }
    views[j] = box_blur(views[j]);
  }
  return views;
}

ViewSet subsample_views(const ViewSet& sample, Index views) {
  const Index total = static_cast<Index>(sample.views.size());
  if (views < 1 || views > total) {
    throw ConfigError("cannot take " + std::to_string(views) + " views from " + std::to_string(total) +
                      " rendered views");
  }
  ViewSet out{{}, sample.label, sample.id, sample.seed};
  for (Index k = 0; k < views; ++k) out.views.push_back(sample.views[static_cast<std::size_t>(k * total / views)]);
  return out;
}

void DatasetSpec::validate() const {
  if (classes < 1 || classes > kSolidCount) throw ConfigError("classes must be in [1, 6]");
  if (train < 1 || val < 1 || test < 0) throw ConfigError("split counts must be >= 1 (test >= 0)");
  if (geometry.views < 1) throw ConfigError("views must be >= 1");
  if (geometry.height < 3 || geometry.width < 3) throw ConfigError("views must be at least 3x3 pixels");
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"version", m.version},
                     {"seed", m.seed},
                     {"classes", m.classes},
                     {"counts", {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
                     {"geometry",
                      {{"views", m.views},
                       {"height", m.height},
                       {"width", m.width},
                       {"channels", m.channels},
                       {"elevation_deg", m.elevation_deg}}},
                     {"crc32", {{"train", m.train_crc}, {"val", m.val_crc}, {"test", m.test_crc}}}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("version").get_to(m.version);
  j.at("seed").get_to(m.seed);
  j.at("classes").get_to(m.classes);
  const auto& counts = j.at("counts");
  counts.at("train").get_to(m.train);
  counts.at("val").get_to(m.val);
  counts.at("test").get_to(m.test);
  const auto& g = j.at("geometry");
  g.at("views").get_to(m.views);
  g.at("height").get_to(m.height);
  g.at("width").get_to(m.width);
  g.at("channels").get_to(m.channels);
  g.at("elevation_deg").get_to(m.elevation_deg);
  const auto& crc = j.at("crc32");
  crc.at("train").get_to(m.train_crc);
  crc.at("val").get_to(m.val_crc);
  crc.at("test").get_to(m.test_crc);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

ViewSet make_sample(const DatasetSpec& spec, std::uint64_t id, int label) {
  ViewSet s;
  s.id = id;
  s.label = label;
  s.seed = splitmix64(splitmix64(spec.seed) ^ id);
  std::mt19937_64 rng(s.seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    try {
      s.views = render_views(sample_shape(static_cast<Solid>(label), rng), spec.geometry);
      return s;
    } catch (const DegenerateShapeError&) {
    }
  }
  throw DegenerateShapeError("sample " + std::to_string(id) + " stayed degenerate after 100 draws");
}

Dataset generate_dataset(const DatasetSpec& spec, int workers) {
  spec.validate();
  Dataset d;
  auto& m = d.manifest;
  m.seed = spec.seed;
  for (Index k = 0; k < spec.classes; ++k) m.classes.push_back(to_string(static_cast<Solid>(k)));
  m.train = spec.train;
  m.val = spec.val;
  m.test = spec.test;
  m.views = spec.geometry.views;
  m.height = spec.geometry.height;
  m.width = spec.geometry.width;
  m.elevation_deg = spec.geometry.elevation_deg;

  std::uint64_t next_id = 0;
  for (auto [split, count] : {std::pair{&d.train, spec.train}, {&d.val, spec.val}, {&d.test, spec.test}}) {
    split->resize(static_cast<std::size_t>(count));
    const std::uint64_t first = next_id;
    parallel_for(
        count,
        [&, split](Index i) {
          (*split)[static_cast<std::size_t>(i)] =
              make_sample(spec, first + static_cast<std::uint64_t>(i), static_cast<int>(i % spec.classes));
        },
        workers);
    next_id += static_cast<std::uint64_t>(count);
  }
  return d;
}

std::string encode_split(const std::vector<ViewSet>& samples, const DatasetManifest& m) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(samples.size());
  for (Index dim : {m.views, m.height, m.width, m.channels}) w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& s : samples) {
    if (static_cast<Index>(s.views.size()) != m.views) throw ContractError("sample view count differs from manifest");
    w.u32(static_cast<std::uint32_t>(s.label));
    w.u64(s.id);
    w.u64(s.seed);
    for (const auto& v : s.views)
      for (Index i = 0; i < v.size(); ++i) w.f32(v[i]);
  }
  io::seal(w);
  return w.take();
}

std::vector<ViewSet> decode_split(std::string_view bytes, const DatasetManifest& m, const std::string& context) {
  io::ByteReader r(io::unseal(bytes, context), context);
  if (r.bytes(4) != kDatasetMagic) throw FormatError(context + ": not a dataset split (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError(context + ": unsupported split version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  std::array<Index, 4> dims{};
  for (auto& d : dims) d = r.u32();
  if (dims != std::array<Index, 4>{m.views, m.height, m.width, m.channels}) {
    throw FormatError(context + ": split geometry disagrees with manifest (" + dataset_geometry(m) + ")");
  }
  const std::size_t per_sample = 20 + static_cast<std::size_t>(dims[0] * dims[1] * dims[2] * dims[3]) * 4;
  if (count > r.remaining() / per_sample) throw FormatError(context + ": truncated sample data");
  std::vector<ViewSet> out(static_cast<std::size_t>(count));
  for (auto& s : out) {
    s.label = static_cast<int>(r.u32());
    if (s.label < 0 || s.label >= static_cast<int>(m.classes.size())) throw FormatError(context + ": label out of range");
    s.id = r.u64();
    s.seed = r.u64();
    for (Index j = 0; j < m.views; ++j) {
      Tensor<float> v(Shape{m.height, m.width, m.channels});
      for (Index i = 0; i < v.size(); ++i) v[i] = r.f32();
      s.views.push_back(std::move(v));
    }
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes after last sample");
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create directory: " + ec.message());
  DatasetManifest m = data.manifest;
  const auto write_split = [&](const std::vector<ViewSet>& split, const char* name) {
    const std::string bytes = encode_split(split, m);
    io::write_file(dir / (std::string(name) + ".mvtd"), bytes);
    return io::crc32(bytes);
  };
  m.train_crc = write_split(data.train, "train");
  m.val_crc = write_split(data.val, "val");
  m.test_crc = write_split(data.test, "test");
  io::write_file(dir / "manifest.json", nlohmann::json(m).dump(2) + "\n");
}

Dataset make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, int workers) {
  Dataset d = generate_dataset(spec, workers);
  save_dataset(dir, d);
  d.manifest = load_manifest(dir);
  return d;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  const std::string text = io::read_file(path);
  DatasetManifest m;
  try {
    m = nlohmann::json::parse(text).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  if (m.version != kDatasetVersion) throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(m.version));
  if (m.classes.empty() || m.views < 1 || m.height < 1 || m.width < 1 || m.channels < 1) {
    throw FormatError(path.string() + ": manifest geometry is invalid");
  }
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = load_manifest(dir);
  const auto read_split = [&](const char* name, std::uint32_t crc, Index count) {
    const auto path = dir / (std::string(name) + ".mvtd");
    const std::string bytes = io::read_file(path);
    if (io::crc32(bytes) != crc) throw FormatError(path.string() + ": checksum differs from manifest");
    auto split = decode_split(bytes, d.manifest, path.string());
    if (static_cast<Index>(split.size()) != count) throw FormatError(path.string() + ": sample count differs from manifest");
    return split;
  };
  d.train = read_split("train", d.manifest.train_crc, d.manifest.train);
  d.val = read_split("val", d.manifest.val_crc, d.manifest.val);
  d.test = read_split("test", d.manifest.test_crc, d.manifest.test);
  return d;
}

void check_compatible(const DatasetManifest& m, const MVTConfig& config) {
  if (m.views < config.views || m.height != config.height || m.width != config.width ||
      m.channels != config.channels || static_cast<Index>(m.classes.size()) != config.classes) {
    throw ConfigError("dataset geometry (" + dataset_geometry(m) + ") does not match model geometry (" +
                      geometry_string(config) + ")");
  }
}

std::vector<double> silhouette_features(const ViewSet& sample) {
  std::vector<double> area, perimeter, compact;
  for (const auto& v : sample.views) {
    const Index h = v.dim(0), w = v.dim(1);
    auto fg = [&](Index r, Index c) { return r >= 0 && r < h && c >= 0 && c < w && v[r * w + c] > 0.5f; };
    double a = 0, p = 0;
    for (Index r = 0; r < h; ++r)
      for (Index c = 0; c < w; ++c) {
        if (!fg(r, c)) continue;
        a += 1;
        if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)) p += 1;
      }
    area.push_back(a);
    perimeter.push_back(p);
    compact.push_back(a > 0 ? p * p / a : 0.0);
  }
  auto mean = [](const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size()); };
  auto stdev = [&](const std::vector<double>& x) {
    const double mu = mean(x);
    double s = 0;
    for (double e : x) s += (e - mu) * (e - mu);
    return std::sqrt(s / double(x.size()));
  };
  return {mean(area), stdev(area), mean(perimeter), stdev(perimeter), mean(compact), stdev(compact)};
}

double nearest_centroid_accuracy(const std::vector<ViewSet>& train, const std::vector<ViewSet>& val, Index classes) {
  if (train.empty() || val.empty()) throw ContractError("nearest-centroid baseline needs non-empty splits");
  std::vector<std::vector<double>> ftrain;
  for (const auto& s : train) ftrain.push_back(silhouette_features(s));
  const std::size_t dims = ftrain.front().size();
  std::vector<double> mu(dims, 0.0), sd(dims, 0.0);
  for (const auto& f : ftrain)
    for (std::size_t d = 0; d < dims; ++d) mu[d] += f[d] / double(ftrain.size());
  for (const auto& f : ftrain)
    for (std::size_t d = 0; d < dims; ++d) sd[d] += (f[d] - mu[d]) * (f[d] - mu[d]) / double(ftrain.size());
  for (auto& s : sd) s = s > 0 ? std::sqrt(s) : 1.0;
  auto standardize = [&](std::vector<double> f) {
    for (std::size_t d = 0; d < dims; ++d) f[d] = (f[d] - mu[d]) / sd[d];
    return f;
  };
  const auto k = static_cast<std::size_t>(classes);
  std::vector<std::vector<double>> centroid(k, std::vector<double>(dims, 0.0));
  std::vector<double> count(k, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto f = standardize(ftrain[i]);
    const auto c = static_cast<std::size_t>(train[i].label);
    for (std::size_t d = 0; d < dims; ++d) centroid[c][d] += f[d];
    count[c] += 1;
  }
  for (std::size_t c = 0; c < k; ++c)
    for (auto& x : centroid[c]) x /= std::max(count[c], 1.0);
  Index correct = 0;
  for (const auto& s : val) {
    const auto f = standardize(silhouette_features(s));
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double dist = 0;
      for (std::size_t d = 0; d < dims; ++d) dist += (f[d] - centroid[c][d]) * (f[d] - centroid[c][d]);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += static_cast<int>(best) == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

}  // namespace mvt

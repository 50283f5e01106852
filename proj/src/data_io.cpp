#include "nconv/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>

namespace nconv {

std::string_view to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::Planes:
      return "planes";
    case SceneKind::SlantedSteps:
      return "steps";
    case SceneKind::Sinusoid:
      return "sinusoid";
  }
  return "?";
}

SceneKind parse_scene_kind(std::string_view name) {
  if (name == "planes") return SceneKind::Planes;
  if (name == "steps" || name == "slanted+steps") return SceneKind::SlantedSteps;
  if (name == "sinusoid") return SceneKind::Sinusoid;
  throw FormatError("unknown scene kind '" + std::string(name) + "'");
}

namespace {

constexpr double kMinDepth = 1.0;
constexpr double kMaxDepth = 80.0;

double clamp_depth(double d) { return std::clamp(d, kMinDepth, kMaxDepth); }

Tensor planes_scene(std::mt19937_64& rng, std::size_t H, std::size_t W) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base = 35.0 + 25.0 * u(rng);
  const double sx = 0.3 * (u(rng) - 0.5), sy = -0.4 * u(rng);  // farther towards the top
  Tensor d({H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      d(y, x) = base + sx * (static_cast<double>(x) - W / 2.0) + sy * (static_cast<double>(y) - H / 2.0);

  const double nearest = min_value(d);
  const int objects = 2 + static_cast<int>(u(rng) * 3.0);
  for (int k = 0; k < objects; ++k) {
    const bool disc = u(rng) < 0.4;
    const double cy = u(rng) * H, cx = u(rng) * W;
    const double hy = 4.0 + u(rng) * H / 4.0, hx = 4.0 + u(rng) * W / 4.0;
    // Front plane sits at least 6 m in front of the nearest background point
    // and tilts by at most 0.05 m/px, so edges against the background jump >= 5 m.
    const double front = std::max(kMinDepth + 3.0, nearest - 6.0 - 12.0 * u(rng));
    const double ox = 0.1 * (u(rng) - 0.5), oy = 0.1 * (u(rng) - 0.5);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dy = (static_cast<double>(y) - cy) / hy, dx = (static_cast<double>(x) - cx) / hx;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) d(y, x) = front + ox * (static_cast<double>(x) - cx) + oy * (static_cast<double>(y) - cy);
      }
  }
  for (double& v : d.data()) v = clamp_depth(v);
  return d;
}

Tensor steps_scene(std::mt19937_64& rng, std::size_t H, std::size_t W) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base = 30.0 + 15.0 * u(rng);
  const double sx = 0.4 * (u(rng) - 0.5), sy = 0.4 * (u(rng) - 0.5);
  const bool vertical = u(rng) < 0.5;
  const std::size_t extent = vertical ? W : H;
  const int steps = 2 + static_cast<int>(u(rng) * 2.0);
  std::vector<std::pair<double, double>> edges;  // (position, jump)
  for (int k = 0; k < steps; ++k) {
    const double jump = (5.5 + 6.5 * u(rng)) * (u(rng) < 0.5 ? -1.0 : 1.0);
    edges.emplace_back((0.15 + 0.7 * u(rng)) * static_cast<double>(extent), jump);
  }
  Tensor d({H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double along = vertical ? static_cast<double>(x) : static_cast<double>(y);
      double v = base + sx * (static_cast<double>(x) - W / 2.0) + sy * (static_cast<double>(y) - H / 2.0);
      for (const auto& [pos, jump] : edges)
        if (along >= pos) v += jump;
      d(y, x) = clamp_depth(v);
    }
  return d;
}

Tensor sinusoid_scene(std::mt19937_64& rng, std::size_t H, std::size_t W) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base = 25.0 + 20.0 * u(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  // Amplitude * 2pi / wavelength <= 0.4 per axis keeps the slope below 0.8 m/px.
  const double ax = 2.0 + 4.0 * u(rng), ay = 2.0 + 4.0 * u(rng);
  const double lx = two_pi * ax / 0.4 * (1.0 + u(rng)), ly = two_pi * ay / 0.4 * (1.0 + u(rng));
  const double px = two_pi * u(rng), py = two_pi * u(rng);
  Tensor d({H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      d(y, x) = clamp_depth(base + ax * std::sin(two_pi * static_cast<double>(x) / lx + px) +
                            ay * std::sin(two_pi * static_cast<double>(y) / ly + py));
  return d;
}

}  // namespace

Tensor synth_scene(std::uint64_t seed, std::size_t H, std::size_t W, SceneKind kind) {
  if (H < 16 || W < 16) throw ShapeError("synth_scene: H and W must be >= 16");
  std::mt19937_64 rng(seed);
  switch (kind) {
    case SceneKind::Planes:
      return planes_scene(rng, H, W);
    case SceneKind::SlantedSteps:
      return steps_scene(rng, H, W);
    case SceneKind::Sinusoid:
      return sinusoid_scene(rng, H, W);
  }
  return {};
}

Sparsified sparsify(const Tensor& dense, double density, std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0)) throw RangeError("sparsify: density must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sparsified out{Tensor(dense.shape()), Tensor(dense.shape())};
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (u(rng) < density) {
      out.confidence[i] = 1.0;
      out.sparse[i] = dense[i];
    }
  }
  return out;
}

std::vector<Scene> make_synthetic_set(std::size_t count, std::size_t H, std::size_t W, double density,
                                      std::uint64_t seed) {
  constexpr SceneKind kinds[] = {SceneKind::Planes, SceneKind::SlantedSteps, SceneKind::Sinusoid};
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = seed + i;
    Tensor gt = synth_scene(s, H, W, kinds[i % 3]);
    Sparsified sp = sparsify(gt, density, s * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
    Tensor mask(gt.shape(), 1.0);
    scenes.push_back({std::move(gt), std::move(sp.sparse), std::move(sp.confidence), std::move(mask)});
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// PGM

void write_pgm16(const std::filesystem::path& path, const Tensor& t, double scale) {
  if (t.rank() != 2) throw ShapeError("write_pgm16: expects a [H, W] tensor");
  if (!(scale > 0.0)) throw RangeError("write_pgm16: scale must be positive");
  std::vector<unsigned char> payload;
  payload.reserve(2 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double count = std::round(t[i] / scale);
    if (!(count >= 0.0 && count <= 65535.0)) {
      throw RangeError("write_pgm16: value " + std::to_string(t[i]) + " at index " + std::to_string(i) +
                       " maps to count " + std::to_string(count) + ", outside [0, 65535]");
    }
    const auto c = static_cast<std::uint16_t>(count);
    payload.push_back(static_cast<unsigned char>(c >> 8));
    payload.push_back(static_cast<unsigned char>(c & 0xff));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "P5\n" << t.dim(1) << ' ' << t.dim(0) << "\n65535\n";
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os) throw Error("write failed: " + path.string());
}

namespace {

// Reads the next header integer, skipping whitespace and '#' comments.
std::size_t header_int(const std::vector<unsigned char>& bytes, std::size_t& pos, const std::string& path) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(path + ": malformed PGM header");
  std::size_t v = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (v > (1u << 30)) throw FormatError(path + ": PGM header value too large");
    ++pos;
  }
  return v;
}

}  // namespace

Tensor read_pgm16(const std::filesystem::path& path, double scale) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(name + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  const std::size_t W = header_int(bytes, pos, name);
  const std::size_t H = header_int(bytes, pos, name);
  const std::size_t maxval = header_int(bytes, pos, name);
  if (W == 0 || H == 0 || maxval == 0 || maxval > 65535) throw FormatError(name + ": malformed PGM header");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(name + ": malformed PGM header");
  ++pos;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  if (bytes.size() - pos < W * H * bps) throw FormatError(name + ": truncated PGM payload");
  Tensor t({H, W});
  for (std::size_t i = 0; i < W * H; ++i) {
    const std::size_t count = bps == 1 ? bytes[pos + i] : (std::size_t{bytes[pos + 2 * i]} << 8) | bytes[pos + 2 * i + 1];
    t[i] = static_cast<double>(count) * scale;
  }
  return t;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    write_pgm16(sub / "gt.pgm", scenes[i].gt, kDepthScale);
    write_pgm16(sub / "sparse.pgm", scenes[i].sparse, kDepthScale);
    write_pgm16(sub / "conf.pgm", scenes[i].confidence, kConfidenceScale);
  }
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw Error("dataset " + dir.string() + " contains no scene_XXXX directories");
  std::vector<Scene> scenes;
  for (const auto& sub : subdirs) {
    Scene s;
    s.gt = read_pgm16(sub / "gt.pgm", kDepthScale);
    s.sparse = read_pgm16(sub / "sparse.pgm", kDepthScale);
    s.confidence = read_pgm16(sub / "conf.pgm", kConfidenceScale);
    require_same_shape(s.gt, s.sparse, "dataset scene");
    require_same_shape(s.gt, s.confidence, "dataset scene");
    s.gt_mask = Tensor(s.gt.shape());
    for (std::size_t i = 0; i < s.gt.size(); ++i) s.gt_mask[i] = s.gt[i] > 0.0 ? 1.0 : 0.0;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace nconv

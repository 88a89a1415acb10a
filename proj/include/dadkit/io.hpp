#pragma once

// File formats: DADF scoremaps, DADW weights, 8-bit PGM, keypoint and
// ground-truth CSVs, homography text, loss logs and the synthetic dataset layout.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dadkit/model.hpp"
#include "dadkit/objective.hpp"
#include "dadkit/synth.hpp"

namespace dadkit {

namespace fs = std::filesystem;

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_f32(std::ostream& os, double v) {
  const float f = static_cast<float>(v);
  os.write(reinterpret_cast<const char*>(&f), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  DADKIT_CHECK(is.gcount() == 4, ErrorKind::io, "truncated " + what);
  return v;
}

inline double get_f32(std::istream& is, const std::string& what) {
  float f = 0.0f;
  is.read(reinterpret_cast<char*>(&f), 4);
  DADKIT_CHECK(is.gcount() == 4, ErrorKind::io, "truncated " + what);
  return f;
}

inline void expect_magic(std::istream& is, const char* magic, const std::string& what) {
  char buf[4] = {};
  is.read(buf, 4);
  DADKIT_CHECK(is.gcount() == 4 && std::memcmp(buf, magic, 4) == 0, ErrorKind::io,
               what + ": bad magic, expected " + magic);
  const std::uint32_t version = get_u32(is, what);
  DADKIT_CHECK(version == 1, ErrorKind::io, what + ": unsupported version " + std::to_string(version));
}

inline std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  DADKIT_CHECK(os.good(), ErrorKind::io, "cannot write " + path.string());
  return os;
}

inline std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  DADKIT_CHECK(is.good(), ErrorKind::io, "cannot read " + path.string());
  return is;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Shortest text that reads back to the same double.
inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::io, what + ": not a number: '" + s + "'");
}

}  // namespace detail

// DADF: "DADF", u32 version, u32 height, u32 width, float32 values row-major.
inline void write_dadf(const fs::path& path, const Grid2d& grid) {
  auto os = detail::open_out(path, true);
  os.write("DADF", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(grid.height()));
  detail::put_u32(os, static_cast<std::uint32_t>(grid.width()));
  for (double v : grid) detail::put_f32(os, v);
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

inline Grid2d read_dadf(const fs::path& path) {
  auto is = detail::open_in(path, true);
  detail::expect_magic(is, "DADF", path.string());
  const auto h = detail::get_u32(is, "DADF header"), w = detail::get_u32(is, "DADF header");
  DADKIT_CHECK(h > 0 && w > 0 && h < (1u << 16) && w < (1u << 16), ErrorKind::io, "DADF: implausible shape");
  Grid2d g(static_cast<int>(h), static_cast<int>(w));
  for (double& v : g) v = detail::get_f32(is, "DADF values");
  return g;
}

// DADW: "DADW", u32 version, u32 layer count, then per layer u32x4 kernel shape,
// float32 kernel, u32 bias length, float32 bias. Values are stored in single
// precision, so a round trip rounds each parameter to the nearest float.
inline void write_weights(const fs::path& path, const DetectorParams& params) {
  params.validate();
  auto os = detail::open_out(path, true);
  os.write("DADW", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const Layer& l : params.layers) {
    for (int d : l.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : l.kernel) detail::put_f32(os, v);
    detail::put_u32(os, static_cast<std::uint32_t>(l.bias.size()));
    for (double v : l.bias) detail::put_f32(os, v);
  }
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

inline DetectorParams read_weights(const fs::path& path) {
  auto is = detail::open_in(path, true);
  detail::expect_magic(is, "DADW", path.string());
  const auto n = detail::get_u32(is, "DADW header");
  DADKIT_CHECK(n >= 1 && n < 1024, ErrorKind::io, "DADW: implausible layer count");
  DetectorParams p;
  for (std::uint32_t i = 0; i < n; ++i) {
    Layer l;
    std::size_t count = 1;
    for (int& d : l.shape) {
      d = static_cast<int>(detail::get_u32(is, "DADW layer shape"));
      DADKIT_CHECK(d >= 1 && d < 4096, ErrorKind::io, "DADW: implausible kernel shape");
      count *= static_cast<std::size_t>(d);
    }
    l.kernel.resize(count);
    for (double& v : l.kernel) v = detail::get_f32(is, "DADW kernel");
    l.bias.resize(detail::get_u32(is, "DADW bias length"));
    for (double& v : l.bias) v = detail::get_f32(is, "DADW bias");
    p.layers.push_back(std::move(l));
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::io, path.string() + ": " + e.message());
  }
  return p;
}

// Binary 8-bit PGM; values are clamped to [0, 1] and rounded.
inline void write_pgm(const fs::path& path, const Grid2d& img) {
  auto os = detail::open_out(path, true);
  os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

inline void write_pgm(const fs::path& path, const Mask& mask) {
  Grid2d g(mask.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? 1.0 : 0.0;
  write_pgm(path, g);
}

inline Grid2d read_pgm(const fs::path& path) {
  auto is = detail::open_in(path, true);
  auto token = [&] {
    std::string t;
    while (is >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(is, rest);
    }
    throw Error(ErrorKind::io, path.string() + ": truncated PGM header");
  };
  DADKIT_CHECK(token() == "P5", ErrorKind::io, path.string() + ": not a binary PGM");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  DADKIT_CHECK(w > 0 && h > 0 && maxval > 0 && maxval < 256, ErrorKind::io, path.string() + ": unsupported PGM");
  is.get();
  Grid2d g(h, w);
  std::vector<unsigned char> bytes(g.size());
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  DADKIT_CHECK(is.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorKind::io,
               path.string() + ": truncated PGM data");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = bytes[i] / static_cast<double>(maxval);
  return g;
}

inline Mask read_mask_pgm(const fs::path& path) {
  const Grid2d g = read_pgm(path);
  Mask m(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) m.set(i, g[i] >= 0.5);
  return m;
}

inline std::string keypoints_csv(const KeypointSet& kps) {
  std::string out = "x,y,score\n";
  for (const Keypoint& kp : kps.keypoints)
    out += detail::fixed6(kp.x) + ',' + detail::fixed6(kp.y) + ',' + detail::fixed6(kp.score) + '\n';
  return out;
}

inline void write_keypoints(const fs::path& path, const KeypointSet& kps) {
  auto os = detail::open_out(path, false);
  os << keypoints_csv(kps);
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

struct GtRow {
  Keypoint kp;
  Polarity polarity = Polarity::light;
  int id = 0;  // index of the corresponding keypoint in image A's list
};

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, const std::string& header) {
  auto is = open_in(path, false);
  std::string line;
  DADKIT_CHECK(std::getline(is, line) && line == header, ErrorKind::io,
               path.string() + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    rows.push_back(split(line, ','));
  }
  return rows;
}

}  // namespace detail

inline KeypointSet read_keypoints(const fs::path& path, Shape source_shape = {}) {
  KeypointSet kps;
  kps.source_shape = source_shape;
  for (const auto& row : detail::read_csv_rows(path, "x,y,score")) {
    DADKIT_CHECK(row.size() == 3, ErrorKind::io, path.string() + ": keypoint rows need 3 fields");
    kps.keypoints.push_back({detail::parse_double(row[0], path.string()), detail::parse_double(row[1], path.string()),
                             detail::parse_double(row[2], path.string())});
  }
  return kps;
}

inline void write_gt(const fs::path& path, const std::vector<GtRow>& rows) {
  auto os = detail::open_out(path, false);
  os << "x,y,score,polarity,id\n";
  for (const GtRow& r : rows)
    os << detail::fixed6(r.kp.x) << ',' << detail::fixed6(r.kp.y) << ',' << detail::fixed6(r.kp.score) << ','
       << to_string(r.polarity) << ',' << r.id << '\n';
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

inline std::vector<GtRow> read_gt(const fs::path& path) {
  std::vector<GtRow> out;
  for (const auto& row : detail::read_csv_rows(path, "x,y,score,polarity,id")) {
    DADKIT_CHECK(row.size() == 5 && (row[3] == "light" || row[3] == "dark"), ErrorKind::io,
                 path.string() + ": malformed ground-truth row");
    GtRow r;
    r.kp = {detail::parse_double(row[0], path.string()), detail::parse_double(row[1], path.string()),
            detail::parse_double(row[2], path.string())};
    r.polarity = row[3] == "light" ? Polarity::light : Polarity::dark;
    r.id = static_cast<int>(detail::parse_double(row[4], path.string()));
    out.push_back(r);
  }
  return out;
}

inline void write_homography(const fs::path& path, const HomographyTransfer& h) {
  auto os = detail::open_out(path, false);
  const Mat3& m = h.matrix();
  for (int r = 0; r < 3; ++r)
    os << detail::exact(m[3 * r]) << ' ' << detail::exact(m[3 * r + 1]) << ' ' << detail::exact(m[3 * r + 2]) << '\n';
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

inline HomographyTransfer read_homography(const fs::path& path) {
  auto is = detail::open_in(path, false);
  Mat3 m{};
  for (double& v : m) {
    std::string t;
    DADKIT_CHECK(static_cast<bool>(is >> t), ErrorKind::io, path.string() + ": expected nine numbers");
    v = detail::parse_double(t, path.string());
  }
  std::string extra;
  DADKIT_CHECK(!(is >> extra), ErrorKind::io, path.string() + ": trailing data after nine numbers");
  return HomographyTransfer(m);
}

inline std::string loss_csv_header() { return "step,rl_loss,reg_loss,total,mean_raw_reward,num_matches\n"; }

inline std::string loss_csv_row(int step, const LossReport& r) {
  return std::to_string(step) + ',' + detail::exact(r.rl_loss) + ',' + detail::exact(r.reg_loss) + ',' +
         detail::exact(r.total) + ',' + detail::exact(r.mean_raw_reward) + ',' + std::to_string(r.num_matches) + '\n';
}

using KeyValues = std::map<std::string, std::string>;

inline void write_key_values(const fs::path& path, const KeyValues& kv) {
  auto os = detail::open_out(path, false);
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing " + path.string());
}

// Lines of key=value; blank lines and lines starting with '#' are skipped.
inline KeyValues read_key_values(const fs::path& path) {
  auto is = detail::open_in(path, false);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    DADKIT_CHECK(eq != std::string::npos, ErrorKind::invalid_input,
                 path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline fs::path pair_dir(const fs::path& root, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "pair_%06zu", index);
  return root / name;
}

inline std::vector<GtRow> gt_rows_a(const PairSample& s) {
  std::vector<GtRow> rows;
  for (std::size_t i = 0; i < s.gt_a.size(); ++i) rows.push_back({s.gt_a[i], s.polarity_a[i], static_cast<int>(i)});
  return rows;
}

inline std::vector<GtRow> gt_rows_b(const PairSample& s) {
  std::vector<GtRow> rows;
  for (std::size_t j = 0; j < s.gt_b.size(); ++j) rows.push_back({s.gt_b[j], s.polarity_b[j], s.gt_b_source[j]});
  return rows;
}

// Writes one pair directory. `meta` carries the effective configuration; the
// pair's own seed, augmentation state and mode are added to it.
inline void write_pair(const fs::path& dir, const PairSample& s, KeyValues meta) {
  fs::create_directories(dir);
  write_pgm(dir / "a.pgm", s.image_a);
  write_pgm(dir / "b.pgm", s.image_b);
  write_homography(dir / "h.txt", s.transfer);
  write_pgm(dir / "mask_a.pgm", s.mask_a);
  write_pgm(dir / "mask_b.pgm", s.mask_b);
  write_gt(dir / "gt_a.csv", gt_rows_a(s));
  write_gt(dir / "gt_b.csv", gt_rows_b(s));
  meta["pair_seed"] = std::to_string(s.seed);
  meta["pair_toy"] = s.toy ? "1" : "0";
  meta["pair_rotation_k"] = std::to_string(s.rotation_k);
  meta["pair_negated_b"] = s.negated_b ? "1" : "0";
  write_key_values(dir / "meta.txt", meta);
}

// A pair read back from disk. Images are 8-bit quantized.
struct StoredPair {
  Grid2d image_a;
  Grid2d image_b;
  HomographyTransfer transfer;
  Mask mask_a;
  Mask mask_b;
  std::vector<GtRow> gt_a;
  std::vector<GtRow> gt_b;
  KeyValues meta;
  bool toy = false;

  KeypointSet keypoints_a() const { return to_set(gt_a, image_a.shape()); }
  KeypointSet keypoints_b() const { return to_set(gt_b, image_b.shape()); }

  // Ground-truth transfer for the toy model, rebuilt from the label pairing.
  LabelTransfer label_transfer(double radius = kToyAssignRadius) const {
    std::vector<Point> src, dst;
    for (const GtRow& r : gt_b) {
      DADKIT_CHECK(r.id >= 0 && static_cast<std::size_t>(r.id) < gt_a.size(), ErrorKind::io,
                   "gt_b id out of range");
      src.push_back({gt_a[r.id].kp.x, gt_a[r.id].kp.y});
      dst.push_back({r.kp.x, r.kp.y});
    }
    return LabelTransfer(std::move(src), std::move(dst), radius);
  }

  template <class F>
  decltype(auto) with_transfer(F&& f) const {
    if (toy) return f(label_transfer());
    return f(transfer);
  }

 private:
  static KeypointSet to_set(const std::vector<GtRow>& rows, Shape shape) {
    KeypointSet s;
    s.source_shape = shape;
    for (const GtRow& r : rows) s.keypoints.push_back(r.kp);
    return s;
  }
};

inline StoredPair read_pair(const fs::path& dir) {
  StoredPair p;
  p.image_a = read_pgm(dir / "a.pgm");
  p.image_b = read_pgm(dir / "b.pgm");
  p.transfer = read_homography(dir / "h.txt");
  p.mask_a = read_mask_pgm(dir / "mask_a.pgm");
  p.mask_b = read_mask_pgm(dir / "mask_b.pgm");
  p.gt_a = read_gt(dir / "gt_a.csv");
  p.gt_b = read_gt(dir / "gt_b.csv");
  p.meta = read_key_values(dir / "meta.txt");
  p.toy = p.meta.count("pair_toy") && p.meta.at("pair_toy") == "1";
  return p;
}

// Pair directories under `root`, in index order.
inline std::vector<fs::path> list_pairs(const fs::path& root) {
  DADKIT_CHECK(fs::is_directory(root), ErrorKind::io, "not a dataset directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind("pair_", 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dadkit

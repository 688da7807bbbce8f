#pragma once

// On-disk formats. All multi-byte values are little-endian.
//
// VRT1 trajectory:
//   "VRT1" | u32 nx | u32 ny | u32 n_frames | f64 nu | f64 record_interval |
//   f64 forcing_amplitude | u32 k_f | u64 seed | n_frames*nx*ny f32
//   (frame-major, row-major within a frame)
//
// LTN1 latent table:
//   "LTN1" | u32 latent_dim | u64 n_entries |
//   n_entries * (u32 trajectory_id | u32 frame_id | latent_dim f32)
//
// Manifest: text, one "trajectory_id\tseed\tpath" line per trajectory.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "relaylab/errors.hpp"
#include "relaylab/field.hpp"
#include "relaylab/solver.hpp"

namespace relaylab {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw FormatError(FormatError::Kind::io, "rename to " + path.string() + " failed: " + ec.message());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_magic(std::string_view m) { bytes_.append(m); }
  [[nodiscard]] const std::string& bytes() const noexcept { return bytes_; }
  void reserve(std::size_t n) { bytes_.reserve(n); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::truncated,
                        source_ + ": truncated (need " + std::to_string(n) + " more bytes at offset " +
                            std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()) + ")");
    }
  }
  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || bytes_.substr(0, magic.size()) != magic) {
      throw FormatError(FormatError::Kind::bad_magic, source_ + ": bad magic, expected " + std::string(magic));
    }
    pos_ = magic.size();
  }
  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_trajectory(const Trajectory& traj) {
  if (traj.frames.empty()) throw std::invalid_argument("cannot serialise an empty trajectory");
  const Grid& g = traj.grid();
  detail::ByteWriter w;
  w.reserve(52 + traj.frames.size() * g.size() * sizeof(float));
  w.put_magic("VRT1");
  w.put(static_cast<std::uint32_t>(g.nx));
  w.put(static_cast<std::uint32_t>(g.ny));
  w.put(static_cast<std::uint32_t>(traj.frames.size()));
  w.put(traj.config.nu);
  w.put(traj.config.record_interval);
  w.put(traj.config.forcing_amplitude);
  w.put(static_cast<std::uint32_t>(traj.config.k_f));
  w.put(traj.config.seed);
  for (const Field& f : traj.frames) {
    if (!(f.grid() == g)) throw std::invalid_argument("trajectory frames do not share one grid");
    for (double v : f.values()) w.put(static_cast<float>(v));
  }
  return w.bytes();
}

/// Parses VRT1 bytes. The grid length is not part of the format and is taken
/// from `domain_length`.
inline Trajectory decode_trajectory(std::string_view bytes, const std::string& source,
                                    double domain_length = Grid{}.length) {
  detail::ByteReader r(bytes, source);
  r.expect_magic("VRT1");
  Trajectory traj;
  Grid g;
  g.nx = r.get<std::uint32_t>();
  g.ny = r.get<std::uint32_t>();
  g.length = domain_length;
  const std::uint32_t n_frames = r.get<std::uint32_t>();
  traj.config.nu = r.get<double>();
  traj.config.record_interval = r.get<double>();
  traj.config.forcing_amplitude = r.get<double>();
  traj.config.k_f = static_cast<int>(r.get<std::uint32_t>());
  traj.config.seed = r.get<std::uint64_t>();
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::dimension_mismatch, source + ": " + e.what());
  }
  if (n_frames == 0) throw FormatError(FormatError::Kind::invalid_header, source + ": zero frames");
  traj.config.grid = g;
  const std::size_t payload = static_cast<std::size_t>(n_frames) * g.size() * sizeof(float);
  r.require(payload);
  if (r.remaining() != payload) {
    throw FormatError(FormatError::Kind::dimension_mismatch,
                      source + ": payload of " + std::to_string(r.remaining()) +
                          " bytes does not match header (" + std::to_string(payload) + ")");
  }
  traj.frames.reserve(n_frames);
  for (std::uint32_t f = 0; f < n_frames; ++f) {
    Field frame(g);
    for (double& v : frame.values()) v = static_cast<double>(r.get<float>());
    traj.frames.push_back(std::move(frame));
  }
  return traj;
}

struct TrajectoryHeader {
  std::uint32_t nx = 0;
  std::uint32_t ny = 0;
  std::uint32_t n_frames = 0;
  double nu = 0.0;
  double record_interval = 0.0;
  double forcing_amplitude = 0.0;
  int k_f = 0;
  std::uint64_t seed = 0;
};

/// Reads only the fixed-size VRT1 header.
inline TrajectoryHeader read_trajectory_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  std::string bytes(52, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  detail::ByteReader r(bytes, path.string());
  r.expect_magic("VRT1");
  TrajectoryHeader h;
  h.nx = r.get<std::uint32_t>();
  h.ny = r.get<std::uint32_t>();
  h.n_frames = r.get<std::uint32_t>();
  h.nu = r.get<double>();
  h.record_interval = r.get<double>();
  h.forcing_amplitude = r.get<double>();
  h.k_f = static_cast<int>(r.get<std::uint32_t>());
  h.seed = r.get<std::uint64_t>();
  return h;
}

inline void write_trajectory(const fs::path& path, const Trajectory& traj) {
  write_file_atomic(path, encode_trajectory(traj));
}

inline Trajectory read_trajectory(const fs::path& path, std::uint32_t trajectory_id = 0,
                                  double domain_length = Grid{}.length) {
  Trajectory t = decode_trajectory(read_file(path), path.string(), domain_length);
  t.trajectory_id = trajectory_id;
  return t;
}

struct FrameKey {
  std::uint32_t trajectory_id = 0;
  std::uint32_t frame_id = 0;

  friend auto operator<=>(const FrameKey&, const FrameKey&) = default;
};

/// Externally produced latent vectors keyed by (trajectory_id, frame_id).
class LatentTable {
 public:
  explicit LatentTable(std::size_t dim = 0) : dim_(dim) {}

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::map<FrameKey, std::vector<double>>& entries() const noexcept { return entries_; }

  /// Returns false if the key is already present.
  bool insert(FrameKey key, std::vector<double> v) {
    if (v.size() != dim_) throw DimensionError("latent vector", dim_, v.size());
    return entries_.emplace(key, std::move(v)).second;
  }

  [[nodiscard]] const std::vector<double>& at(FrameKey key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw MissingKeyError(key.trajectory_id, key.frame_id);
    return it->second;
  }

  [[nodiscard]] bool contains(FrameKey key) const { return entries_.contains(key); }

 private:
  std::size_t dim_;
  std::map<FrameKey, std::vector<double>> entries_;
};

inline std::string encode_latents(const LatentTable& table) {
  detail::ByteWriter w;
  w.put_magic("LTN1");
  w.put(static_cast<std::uint32_t>(table.dim()));
  w.put(static_cast<std::uint64_t>(table.size()));
  for (const auto& [key, v] : table.entries()) {
    w.put(key.trajectory_id);
    w.put(key.frame_id);
    for (double x : v) w.put(static_cast<float>(x));
  }
  return w.bytes();
}

inline LatentTable decode_latents(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  r.expect_magic("LTN1");
  const std::uint32_t dim = r.get<std::uint32_t>();
  const std::uint64_t n = r.get<std::uint64_t>();
  if (dim == 0) throw FormatError(FormatError::Kind::invalid_header, source + ": latent_dim is zero");
  const std::uint64_t record = 8ull + 4ull * dim;
  if (n > r.remaining() / record) {
    throw FormatError(FormatError::Kind::truncated,
                      source + ": header declares " + std::to_string(n) + " entries, payload holds " +
                          std::to_string(r.remaining() / record));
  }
  LatentTable table(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    FrameKey key{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
    std::vector<double> v(dim);
    for (double& x : v) x = static_cast<double>(r.get<float>());
    if (!table.insert(key, std::move(v))) {
      throw FormatError(FormatError::Kind::duplicate_key,
                        source + ": duplicate key (trajectory " + std::to_string(key.trajectory_id) +
                            ", frame " + std::to_string(key.frame_id) + ")");
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::dimension_mismatch,
                      source + ": " + std::to_string(r.remaining()) + " trailing bytes after declared entries");
  }
  return table;
}

inline void write_latents(const fs::path& path, const LatentTable& table) {
  write_file_atomic(path, encode_latents(table));
}

inline LatentTable load_latents(const fs::path& path) {
  return decode_latents(read_file(path), path.string());
}

struct ManifestEntry {
  std::uint32_t trajectory_id = 0;
  std::uint64_t seed = 0;
  fs::path path;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline std::string encode_manifest(std::span<const ManifestEntry> entries) {
  std::ostringstream out;
  for (const ManifestEntry& e : entries) {
    out << e.trajectory_id << '\t' << e.seed << '\t' << e.path.string() << '\n';
  }
  return out.str();
}

/// Relative paths in the manifest are resolved against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError(FormatError::Kind::invalid_header,
                        path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>seed<TAB>path");
    }
    ManifestEntry e;
    try {
      e.trajectory_id = static_cast<std::uint32_t>(std::stoul(line.substr(0, t1)));
      e.seed = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::invalid_header,
                        path.string() + ":" + std::to_string(lineno) + ": bad id or seed");
    }
    e.path = line.substr(t2 + 1);
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace relaylab

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "relaylab/io.hpp"

using namespace relaylab;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("relaylab_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Trajectory random_trajectory(std::size_t n_frames, std::uint64_t seed, std::size_t n = 16) {
  Trajectory t;
  t.config.grid = Grid{n, n, 2.0 * std::numbers::pi};
  t.config.nu = 1e-4;
  t.config.record_interval = 1.0;
  t.config.forcing_amplitude = 0.1;
  t.config.k_f = 4;
  t.config.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  for (std::size_t f = 0; f < n_frames; ++f) {
    Field frame(t.config.grid);
    for (double& v : frame.values()) v = static_cast<double>(normal(rng));
    t.frames.push_back(std::move(frame));
  }
  return t;
}

template <typename Fn>
FormatError::Kind format_error_kind(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "expected FormatError";
  return FormatError::Kind::io;
}

LatentTable random_table(std::size_t dim, std::size_t n, std::uint64_t seed) {
  LatentTable t(dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (double& x : v) x = static_cast<double>(normal(rng));
    t.insert(FrameKey{static_cast<std::uint32_t>(i / 5), static_cast<std::uint32_t>(i % 5)}, std::move(v));
  }
  return t;
}

}  // namespace

TEST(TrajectoryIo, RoundTripIsBitExact) {
  TempDir dir;
  const Trajectory t = random_trajectory(5, 42);
  write_trajectory(dir.path() / "t.vrt", t);
  const Trajectory back = read_trajectory(dir.path() / "t.vrt");
  ASSERT_EQ(back.frames.size(), t.frames.size());
  for (std::size_t f = 0; f < t.frames.size(); ++f) EXPECT_TRUE(back.frames[f] == t.frames[f]);
  EXPECT_EQ(back.config.nu, t.config.nu);
  EXPECT_EQ(back.config.record_interval, t.config.record_interval);
  EXPECT_EQ(back.config.forcing_amplitude, t.config.forcing_amplitude);
  EXPECT_EQ(back.config.k_f, t.config.k_f);
  EXPECT_EQ(back.config.seed, t.config.seed);
  EXPECT_EQ(back.grid(), t.grid());
}

TEST(TrajectoryIo, HeaderLayout) {
  const std::string bytes = encode_trajectory(random_trajectory(2, 1, 8));
  ASSERT_EQ(bytes.size(), 52u + 2u * 64u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "VRT1");
  std::uint32_t nx = 0;
  std::uint64_t seed = 0;
  std::memcpy(&nx, bytes.data() + 4, 4);
  std::memcpy(&seed, bytes.data() + 44, 8);
  EXPECT_EQ(nx, 8u);
  EXPECT_EQ(seed, 1u);
}

TEST(TrajectoryIo, BadMagic) {
  std::string bytes = encode_trajectory(random_trajectory(1, 2));
  bytes.replace(0, 4, "XXXX");
  EXPECT_EQ(format_error_kind([&] { (void)decode_trajectory(bytes, "mem"); }), FormatError::Kind::bad_magic);
}

TEST(TrajectoryIo, HeaderClaimingMoreFramesIsTruncated) {
  std::string bytes = encode_trajectory(random_trajectory(10, 3));
  const std::uint32_t fifty = 50;
  std::memcpy(bytes.data() + 12, &fifty, 4);
  EXPECT_EQ(format_error_kind([&] { (void)decode_trajectory(bytes, "mem"); }), FormatError::Kind::truncated);
}

TEST(TrajectoryIo, ShortHeaderIsTruncated) {
  const std::string bytes = encode_trajectory(random_trajectory(1, 3)).substr(0, 20);
  EXPECT_EQ(format_error_kind([&] { (void)decode_trajectory(bytes, "mem"); }), FormatError::Kind::truncated);
}

TEST(TrajectoryIo, TrailingPayloadIsADimensionMismatch) {
  std::string bytes = encode_trajectory(random_trajectory(2, 3));
  bytes.append(4, '\0');
  EXPECT_EQ(format_error_kind([&] { (void)decode_trajectory(bytes, "mem"); }),
            FormatError::Kind::dimension_mismatch);
}

TEST(TrajectoryIo, NonPowerOfTwoGridIsADimensionMismatch) {
  std::string bytes = encode_trajectory(random_trajectory(1, 3));
  const std::uint32_t bad = 15;
  std::memcpy(bytes.data() + 4, &bad, 4);
  EXPECT_EQ(format_error_kind([&] { (void)decode_trajectory(bytes, "mem"); }),
            FormatError::Kind::dimension_mismatch);
}

TEST(TrajectoryIo, MissingFileIsAnIoError) {
  TempDir dir;
  EXPECT_EQ(format_error_kind([&] { (void)read_trajectory(dir.path() / "absent.vrt"); }), FormatError::Kind::io);
}

TEST(TrajectoryIo, AtomicWriteLeavesNoTemporary) {
  TempDir dir;
  write_trajectory(dir.path() / "t.vrt", random_trajectory(1, 4));
  write_trajectory(dir.path() / "t.vrt", random_trajectory(2, 5));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    ++files;
    EXPECT_EQ(e.path().filename(), "t.vrt");
  }
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(read_trajectory(dir.path() / "t.vrt").frames.size(), 2u);
}

TEST(LatentIo, HeaderContract) {
  TempDir dir;
  write_latents(dir.path() / "z.ltn", random_table(64, 2, 1));
  const LatentTable t = load_latents(dir.path() / "z.ltn");
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dim(), 64u);
}

TEST(LatentIo, RoundTripIsBitExact) {
  TempDir dir;
  const LatentTable t = random_table(7, 23, 2);
  write_latents(dir.path() / "z.ltn", t);
  const LatentTable back = load_latents(dir.path() / "z.ltn");
  EXPECT_EQ(back.entries(), t.entries());
}

TEST(LatentIo, TruncatedPayloadIsRejected) {
  const std::string bytes = encode_latents(random_table(8, 4, 3));
  EXPECT_EQ(format_error_kind([&] { (void)decode_latents(bytes.substr(0, bytes.size() - 3), "mem"); }),
            FormatError::Kind::truncated);
  EXPECT_EQ(format_error_kind([&] { (void)decode_latents(bytes.substr(0, 10), "mem"); }),
            FormatError::Kind::truncated);
}

TEST(LatentIo, BadMagic) {
  std::string bytes = encode_latents(random_table(8, 1, 3));
  bytes[0] = 'X';
  EXPECT_EQ(format_error_kind([&] { (void)decode_latents(bytes, "mem"); }), FormatError::Kind::bad_magic);
}

TEST(LatentIo, DuplicateKeysAreRejected) {
  detail::ByteWriter w;
  w.put_magic("LTN1");
  w.put(std::uint32_t{2});
  w.put(std::uint64_t{2});
  for (int i = 0; i < 2; ++i) {
    w.put(std::uint32_t{3});
    w.put(std::uint32_t{12});
    w.put(1.0f);
    w.put(2.0f);
  }
  EXPECT_EQ(format_error_kind([&] { (void)decode_latents(w.bytes(), "mem"); }), FormatError::Kind::duplicate_key);
}

TEST(LatentIo, ZeroDimensionIsInvalid) {
  detail::ByteWriter w;
  w.put_magic("LTN1");
  w.put(std::uint32_t{0});
  w.put(std::uint64_t{0});
  EXPECT_EQ(format_error_kind([&] { (void)decode_latents(w.bytes(), "mem"); }), FormatError::Kind::invalid_header);
}

TEST(LatentTable, MissingKeyNamesTheKey) {
  const LatentTable t = random_table(4, 3, 9);
  try {
    (void)t.at(FrameKey{7, 8});
    FAIL() << "expected MissingKeyError";
  } catch (const MissingKeyError& e) {
    EXPECT_EQ(e.trajectory_id, 7u);
    EXPECT_EQ(e.frame_id, 8u);
    EXPECT_NE(std::string(e.what()).find("trajectory 7, frame 8"), std::string::npos);
  }
}

TEST(LatentTable, InsertRejectsWrongDimension) {
  LatentTable t(3);
  EXPECT_THROW(t.insert(FrameKey{0, 0}, {1.0, 2.0}), DimensionError);
  EXPECT_TRUE(t.insert(FrameKey{0, 0}, {1.0, 2.0, 3.0}));
  EXPECT_FALSE(t.insert(FrameKey{0, 0}, {1.0, 2.0, 3.0}));
}

TEST(Manifest, RoundTripResolvesRelativePaths) {
  TempDir dir;
  const std::vector<ManifestEntry> entries{{0, 100, "traj_000000.vrt"}, {1, 101, "/abs/traj.vrt"}};
  write_file_atomic(dir.path() / "manifest.tsv", encode_manifest(entries));
  const auto back = read_manifest(dir.path() / "manifest.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].trajectory_id, 0u);
  EXPECT_EQ(back[0].seed, 100u);
  EXPECT_EQ(back[0].path, dir.path() / "traj_000000.vrt");
  EXPECT_EQ(back[1].path, fs::path("/abs/traj.vrt"));
}

TEST(Manifest, MalformedLineNamesTheLine) {
  TempDir dir;
  write_file_atomic(dir.path() / "m.tsv", "0\t1\ta.vrt\nbroken line\n");
  try {
    (void)read_manifest(dir.path() / "m.tsv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

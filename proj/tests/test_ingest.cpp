#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "synthetic.hpp"
#include "unmask/ingest.hpp"

namespace {

using namespace unmask;
using unmask::testing::TempDir;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::argument;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::vector<std::uint8_t> gray(std::size_t n, std::uint8_t v) { return std::vector<std::uint8_t>(n, v); }

TEST(PgmSequence, ThreeFilesGiveThreeFrames) {
  TempDir dir;
  for (int i = 0; i < 3; ++i) write_pgm(dir / ("f" + std::to_string(i) + ".pgm"), 4, 4, gray(16, 10));
  const auto frames = load_frames(dir.path(), FrameFormat::pgm_sequence);
  ASSERT_EQ(frames.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(frames[i].index, i);
    EXPECT_EQ(frames[i].width, 4u);
    EXPECT_EQ(frames[i].height, 4u);
  }
}

TEST(PgmSequence, ByteRangeMapsToUnitInterval) {
  TempDir dir;
  write_pgm(dir / "a.pgm", 2, 1, std::vector<std::uint8_t>{0, 255});
  const auto f = read_pgm(dir / "a.pgm");
  EXPECT_EQ(f.pixels[0], 0.0f);
  EXPECT_EQ(f.pixels[1], 1.0f);
}

TEST(PgmSequence, NumericOrderNotLexicographic) {
  TempDir dir;
  write_pgm(dir / "frame_10.pgm", 1, 1, gray(1, 10));
  write_pgm(dir / "frame_2.pgm", 1, 1, gray(1, 2));
  write_pgm(dir / "frame_1.pgm", 1, 1, gray(1, 1));
  const auto frames = load_frames(dir.path(), FrameFormat::pgm_sequence);
  ASSERT_EQ(frames.size(), 3u);
  EXPECT_FLOAT_EQ(frames[0].pixels[0], 1 / 255.0f);
  EXPECT_FLOAT_EQ(frames[1].pixels[0], 2 / 255.0f);
  EXPECT_FLOAT_EQ(frames[2].pixels[0], 10 / 255.0f);
}

TEST(PgmSequence, DuplicateOrMissingNumbersAreOrderingErrors) {
  TempDir dup;
  write_pgm(dup / "a_1.pgm", 1, 1, gray(1, 0));
  write_pgm(dup / "b_01.pgm", 1, 1, gray(1, 0));
  EXPECT_EQ(kind_of([&] { load_frames(dup.path(), FrameFormat::pgm_sequence); }),
            ErrorKind::ordering);
  TempDir unnumbered;
  write_pgm(unnumbered / "a.pgm", 1, 1, gray(1, 0));
  write_pgm(unnumbered / "b.pgm", 1, 1, gray(1, 0));
  EXPECT_EQ(kind_of([&] { load_frames(unnumbered.path(), FrameFormat::pgm_sequence); }),
            ErrorKind::ordering);
}

TEST(PgmSequence, ColorPpmIsConvertedToLuma) {
  TempDir dir;
  write_bytes(dir / "c.ppm", std::string("P6\n1 1\n255\n") + std::string("\xff\x00\x00", 3));
  const auto f = read_pgm(dir / "c.ppm");
  EXPECT_NEAR(f.pixels[0], 0.299, 1e-6);
}

TEST(PgmSequence, TruncatedRasterNamesOffset) {
  TempDir dir;
  write_bytes(dir / "t.pgm", "P5\n4 4\n255\nabc");
  try {
    read_pgm(dir / "t.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::truncation);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(PgmSequence, UnsupportedMaxvalIsFormatError) {
  TempDir dir;
  write_bytes(dir / "m.pgm", "P5\n1 1\n65535\n\x01\x02");
  EXPECT_EQ(kind_of([&] { read_pgm(dir / "m.pgm"); }), ErrorKind::format);
}

TEST(PgmSequence, CommentsInHeaderAreSkipped) {
  TempDir dir;
  const char raw[] = "P5\n# made by hand\n2 1\n# depth\n255\n\x00\xff";
  write_bytes(dir / "c.pgm", std::string(raw, sizeof raw - 1));
  const auto f = read_pgm(dir / "c.pgm");
  ASSERT_EQ(f.width, 2u);
  EXPECT_EQ(f.pixels[1], 1.0f);
}

TEST(RawY8, ShortBodyIsTruncationError) {
  TempDir dir;
  const auto body = dir / "v.y8";
  std::ofstream(raw_y8_header_path(body)) << "160 120 2\n";
  write_bytes(body, std::string(19200, '\0'));
  EXPECT_EQ(kind_of([&] { load_frames(body, FrameFormat::raw_y8); }), ErrorKind::truncation);
}

TEST(RawY8, ExactBodyLoads) {
  TempDir dir;
  const auto body = dir / "v.y8";
  std::ofstream(raw_y8_header_path(body)) << "160 120 2\n";
  write_bytes(body, std::string(38400, '\x80'));
  const auto frames = load_frames(body, FrameFormat::raw_y8);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[1].index, 1u);
  EXPECT_FLOAT_EQ(frames[1].pixels.back(), 128 / 255.0f);
}

TEST(RawY8, RoundTripIsBitIdentical) {
  TempDir dir;
  std::vector<Frame> frames;
  std::mt19937 rng(3);
  for (std::size_t i = 0; i < 4; ++i) {
    Frame f{i, 7, 5, std::vector<float>(35)};
    for (auto& p : f.pixels) p = static_cast<float>(rng() % 256) / 255.0f;
    frames.push_back(f);
  }
  write_raw_y8(dir / "r.y8", frames);
  const auto back = load_frames(dir / "r.y8", FrameFormat::raw_y8);
  ASSERT_EQ(back.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(back[i].pixels, frames[i].pixels);
}

TEST(RawY8, StreamingReaderYieldsFramesInOrder) {
  TempDir dir;
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < 3; ++i) frames.push_back(unmask::testing::constant_frame(i, i / 255.0f, 3, 2));
  write_raw_y8(dir / "s.y8", frames);
  FrameReader reader(dir / "s.y8", FrameFormat::raw_y8);
  EXPECT_EQ(reader.count(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto f = reader.next();
    ASSERT_TRUE(f.has_value());
    EXPECT_EQ(f->index, i);
    EXPECT_FLOAT_EQ(f->pixels[0], i / 255.0f);
  }
  EXPECT_FALSE(reader.next().has_value());
}

TEST(Resize, ConstantStaysConstant) {
  const Frame f = unmask::testing::constant_frame(0, 0.37f, 37, 23);
  const auto r = resize_bilinear(f, 160, 120);
  for (float p : r.pixels) EXPECT_EQ(p, 0.37f);
}

TEST(Resize, TwoByTwoToFourByTwo) {
  const Frame f{0, 2, 2, {0.0f, 1.0f, 0.0f, 1.0f}};
  const auto r = resize_bilinear(f, 4, 2);
  const float expected[] = {0.0f, 1.0f / 3, 2.0f / 3, 1.0f};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(r.at(x, y), expected[x], 1e-7);
}

TEST(Resize, IdentityIsBitIdentical) {
  const auto f = unmask::testing::noise_frames(1, 5).front();
  const auto r = resize_bilinear(f, f.width, f.height);
  EXPECT_EQ(r.pixels, f.pixels);
}

TEST(Resize, OutputStaysWithinInputRange) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  std::uniform_real_distribution<float> val(-3.0f, 5.0f);
  for (int trial = 0; trial < 200; ++trial) {
    Frame f{0, dim(rng), dim(rng), {}};
    f.pixels.resize(f.width * f.height);
    for (auto& p : f.pixels) p = val(rng);
    const auto [lo, hi] = std::minmax_element(f.pixels.begin(), f.pixels.end());
    const auto r = resize_bilinear(f, dim(rng), dim(rng));
    for (float p : r.pixels) {
      EXPECT_GE(p, *lo);
      EXPECT_LE(p, *hi);
    }
  }
}

TEST(Resize, ZeroTargetIsArgumentError) {
  const auto f = unmask::testing::constant_frame(0, 0.0f, 4, 4);
  EXPECT_EQ(kind_of([&] { resize_bilinear(f, 0, 4); }), ErrorKind::argument);
}

TEST(Masks, AllZeroMasksGiveNormalLabels) {
  TempDir dir;
  for (int i = 0; i < 4; ++i) write_pgm(dir / ("m" + std::to_string(i) + ".pgm"), 3, 3, gray(9, 0));
  const auto gt = load_masks(dir.path());
  EXPECT_EQ(gt.frameLabels, std::vector<std::uint8_t>(4, 0));
  ASSERT_TRUE(gt.has_masks());
}

TEST(Masks, SingleNonzeroPixelMarksItsFrame) {
  TempDir dir;
  for (int i = 0; i < 8; ++i) {
    auto px = gray(9, 0);
    if (i == 5) px[4] = 255;
    write_pgm(dir / ("m" + std::to_string(i) + ".pgm"), 3, 3, px);
  }
  const auto gt = load_masks(dir.path());
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(gt.frameLabels[i], i == 5 ? 1 : 0);
  EXPECT_EQ((*gt.pixelMasks)[5].anomalous_count(), 1u);
}

TEST(Masks, CountMismatchIsAlignmentError) {
  TempDir dir;
  for (int i = 0; i < 10; ++i) write_pgm(dir / ("m" + std::to_string(i) + ".pgm"), 2, 2, gray(4, 0));
  EXPECT_EQ(kind_of([&] { load_masks(dir.path(), 9); }), ErrorKind::alignment);
}

TEST(Masks, LabelDerivationIsIdempotent) {
  TempDir dir;
  std::mt19937 rng(2);
  for (int i = 0; i < 12; ++i) {
    auto px = gray(16, 0);
    if (rng() % 3 == 0) px[rng() % 16] = 255;
    write_pgm(dir / ("m" + std::to_string(i) + ".pgm"), 4, 4, px);
  }
  const auto gt = load_masks(dir.path());
  EXPECT_EQ(labels_from_masks(*gt.pixelMasks), gt.frameLabels);
}

TEST(Labels, TextFileOfZerosAndOnes) {
  TempDir dir;
  std::ofstream(dir / "l.txt") << "0 0\n1\n0\n";
  const auto gt = load_ground_truth(dir / "l.txt");
  EXPECT_EQ(gt.frameLabels, (std::vector<std::uint8_t>{0, 0, 1, 0}));
  EXPECT_FALSE(gt.has_masks());
  std::ofstream(dir / "bad.txt") << "0 2\n";
  EXPECT_EQ(kind_of([&] { load_labels(dir / "bad.txt"); }), ErrorKind::format);
}

ActivationFrame random_activation(std::size_t index, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.0f, 4.0f);
  ActivationFrame a{index, 256, 13, 13, std::vector<float>(256 * 13 * 13)};
  for (auto& v : a.values) v = u(rng);
  return a;
}

TEST(Activations, HeaderPlusTwoTensorsRoundTrips) {
  TempDir dir;
  std::mt19937 rng(4);
  std::vector<ActivationFrame> frames{random_activation(0, rng), random_activation(1, rng)};
  write_activations(dir / "a.umk", frames);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.umk"), kUmk1HeaderBytes + 2 * 256 * 13 * 13 * 4u);
  const auto back = load_activations(dir / "a.umk");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].values, frames[1].values);
  EXPECT_EQ(back[1].index, 1u);
}

TEST(Activations, SizeOtherThanHeaderFormulaIsTruncation) {
  TempDir dir;
  std::mt19937 rng(4);
  std::vector<ActivationFrame> frames{random_activation(0, rng)};
  write_activations(dir / "a.umk", frames);
  std::filesystem::resize_file(dir / "a.umk", std::filesystem::file_size(dir / "a.umk") - 4);
  EXPECT_EQ(kind_of([&] { load_activations(dir / "a.umk"); }), ErrorKind::truncation);
  write_activations(dir / "b.umk", frames);
  std::ofstream(dir / "b.umk", std::ios::binary | std::ios::app) << "xxxx";
  EXPECT_EQ(kind_of([&] { load_activations(dir / "b.umk"); }), ErrorKind::truncation);
}

TEST(Activations, AllZeroBodyIsAccepted) {
  TempDir dir;
  std::vector<ActivationFrame> frames(3, ActivationFrame{0, 256, 13, 13, std::vector<float>(256 * 169)});
  write_activations(dir / "z.umk", frames);
  const auto back = load_activations(dir / "z.umk");
  ASSERT_EQ(back.size(), 3u);
  for (const auto& f : back)
    for (float v : f.values) EXPECT_EQ(v, 0.0f);
}

TEST(Activations, NonFiniteValueIsDataError) {
  TempDir dir;
  std::vector<ActivationFrame> frames(1, ActivationFrame{0, 2, 2, 2, std::vector<float>(8)});
  frames[0].values[5] = std::numeric_limits<float>::quiet_NaN();
  write_activations(dir / "n.umk", frames);
  try {
    load_activations(dir / "n.umk");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find(std::to_string(kUmk1HeaderBytes + 20)), std::string::npos);
  }
}

TEST(Activations, BadMagicIsFormatError) {
  TempDir dir;
  write_bytes(dir / "x.umk", std::string(20, '\0'));
  EXPECT_EQ(kind_of([&] { load_activations(dir / "x.umk"); }), ErrorKind::format);
}

}  // namespace

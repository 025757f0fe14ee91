#pragma once

// Frame, mask and activation-map decoding.
//
// Supported inputs:
//   * binary PGM (P5) and PPM (P6, converted with BT.601 luma weights),
//     either as a directory of numbered files or a single file;
//   * raw-y8: a body of COUNT*W*H bytes plus a "<body>.hdr" sidecar holding
//     "W H COUNT";
//   * UMK1 activation tensors: "UMK1", u32 count, channels, height, width,
//     then little-endian f32 values, frame-major, channel-major, row-major.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "unmask/error.hpp"

namespace unmask {

struct Frame {
  std::size_t index = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;  // row-major, [0,1]

  float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

struct ActivationFrame {
  std::size_t index = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // channel-major, row-major

  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
};

struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // 1 = anomalous

  std::size_t anomalous_count() const {
    return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
  }
};

struct GroundTruth {
  std::vector<std::uint8_t> frameLabels;
  std::optional<std::vector<Mask>> pixelMasks;

  bool has_masks() const { return pixelMasks.has_value(); }
};

enum class FrameFormat { pgm_sequence, raw_y8 };

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::format, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff),
                                  static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), bytes.size());
}

inline float read_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(read_u32_le(p)); }

// Minimal netpbm header tokenizer: whitespace separated integers, '#' comments
// running to end of line.
class PnmHeader {
 public:
  PnmHeader(std::span<const std::uint8_t> bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::string magic() {
    require(bytes_.size() >= 2, ErrorKind::format, name_ + ": truncated header at byte offset 0");
    std::string m{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
    pos_ = 2;
    return m;
  }

  std::size_t next_int() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      require(value < (1u << 30), ErrorKind::format,
              name_ + ": header value too large at byte offset " + std::to_string(start));
      ++pos_;
    }
    require(pos_ > start, ErrorKind::format,
            name_ + ": expected integer at byte offset " + std::to_string(start));
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    require(pos_ < bytes_.size() && std::isspace(bytes_[pos_]), ErrorKind::format,
            name_ + ": missing raster separator at byte offset " + std::to_string(pos_));
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
    require(pos_ < bytes_.size(), ErrorKind::format,
            name_ + ": truncated header at byte offset " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> raw;  // 8-bit values (luma for P6) before scaling
};

inline GrayImage decode_pnm(std::span<const std::uint8_t> bytes, const std::string& name) {
  PnmHeader header(bytes, name);
  const std::string magic = header.magic();
  require(magic == "P5" || magic == "P6", ErrorKind::format,
          name + ": unsupported magic '" + magic + "' at byte offset 0 (expected P5 or P6)");
  GrayImage img;
  img.width = header.next_int();
  img.height = header.next_int();
  const std::size_t maxval = header.next_int();
  require(img.width > 0 && img.height > 0, ErrorKind::format, name + ": zero image dimension");
  require(maxval == 255, ErrorKind::format,
          name + ": unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  const std::size_t offset = header.raster_offset();
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t need = img.width * img.height * channels;
  if (bytes.size() < offset + need) {
    fail(ErrorKind::truncation, name + ": raster truncated at byte offset " +
                                    std::to_string(bytes.size()) + " (expected " +
                                    std::to_string(offset + need) + " bytes)");
  }
  const std::size_t n = img.width * img.height;
  img.pixels.resize(n);
  img.raw.resize(n);
  const std::uint8_t* data = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (channels == 1) {
      img.raw[i] = data[i];
      img.pixels[i] = static_cast<float>(data[i] / 255.0);
    } else {
      const double luma =
          0.299 * data[3 * i] + 0.587 * data[3 * i + 1] + 0.114 * data[3 * i + 2];
      img.raw[i] = static_cast<std::uint8_t>(std::lround(luma));
      img.pixels[i] = static_cast<float>(luma / 255.0);
    }
  }
  return img;
}

inline bool is_pnm_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

// Last run of digits in the file stem, e.g. "frame_0042.pgm" -> 42.
inline std::optional<std::uint64_t> sequence_number(const std::filesystem::path& p) {
  const std::string stem = p.stem().string();
  auto end = stem.find_last_of("0123456789");
  if (end == std::string::npos) return std::nullopt;
  auto begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
  return std::stoull(stem.substr(begin, end - begin + 1));
}

}  // namespace detail

// Numbered image files in a directory, ordered by their sequence number.
inline std::vector<std::filesystem::path> list_image_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(fs::exists(dir), ErrorKind::format, "no such path: " + dir.string());
  if (!fs::is_directory(dir)) return {dir};
  std::vector<std::pair<std::uint64_t, fs::path>> numbered;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !detail::is_pnm_file(entry.path())) continue;
    auto number = detail::sequence_number(entry.path());
    require(number.has_value(), ErrorKind::ordering,
            "file without sequence number: " + entry.path().filename().string());
    numbered.emplace_back(*number, entry.path());
  }
  std::sort(numbered.begin(), numbered.end());
  for (std::size_t i = 1; i < numbered.size(); ++i) {
    require(numbered[i].first != numbered[i - 1].first, ErrorKind::ordering,
            "duplicate sequence number " + std::to_string(numbered[i].first) + ": " +
                numbered[i - 1].second.filename().string() + ", " +
                numbered[i].second.filename().string());
  }
  std::vector<fs::path> paths;
  paths.reserve(numbered.size());
  for (auto& [n, p] : numbered) paths.push_back(std::move(p));
  return paths;
}

inline Frame read_pgm(const std::filesystem::path& path, std::size_t index = 0) {
  const auto bytes = detail::read_file(path);
  auto img = detail::decode_pnm(bytes, path.filename().string());
  return Frame{index, img.width, img.height, std::move(img.pixels)};
}

inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const std::uint8_t> pixels) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::format, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline std::uint8_t to_byte(float intensity) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(intensity, 0.0f, 1.0f) * 255.0f));
}

struct RawY8Header {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t count = 0;
};

inline std::filesystem::path raw_y8_header_path(const std::filesystem::path& body) {
  return std::filesystem::path(body.string() + ".hdr");
}

inline RawY8Header read_raw_y8_header(const std::filesystem::path& body) {
  const auto hdr = raw_y8_header_path(body);
  std::ifstream in(hdr);
  require(static_cast<bool>(in), ErrorKind::format, "missing raw-y8 sidecar " + hdr.string());
  RawY8Header h;
  require(static_cast<bool>(in >> h.width >> h.height >> h.count), ErrorKind::format,
          hdr.string() + ": expected 'W H COUNT' at byte offset 0");
  require(h.width > 0 && h.height > 0, ErrorKind::format, hdr.string() + ": zero dimension");
  return h;
}

inline void write_raw_y8(const std::filesystem::path& body, std::span<const Frame> frames) {
  require(!frames.empty(), ErrorKind::argument, "write_raw_y8: no frames");
  const std::size_t w = frames.front().width;
  const std::size_t h = frames.front().height;
  {
    std::ofstream hdr(raw_y8_header_path(body));
    hdr << w << ' ' << h << ' ' << frames.size() << '\n';
  }
  std::ofstream out(body, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::format, "cannot write " + body.string());
  std::vector<char> row(w * h);
  for (const auto& f : frames) {
    require(f.width == w && f.height == h, ErrorKind::argument, "write_raw_y8: mixed frame sizes");
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<char>(to_byte(f.pixels[i]));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

// Pull-based reader so that long videos never have to sit in memory.
class FrameReader {
 public:
  FrameReader(const std::filesystem::path& source, FrameFormat format) : format_(format) {
    if (format_ == FrameFormat::pgm_sequence) {
      files_ = list_image_sequence(source);
      count_ = files_.size();
    } else {
      const auto h = read_raw_y8_header(source);
      width_ = h.width;
      height_ = h.height;
      count_ = h.count;
      const auto size = std::filesystem::file_size(source);
      const auto need = static_cast<std::uintmax_t>(width_ * height_ * count_);
      if (size < need) {
        fail(ErrorKind::truncation, source.string() + ": raw-y8 body truncated at byte offset " +
                                        std::to_string(size) + " (header requires " +
                                        std::to_string(need) + " bytes)");
      }
      raw_.open(source, std::ios::binary);
      require(static_cast<bool>(raw_), ErrorKind::format, "cannot open " + source.string());
      buffer_.resize(width_ * height_);
    }
  }

  std::size_t count() const { return count_; }

  std::optional<Frame> next() {
    if (next_ >= count_) return std::nullopt;
    const std::size_t index = next_++;
    if (format_ == FrameFormat::pgm_sequence) return read_pgm(files_[index], index);
    raw_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    require(static_cast<bool>(raw_), ErrorKind::truncation,
            "raw-y8 body truncated at byte offset " + std::to_string(index * buffer_.size()));
    Frame f{index, width_, height_, std::vector<float>(buffer_.size())};
    for (std::size_t i = 0; i < buffer_.size(); ++i)
      f.pixels[i] = static_cast<float>(buffer_[i] / 255.0);
    return f;
  }

 private:
  FrameFormat format_;
  std::vector<std::filesystem::path> files_;
  std::ifstream raw_;
  std::vector<std::uint8_t> buffer_;
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t count_ = 0;
  std::size_t next_ = 0;
};

inline std::vector<Frame> load_frames(const std::filesystem::path& source, FrameFormat format) {
  FrameReader reader(source, format);
  std::vector<Frame> frames;
  frames.reserve(reader.count());
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

// Bilinear resampling with corner-aligned sampling positions
// (src = dst * (in - 1) / (out - 1)) and clamping at the borders.
inline Frame resize_bilinear(const Frame& frame, std::size_t out_width, std::size_t out_height) {
  require(out_width >= 1 && out_height >= 1, ErrorKind::argument,
          "resize_bilinear: zero-size target");
  require(frame.width >= 1 && frame.height >= 1 &&
              frame.pixels.size() == frame.width * frame.height,
          ErrorKind::argument, "resize_bilinear: malformed source frame");
  if (out_width == frame.width && out_height == frame.height) return frame;

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double pos = out == 1 ? (in - 1) / 2.0
                                  : static_cast<double>(i) * static_cast<double>(in - 1) /
                                        static_cast<double>(out - 1);
      const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), in - 1);
      const auto hi = std::min(lo + 1, in - 1);
      result[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return result;
  };
  auto lerp = [](double a, double b, double t) {
    return std::clamp(a + (b - a) * t, std::min(a, b), std::max(a, b));
  };

  const auto xs = taps(frame.width, out_width);
  const auto ys = taps(frame.height, out_height);
  Frame out{frame.index, out_width, out_height, std::vector<float>(out_width * out_height)};
  for (std::size_t y = 0; y < out_height; ++y) {
    for (std::size_t x = 0; x < out_width; ++x) {
      const double top = lerp(frame.at(xs[x].lo, ys[y].lo), frame.at(xs[x].hi, ys[y].lo), xs[x].t);
      const double bottom =
          lerp(frame.at(xs[x].lo, ys[y].hi), frame.at(xs[x].hi, ys[y].hi), xs[x].t);
      out.pixels[y * out_width + x] = static_cast<float>(lerp(top, bottom, ys[y].t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth

inline Mask read_mask(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  auto img = detail::decode_pnm(bytes, path.filename().string());
  Mask m{img.width, img.height, std::vector<std::uint8_t>(img.raw.size())};
  for (std::size_t i = 0; i < img.raw.size(); ++i) m.pixels[i] = img.raw[i] != 0 ? 1 : 0;
  return m;
}

inline std::vector<std::uint8_t> labels_from_masks(std::span<const Mask> masks) {
  std::vector<std::uint8_t> labels(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& px = masks[i].pixels;
    labels[i] = std::any_of(px.begin(), px.end(), [](std::uint8_t v) { return v != 0; }) ? 1 : 0;
  }
  return labels;
}

// One mask image per frame. When the video length is known it must match.
inline GroundTruth load_masks(const std::filesystem::path& source,
                              std::optional<std::size_t> expected_frames = std::nullopt) {
  const auto files = list_image_sequence(source);
  if (expected_frames && files.size() != *expected_frames) {
    fail(ErrorKind::alignment, "mask count " + std::to_string(files.size()) +
                                   " does not match frame count " +
                                   std::to_string(*expected_frames));
  }
  std::vector<Mask> masks;
  masks.reserve(files.size());
  for (const auto& f : files) masks.push_back(read_mask(f));
  GroundTruth gt;
  gt.frameLabels = labels_from_masks(masks);
  gt.pixelMasks = std::move(masks);
  return gt;
}

// Frame-level labels as whitespace separated 0/1 tokens.
inline GroundTruth load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::format, "cannot open " + path.string());
  GroundTruth gt;
  std::string token;
  while (in >> token) {
    require(token == "0" || token == "1", ErrorKind::format,
            path.string() + ": label " + std::to_string(gt.frameLabels.size()) +
                " is not 0 or 1");
    gt.frameLabels.push_back(token == "1" ? 1 : 0);
  }
  return gt;
}

// Directory -> per-frame masks; regular file -> frame labels.
inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::format, "no such path: " + path.string());
  if (std::filesystem::is_directory(path)) return load_masks(path);
  return load_labels(path);
}

// ---------------------------------------------------------------------------
// UMK1 activation tensors

inline constexpr std::size_t kUmk1HeaderBytes = 20;

struct ActivationHeader {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t frame_values() const { return channels * height * width; }
  std::uintmax_t file_bytes() const {
    return kUmk1HeaderBytes + static_cast<std::uintmax_t>(count) * frame_values() * 4;
  }
};

class ActivationReader {
 public:
  explicit ActivationReader(const std::filesystem::path& source) : name_(source.string()) {
    in_.open(source, std::ios::binary);
    require(static_cast<bool>(in_), ErrorKind::format, "cannot open " + name_);
    std::array<std::uint8_t, kUmk1HeaderBytes> head{};
    in_.read(reinterpret_cast<char*>(head.data()), head.size());
    require(in_.gcount() == static_cast<std::streamsize>(head.size()), ErrorKind::truncation,
            name_ + ": header truncated at byte offset " + std::to_string(in_.gcount()));
    require(std::memcmp(head.data(), "UMK1", 4) == 0, ErrorKind::format,
            name_ + ": bad magic at byte offset 0 (expected UMK1)");
    header_.count = detail::read_u32_le(head.data() + 4);
    header_.channels = detail::read_u32_le(head.data() + 8);
    header_.height = detail::read_u32_le(head.data() + 12);
    header_.width = detail::read_u32_le(head.data() + 16);
    require(header_.frame_values() > 0, ErrorKind::format, name_ + ": zero tensor dimension");
    const auto size = std::filesystem::file_size(source);
    if (size != header_.file_bytes()) {
      fail(ErrorKind::truncation, name_ + ": file is " + std::to_string(size) +
                                      " bytes but header declares " +
                                      std::to_string(header_.file_bytes()));
    }
    buffer_.resize(header_.frame_values() * 4);
  }

  const ActivationHeader& header() const { return header_; }
  std::size_t count() const { return header_.count; }

  std::optional<ActivationFrame> next() {
    if (next_ >= header_.count) return std::nullopt;
    const std::size_t index = next_++;
    in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    const auto frame_offset = kUmk1HeaderBytes + index * buffer_.size();
    require(static_cast<bool>(in_), ErrorKind::truncation,
            name_ + ": truncated at byte offset " + std::to_string(frame_offset));
    ActivationFrame f{index, header_.channels, header_.height, header_.width,
                      std::vector<float>(header_.frame_values())};
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      f.values[i] = detail::read_f32_le(buffer_.data() + 4 * i);
      if (!std::isfinite(f.values[i])) {
        fail(ErrorKind::data, name_ + ": non-finite value at byte offset " +
                                  std::to_string(frame_offset + 4 * i));
      }
    }
    return f;
  }

 private:
  std::string name_;
  std::ifstream in_;
  ActivationHeader header_;
  std::vector<std::uint8_t> buffer_;
  std::size_t next_ = 0;
};

inline std::vector<ActivationFrame> load_activations(const std::filesystem::path& source) {
  ActivationReader reader(source);
  std::vector<ActivationFrame> frames;
  frames.reserve(reader.count());
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

inline void write_activations(const std::filesystem::path& path,
                              std::span<const ActivationFrame> frames) {
  require(!frames.empty(), ErrorKind::argument, "write_activations: no frames");
  const auto& first = frames.front();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::format, "cannot write " + path.string());
  out.write("UMK1", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(frames.size()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(first.channels));
  detail::write_u32_le(out, static_cast<std::uint32_t>(first.height));
  detail::write_u32_le(out, static_cast<std::uint32_t>(first.width));
  for (const auto& f : frames) {
    require(f.channels == first.channels && f.height == first.height && f.width == first.width,
            ErrorKind::argument, "write_activations: mixed tensor shapes");
    for (float v : f.values) detail::write_u32_le(out, std::bit_cast<std::uint32_t>(v));
  }
}

}  // namespace unmask

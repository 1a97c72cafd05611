#pragma once

// Dense optical flow fields, Middlebury .flo I/O, and mask transport.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/mask.hpp"

namespace stereo_traj {

inline constexpr float kFloMagic = 202021.25f;

/// Per-pixel displacement (u, v) from a source image to a target image.
struct FlowField {
  int source_frame = 0;
  Side source_side = Side::left;
  int target_frame = 0;
  Side target_side = Side::left;
  int width = 0;
  int height = 0;
  std::vector<float> uv;  // row-major, interleaved (u, v)

  FlowField() = default;
  FlowField(int w, int h) : width(w), height(h), uv(2 * std::size_t(w) * h, 0.0f) {}

  FlowField& between(int src_frame, Side src_side, int dst_frame, Side dst_side) {
    source_frame = src_frame;
    source_side = src_side;
    target_frame = dst_frame;
    target_side = dst_side;
    return *this;
  }

  float u(int x, int y) const { return uv[2 * (std::size_t(y) * width + x)]; }
  float v(int x, int y) const { return uv[2 * (std::size_t(y) * width + x) + 1]; }
  void set(int x, int y, float du, float dv) {
    const std::size_t i = 2 * (std::size_t(y) * width + x);
    uv[i] = du;
    uv[i + 1] = dv;
  }
};

namespace detail {

template <typename T>
void put_le(std::vector<char>& buf, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  static_assert(sizeof(T) == 4);
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                             (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace detail

/// Writes the Middlebury layout: float magic, int32 width, int32 height,
/// then interleaved float32 (u, v), all little-endian.
inline void write_flo(const FlowField& flow, const std::string& path) {
  std::vector<char> buf;
  buf.reserve(12 + 4 * flow.uv.size());
  detail::put_le(buf, kFloMagic);
  detail::put_le(buf, static_cast<std::int32_t>(flow.width));
  detail::put_le(buf, static_cast<std::int32_t>(flow.height));
  for (float f : flow.uv) detail::put_le(buf, f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

/// Frame/side metadata is not part of the file; callers attach it.
inline FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  unsigned char header[12];
  in.read(reinterpret_cast<char*>(header), 12);
  if (in.gcount() != 12) throw ParseError(path + ": truncated .flo header");
  if (detail::get_le<float>(header) != kFloMagic) {
    throw ParseError(path + ": bad .flo magic");
  }
  const auto w = detail::get_le<std::int32_t>(header + 4);
  const auto h = detail::get_le<std::int32_t>(header + 8);
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) {
    throw ParseError(path + ": invalid .flo dimensions");
  }
  FlowField flow(w, h);
  std::vector<unsigned char> raw(4 * flow.uv.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ParseError(path + ": truncated .flo data");
  }
  for (std::size_t i = 0; i < flow.uv.size(); ++i) {
    flow.uv[i] = detail::get_le<float>(raw.data() + 4 * i);
    if (!std::isfinite(flow.uv[i])) throw ParseError(path + ": non-finite flow value");
  }
  return flow;
}

/// Transports every set pixel (x, y) to round(x + u, y + v) in the target
/// image. Pixels leaving the image are dropped; collisions merge.
/// Throws EmptyPrediction when nothing lands inside the image.
inline InstanceMask warp_mask(const InstanceMask& mask, const FlowField& flow) {
  if (mask.width() != flow.width || mask.height() != flow.height) {
    throw DimensionMismatch("flow and mask dimensions differ");
  }
  if (mask.frame_index() != flow.source_frame || mask.side() != flow.source_side) {
    throw FrameOrderError("flow source (" + std::to_string(flow.source_frame) + "," +
                          to_string(flow.source_side) + ") does not match mask (" +
                          std::to_string(mask.frame_index()) + "," +
                          to_string(mask.side()) + ")");
  }
  InstanceMask out(flow.target_frame, flow.target_side, mask.width(), mask.height(),
                   mask.instance_label());
  mask.for_each_pixel([&](int x, int y) {
    const double tx = std::round(x + static_cast<double>(flow.u(x, y)));
    const double ty = std::round(y + static_cast<double>(flow.v(x, y)));
    if (tx >= 0.0 && ty >= 0.0 && tx < out.width() && ty < out.height()) {
      out.set(static_cast<int>(tx), static_cast<int>(ty));
    }
  });
  if (out.empty()) throw EmptyPrediction("all pixels left the image");
  return out;
}

}  // namespace stereo_traj

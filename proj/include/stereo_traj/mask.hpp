#pragma once

// Instance masks, label rasters and their PGM (P5) representation.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stereo_traj/errors.hpp"

namespace stereo_traj {

enum class Side { left, right };

inline const char* to_string(Side side) {
  return side == Side::left ? "left" : "right";
}

inline Side side_from_string(const std::string& s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw ParseError("unknown side '" + s + "'");
}

struct BoundingBox {
  int min_x = std::numeric_limits<int>::max();
  int min_y = std::numeric_limits<int>::max();
  int max_x = std::numeric_limits<int>::min();
  int max_y = std::numeric_limits<int>::min();

  bool empty() const { return max_x < min_x || max_y < min_y; }

  void expand(int x, int y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }

  BoundingBox united(const BoundingBox& o) const {
    BoundingBox b = *this;
    if (!o.empty()) {
      b.expand(o.min_x, o.min_y);
      b.expand(o.max_x, o.max_y);
    }
    return b;
  }

  BoundingBox intersected(const BoundingBox& o) const {
    return {std::max(min_x, o.min_x), std::max(min_y, o.min_y),
            std::min(max_x, o.max_x), std::min(max_y, o.max_y)};
  }
};

/// Binary pixel mask of one object instance in one image.
/// Area and bounding box are maintained incrementally.
class InstanceMask {
 public:
  InstanceMask() = default;
  InstanceMask(int frame_index, Side side, int width, int height,
               int instance_label)
      : frame_index_(frame_index),
        side_(side),
        width_(width),
        height_(height),
        label_(instance_label),
        pixels_(static_cast<std::size_t>(width) * height, 0) {
    if (width <= 0 || height <= 0) {
      throw DimensionMismatch("mask dimensions must be positive");
    }
  }

  int frame_index() const { return frame_index_; }
  Side side() const { return side_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int instance_label() const { return label_; }
  std::size_t area() const { return area_; }
  const BoundingBox& bbox() const { return bbox_; }
  bool empty() const { return area_ == 0; }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  bool at(int x, int y) const { return pixels_[index(x, y)] != 0; }

  void set(int x, int y) {
    auto& p = pixels_[index(x, y)];
    if (p == 0) {
      p = 1;
      ++area_;
      bbox_.expand(x, y);
    }
  }

  void relabel(int frame_index, Side side, int label) {
    frame_index_ = frame_index;
    side_ = side;
    label_ = label;
  }

  template <typename Fn>
  void for_each_pixel(Fn&& fn) const {
    if (empty()) return;
    for (int y = bbox_.min_y; y <= bbox_.max_y; ++y) {
      for (int x = bbox_.min_x; x <= bbox_.max_x; ++x) {
        if (pixels_[index(x, y)]) fn(x, y);
      }
    }
  }

  friend bool operator==(const InstanceMask& a, const InstanceMask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.pixels_ == b.pixels_;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int frame_index_ = 0;
  Side side_ = Side::left;
  int width_ = 0;
  int height_ = 0;
  int label_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::size_t area_ = 0;
  BoundingBox bbox_;
};

enum class OverlapMeasure { iou, intersection_over_prediction };

inline OverlapMeasure overlap_measure_from_string(const std::string& s) {
  if (s == "iou") return OverlapMeasure::iou;
  if (s == "iop" || s == "intersection_over_prediction") {
    return OverlapMeasure::intersection_over_prediction;
  }
  throw ParseError("unknown overlap measure '" + s + "'");
}

inline std::size_t intersection_area(const InstanceMask& a,
                                     const InstanceMask& b) {
  if (a.empty() || b.empty()) return 0;
  const BoundingBox box = a.bbox().intersected(b.bbox());
  std::size_t n = 0;
  for (int y = box.min_y; y <= box.max_y; ++y) {
    for (int x = box.min_x; x <= box.max_x; ++x) {
      n += static_cast<std::size_t>(a.at(x, y) && b.at(x, y));
    }
  }
  return n;
}

/// Overlap score in [0, 1]; IoU by default. An empty union scores 0.
inline double overlap(const InstanceMask& pred, const InstanceMask& det,
                      OverlapMeasure measure = OverlapMeasure::iou) {
  if (pred.width() != det.width() || pred.height() != det.height()) {
    throw DimensionMismatch("overlap of masks with different dimensions");
  }
  const auto inter = static_cast<double>(intersection_area(pred, det));
  if (measure == OverlapMeasure::intersection_over_prediction) {
    return pred.empty() ? 0.0 : inter / static_cast<double>(pred.area());
  }
  const double uni =
      static_cast<double>(pred.area() + det.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Per-pixel instance labels; 0 is unlabeled.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> labels;

  LabelImage() = default;
  LabelImage(int w, int h)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t& at(int x, int y) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint16_t at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

/// Splits a label raster into one mask per label, dropping instances smaller
/// than `min_area`. Output is sorted by label.
inline std::vector<InstanceMask> extract_instances(const LabelImage& image,
                                                   int frame_index, Side side,
                                                   std::size_t min_area) {
  std::map<int, InstanceMask> by_label;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int label = image.at(x, y);
      if (label == 0) continue;
      auto it = by_label.find(label);
      if (it == by_label.end()) {
        it = by_label
                 .emplace(label, InstanceMask(frame_index, side, image.width,
                                              image.height, label))
                 .first;
      }
      it->second.set(x, y);
    }
  }
  std::vector<InstanceMask> out;
  for (auto& [label, mask] : by_label) {
    if (mask.area() >= min_area) out.push_back(std::move(mask));
  }
  return out;
}

/// Paints masks in order; later masks overwrite earlier ones.
inline LabelImage compose_label_image(const std::vector<InstanceMask>& masks,
                                      int width, int height) {
  LabelImage image(width, height);
  for (const auto& m : masks) {
    if (m.width() != width || m.height() != height) {
      throw DimensionMismatch("mask does not match label image size");
    }
    m.for_each_pixel([&](int x, int y) {
      image.at(x, y) = static_cast<std::uint16_t>(m.instance_label());
    });
  }
  return image;
}

namespace detail {

inline int read_pgm_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then parses a decimal integer.
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  if (!(in >> value) || value < 0) {
    throw ParseError(path + ": malformed PGM header");
  }
  return value;
}

}  // namespace detail

inline LabelImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (!in || magic != "P5") throw ParseError(path + ": not a binary PGM (P5)");
  const int width = detail::read_pgm_int(in, path);
  const int height = detail::read_pgm_int(in, path);
  const int maxval = detail::read_pgm_int(in, path);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw ParseError(path + ": invalid PGM dimensions or maxval");
  }
  in.get();  // single whitespace before the raster
  LabelImage image(width, height);
  const std::size_t n = image.labels.size();
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
      throw ParseError(path + ": truncated PGM raster");
    }
    std::copy(buf.begin(), buf.end(), image.labels.begin());
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw ParseError(path + ": truncated PGM raster");
    }
    for (std::size_t i = 0; i < n; ++i) {
      image.labels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
  }
  return image;
}

inline void write_pgm(const LabelImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto max_label =
      image.labels.empty()
          ? 0
          : *std::max_element(image.labels.begin(), image.labels.end());
  const int maxval = max_label < 256 ? 255 : 65535;
  out << "P5\n" << image.width << ' ' << image.height << '\n' << maxval << '\n';
  if (maxval == 255) {
    std::vector<unsigned char> buf(image.labels.begin(), image.labels.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf;
    buf.reserve(2 * image.labels.size());
    for (auto v : image.labels) {
      buf.push_back(static_cast<unsigned char>(v >> 8));
      buf.push_back(static_cast<unsigned char>(v & 0xff));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace stereo_traj

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vision/views.hpp"

namespace vision {

/// Grayscale video held in memory.
struct Video {
  std::vector<Frame> frames;
  double fps = 25.0;

  std::size_t width() const { return frames.empty() ? 0 : frames.front().width(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height(); }
  std::size_t size() const { return frames.size(); }

  /// Throws ShapeError unless non-empty with equal frame dims and fps > 0.
  void validate() const;
};

Video make_video(std::vector<Plane> planes, double fps);

/// Two on-disk layouts:
///   - a directory of binary PGM (P5) or PPM (P6) images, read in file-name
///     order, with `meta.txt` holding `fps=<value>`;
///   - a raw file of concatenated 8-bit planar frames with a `<path>.txt`
///     sidecar holding `width=`, `height=`, `fps=` and optional `channels=`
///     (1 or 3; 3 means interleaved RGB per frame).
/// Read failures raise IngestionError naming the path.
Video load_video(const std::string& path);

/// Writes a PGM directory, or a raw file plus sidecar when `path` ends in
/// ".raw". Values are quantized to 8 bits.
void save_video(const Video& video, const std::string& path);

bool is_raw_video_path(const std::string& path);

}  // namespace vision

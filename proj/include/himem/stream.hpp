#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "himem/errors.hpp"
#include "himem/tensor.hpp"
#include "himem/transformer.hpp"

namespace himem {

// Window geometry for the two memory horizons, in seconds at a fixed frame
// rate. Token counts are derived, never stored, so the two extraction paths
// cannot drift apart.
struct StreamConfig {
  double fps = 4.0;
  double long_seconds = 64.0;
  double short_seconds = 5.0;
  std::size_t long_stride = 4;
  double anticipation_seconds = 2.0;

  void validate() const {
    if (!(fps > 0.0)) throw ValidationError("fps must be positive");
    if (!(long_seconds > 0.0) || !(short_seconds > 0.0)) {
      throw ValidationError("memory horizons must be positive");
    }
    if (short_seconds > long_seconds) {
      throw ValidationError("short horizon exceeds long horizon");
    }
    if (long_stride == 0) throw ValidationError("long stride must be >= 1");
    if (!(anticipation_seconds > 0.0)) {
      throw ValidationError("anticipation horizon must be positive");
    }
    check_integral(long_seconds * fps, "long horizon");
    check_integral(short_seconds * fps, "short horizon");
    check_integral(anticipation_seconds * fps, "anticipation horizon");
    if (long_frames() < long_stride) {
      throw ValidationError("long horizon shorter than one stride");
    }
    if (anticipation_steps() == 0) {
      throw ValidationError("anticipation horizon under one frame");
    }
  }

  std::size_t long_frames() const { return to_frames(long_seconds); }
  std::size_t short_frames() const { return to_frames(short_seconds); }
  std::size_t long_tokens() const { return long_frames() / long_stride; }
  std::size_t short_tokens() const { return short_frames(); }
  std::size_t anticipation_steps() const {
    return to_frames(anticipation_seconds);
  }

 private:
  std::size_t to_frames(double seconds) const {
    return static_cast<std::size_t>(std::llround(seconds * fps));
  }
  static void check_integral(double frames, const char* what) {
    if (std::abs(frames - std::llround(frames)) > 1e-9) {
      throw ValidationError(std::string(what) +
                            " does not land on a whole frame count");
    }
  }
};

// Fixed-size window onto a stream. Rows with mask 0 are zero padding on the
// old side; the newest visible frame is always the last valid row.
struct MemoryView {
  Tensor features;
  ValidityMask mask;

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

namespace detail {

inline void check_anchor(std::size_t anchor, std::size_t total) {
  if (anchor == 0 || anchor > total) {
    throw RangeError("anchor " + std::to_string(anchor) +
                     " outside [1, " + std::to_string(total) + "]");
  }
}

}  // namespace detail

// Strided long-horizon view over frames [T, D] with `anchor` frames visible.
// Keeps frame indices anchor-1-j*stride for j = 0..n_L-1 while nonnegative,
// newest last, left-padded with zeros.
inline MemoryView long_window(const Tensor& frames, std::size_t anchor,
                              const StreamConfig& cfg) {
  if (frames.rank() != 2) {
    throw ShapeError("long_window expects [frames, dim], got " +
                     shape_str(frames.shape()));
  }
  detail::check_anchor(anchor, frames.dim(0));
  const std::size_t n = cfg.long_tokens();
  const std::size_t dim = frames.dim(1);
  MemoryView view{Tensor::zeros({n, dim}), ValidityMask(n, 0)};
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t back = j * cfg.long_stride;
    if (back >= anchor) break;
    const std::size_t src = anchor - 1 - back;
    const std::size_t row = n - 1 - j;
    std::copy(frames.data().begin() + src * dim,
              frames.data().begin() + (src + 1) * dim,
              view.features.data().begin() + row * dim);
    view.mask[row] = 1;
  }
  return view;
}

// Verbatim short-horizon view: the last min(n_S, anchor) frames, newest last,
// left-padded with zeros.
inline MemoryView short_window(const Tensor& frames, std::size_t anchor,
                               const StreamConfig& cfg) {
  if (frames.rank() != 2) {
    throw ShapeError("short_window expects [frames, dim], got " +
                     shape_str(frames.shape()));
  }
  detail::check_anchor(anchor, frames.dim(0));
  const std::size_t n = cfg.short_tokens();
  const std::size_t dim = frames.dim(1);
  const std::size_t keep = std::min(n, anchor);
  MemoryView view{Tensor::zeros({n, dim}), ValidityMask(n, 0)};
  for (std::size_t k = 0; k < keep; ++k) {
    const std::size_t src = anchor - keep + k;
    const std::size_t row = n - keep + k;
    std::copy(frames.data().begin() + src * dim,
              frames.data().begin() + (src + 1) * dim,
              view.features.data().begin() + row * dim);
    view.mask[row] = 1;
  }
  return view;
}

// Online counterpart of the anchored window functions. Holds only the last
// long-horizon worth of frames in a ring; views taken after push(frame_t)
// match long_window/short_window at anchor t+1 bit for bit.
class StreamBuffer {
 public:
  StreamBuffer(const StreamConfig& cfg, std::size_t dim)
      : cfg_(cfg), dim_(dim), ring_(cfg.long_frames() * dim, 0.0) {
    cfg.validate();
    if (dim == 0) throw ValidationError("stream dim must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t frames_seen() const { return seen_; }

  void push(const std::vector<double>& frame) {
    if (frame.size() != dim_) {
      throw StreamError("frame has " + std::to_string(frame.size()) +
                        " features, stream expects " + std::to_string(dim_));
    }
    const std::size_t slot = seen_ % capacity();
    std::copy(frame.begin(), frame.end(), ring_.begin() + slot * dim_);
    ++seen_;
  }

  MemoryView long_view() const {
    require_frames();
    const std::size_t n = cfg_.long_tokens();
    MemoryView view{Tensor::zeros({n, dim_}), ValidityMask(n, 0)};
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t back = j * cfg_.long_stride;
      if (back >= seen_) break;
      copy_frame(seen_ - 1 - back, view, n - 1 - j);
    }
    return view;
  }

  MemoryView short_view() const {
    require_frames();
    const std::size_t n = cfg_.short_tokens();
    const std::size_t keep = std::min(n, seen_);
    MemoryView view{Tensor::zeros({n, dim_}), ValidityMask(n, 0)};
    for (std::size_t k = 0; k < keep; ++k) {
      copy_frame(seen_ - keep + k, view, n - keep + k);
    }
    return view;
  }

 private:
  std::size_t capacity() const { return ring_.size() / dim_; }

  void require_frames() const {
    if (seen_ == 0) throw StreamError("no frames pushed yet");
  }

  void copy_frame(std::size_t global, MemoryView& view,
                  std::size_t row) const {
    const std::size_t slot = global % capacity();
    std::copy(ring_.begin() + slot * dim_, ring_.begin() + (slot + 1) * dim_,
              view.features.data().begin() + row * dim_);
    view.mask[row] = 1;
  }

  StreamConfig cfg_;
  std::size_t dim_;
  std::vector<double> ring_;
  std::size_t seen_ = 0;
};

}  // namespace himem

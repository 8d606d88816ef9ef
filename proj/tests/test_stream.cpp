#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "himem/rng.hpp"
#include "himem/stream.hpp"

namespace {

using himem::MemoryView;
using himem::Rng;
using himem::StreamBuffer;
using himem::StreamConfig;
using himem::Tensor;

Tensor indexed_frames(std::size_t total, std::size_t dim) {
  Tensor frames = Tensor::zeros({total, dim});
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      frames.data()[i * dim + d] =
          static_cast<double>(i) * 1000.0 + static_cast<double>(d);
    }
  }
  return frames;
}

StreamConfig frame_config(double long_frames, double short_frames,
                          std::size_t stride) {
  StreamConfig cfg;
  cfg.fps = 1.0;
  cfg.long_seconds = long_frames;
  cfg.short_seconds = short_frames;
  cfg.long_stride = stride;
  cfg.anticipation_seconds = 1.0;
  return cfg;
}

TEST(StreamConfig, DefaultTokenMath) {
  StreamConfig cfg;
  cfg.validate();
  EXPECT_EQ(cfg.long_frames(), 256u);
  EXPECT_EQ(cfg.short_frames(), 20u);
  EXPECT_EQ(cfg.long_tokens(), 64u);
  EXPECT_EQ(cfg.short_tokens(), 20u);
  EXPECT_EQ(cfg.anticipation_steps(), 8u);
}

TEST(StreamConfig, RejectsBadGeometry) {
  StreamConfig cfg;
  cfg.short_seconds = 128.0;
  EXPECT_THROW(cfg.validate(), himem::ValidationError);

  cfg = StreamConfig{};
  cfg.long_stride = 0;
  EXPECT_THROW(cfg.validate(), himem::ValidationError);

  cfg = StreamConfig{};
  cfg.long_seconds = 1.3;
  EXPECT_THROW(cfg.validate(), himem::ValidationError);

  cfg = frame_config(2, 1, 4);
  EXPECT_THROW(cfg.validate(), himem::ValidationError);

  cfg = StreamConfig{};
  cfg.fps = 0.0;
  EXPECT_THROW(cfg.validate(), himem::ValidationError);

  cfg = StreamConfig{};
  cfg.short_seconds = -1.0;
  EXPECT_THROW(cfg.validate(), himem::ValidationError);
}

TEST(LongWindow, MatchesBruteForceOracle) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t total = 1 + rng.uniform_index(120);
    const std::size_t stride = 1 + rng.uniform_index(16);
    const std::size_t long_frames =
        stride * (1 + rng.uniform_index(96 / stride));
    StreamConfig cfg = frame_config(static_cast<double>(long_frames),
                                    1.0, stride);
    cfg.validate();
    const std::size_t anchor = 1 + rng.uniform_index(total);
    const std::size_t dim = 2;
    Tensor frames = indexed_frames(total, dim);

    MemoryView view = himem::long_window(frames, anchor, cfg);
    const std::size_t n = cfg.long_tokens();
    ASSERT_EQ(view.features.dim(0), n);
    ASSERT_EQ(view.mask.size(), n);

    std::vector<int> expected_src(n, -1);
    for (std::size_t i = 0; i < anchor; ++i) {
      const std::size_t back = anchor - 1 - i;
      if (back % stride != 0) continue;
      const std::size_t j = back / stride;
      if (j >= n) continue;
      expected_src[n - 1 - j] = static_cast<int>(i);
    }

    for (std::size_t row = 0; row < n; ++row) {
      if (expected_src[row] < 0) {
        EXPECT_EQ(view.mask[row], 0);
        for (std::size_t d = 0; d < dim; ++d) {
          EXPECT_DOUBLE_EQ(view.features.data()[row * dim + d], 0.0);
        }
      } else {
        EXPECT_EQ(view.mask[row], 1);
        for (std::size_t d = 0; d < dim; ++d) {
          EXPECT_DOUBLE_EQ(view.features.data()[row * dim + d],
                           frames.data()[expected_src[row] * dim + d]);
        }
      }
    }
  }
}

TEST(LongWindow, ValidCountFormula) {
  for (std::size_t stride : {1u, 4u, 8u, 16u}) {
    StreamConfig cfg = frame_config(64, 1, stride);
    cfg.validate();
    Tensor frames = indexed_frames(10, 1);
    MemoryView view = himem::long_window(frames, 10, cfg);
    const std::size_t expect =
        std::min(cfg.long_tokens(),
                 static_cast<std::size_t>((10 - 1) / stride + 1));
    EXPECT_EQ(view.valid_count(), expect);
    EXPECT_EQ(view.valid_count(), (10 + stride - 1) / stride);
  }
}

TEST(ShortWindow, VerbatimTail) {
  StreamConfig cfg = frame_config(16, 4, 2);
  cfg.validate();
  Tensor frames = indexed_frames(12, 3);
  MemoryView view = himem::short_window(frames, 9, cfg);
  ASSERT_EQ(view.features.dim(0), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(view.mask[k], 1);
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_DOUBLE_EQ(view.features.data()[k * 3 + d],
                       frames.data()[(5 + k) * 3 + d]);
    }
  }
}

TEST(ShortWindow, ConsecutiveAnchorsOverlap) {
  StreamConfig cfg = frame_config(32, 6, 1);
  cfg.validate();
  Tensor frames = indexed_frames(40, 2);
  for (std::size_t anchor = 6; anchor < 40; ++anchor) {
    MemoryView a = himem::short_window(frames, anchor, cfg);
    MemoryView b = himem::short_window(frames, anchor + 1, cfg);
    for (std::size_t row = 1; row < 6; ++row) {
      for (std::size_t d = 0; d < 2; ++d) {
        EXPECT_DOUBLE_EQ(a.features.data()[row * 2 + d],
                         b.features.data()[(row - 1) * 2 + d]);
      }
    }
  }
}

TEST(Windows, NewestFrameAlwaysLastRow) {
  Rng rng(102);
  StreamConfig cfg = frame_config(24, 5, 3);
  cfg.validate();
  Tensor frames = indexed_frames(60, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t anchor = 1 + rng.uniform_index(60);
    for (const MemoryView& view : {himem::long_window(frames, anchor, cfg),
                                   himem::short_window(frames, anchor, cfg)}) {
      const std::size_t last = view.features.dim(0) - 1;
      EXPECT_EQ(view.mask[last], 1);
      for (std::size_t d = 0; d < 2; ++d) {
        EXPECT_DOUBLE_EQ(view.features.data()[last * 2 + d],
                         frames.data()[(anchor - 1) * 2 + d]);
      }
    }
  }
}

TEST(Windows, EarliestAnchorLeavesZeroPadding) {
  StreamConfig cfg = frame_config(12, 4, 2);
  cfg.validate();
  Tensor frames = indexed_frames(8, 2);
  for (auto& view : {himem::long_window(frames, 1, cfg),
                     himem::short_window(frames, 1, cfg)}) {
    EXPECT_EQ(view.valid_count(), 1u);
    const std::size_t n = view.features.dim(0);
    for (std::size_t row = 0; row + 1 < n; ++row) {
      EXPECT_EQ(view.mask[row], 0);
      EXPECT_DOUBLE_EQ(view.features.data()[row * 2], 0.0);
      EXPECT_DOUBLE_EQ(view.features.data()[row * 2 + 1], 0.0);
    }
  }
}

TEST(Windows, RejectsAnchorOutOfRange) {
  StreamConfig cfg = frame_config(8, 2, 2);
  cfg.validate();
  Tensor frames = indexed_frames(5, 1);
  EXPECT_THROW(himem::long_window(frames, 0, cfg), himem::RangeError);
  EXPECT_THROW(himem::long_window(frames, 6, cfg), himem::RangeError);
  EXPECT_THROW(himem::short_window(frames, 0, cfg), himem::RangeError);
  EXPECT_THROW(himem::short_window(frames, 6, cfg), himem::RangeError);
}

TEST(StreamBuffer, MatchesAnchoredWindowsBitwise) {
  StreamConfig cfg = frame_config(32, 5, 4);
  cfg.anticipation_seconds = 2.0;
  cfg.validate();
  const std::size_t total = 300;
  const std::size_t dim = 3;
  Rng rng(103);
  Tensor frames = Tensor::uniform({total, dim}, -5, 5, rng);

  StreamBuffer buffer(cfg, dim);
  for (std::size_t t = 0; t < total; ++t) {
    std::vector<double> row(frames.data().begin() + t * dim,
                            frames.data().begin() + (t + 1) * dim);
    buffer.push(row);

    MemoryView stream_long = buffer.long_view();
    MemoryView batch_long = himem::long_window(frames, t + 1, cfg);
    ASSERT_EQ(stream_long.mask, batch_long.mask);
    ASSERT_EQ(0, std::memcmp(stream_long.features.data().data(),
                             batch_long.features.data().data(),
                             batch_long.features.numel() * sizeof(double)));

    MemoryView stream_short = buffer.short_view();
    MemoryView batch_short = himem::short_window(frames, t + 1, cfg);
    ASSERT_EQ(stream_short.mask, batch_short.mask);
    ASSERT_EQ(0, std::memcmp(stream_short.features.data().data(),
                             batch_short.features.data().data(),
                             batch_short.features.numel() * sizeof(double)));
  }
  EXPECT_EQ(buffer.frames_seen(), total);
}

TEST(StreamBuffer, RejectsMisuse) {
  StreamConfig cfg = frame_config(8, 2, 2);
  StreamBuffer buffer(cfg, 3);
  EXPECT_THROW(buffer.long_view(), himem::StreamError);
  EXPECT_THROW(buffer.short_view(), himem::StreamError);
  EXPECT_THROW(buffer.push({1.0, 2.0}), himem::StreamError);
  EXPECT_THROW(StreamBuffer(cfg, 0), himem::ValidationError);
}

}  // namespace

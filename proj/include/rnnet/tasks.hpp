#pragma once

#include <cstdint>

#include "rnnet/events.hpp"
#include "rnnet/training.hpp"

namespace rnnet {

// Two-class moving-bar task: label 0 = leftward sweep, label 1 = rightward.
struct BarTaskSpec {
    Geometry geometry{64, 64};
    uint64_t clip_us = 1'000'000;
    double speed_px_per_s = 80.0;
    double event_rate = 1.0;
    uint64_t seed = 1;
};

Dataset make_bar_dataset(const BarTaskSpec& spec, size_t count);

// Long-memory task: the class is decided by a spike burst confined to the
// first `burst_end_us` of the clip (left or right half of the sensor),
// followed by class-independent distractor activity on every pixel. Only
// an encoder that retains more than the last spike can separate the
// classes at a read taken long after the burst.
struct LongMemTaskSpec {
    Geometry geometry{16, 16};
    uint64_t clip_us = 1'000'000;
    uint64_t burst_end_us = 100'000;
    size_t burst_spikes_per_pixel = 6;
    uint64_t seed = 1;
};

Dataset make_longmem_dataset(const LongMemTaskSpec& spec, size_t count);

}  // namespace rnnet

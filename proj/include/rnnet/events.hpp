#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rnnet/errors.hpp"

namespace rnnet {

// One sensor spike. Timestamps are integer microseconds; there is no
// floating-point time anywhere in ingestion.
struct Event {
    uint64_t t = 0;  // microseconds
    uint16_t x = 0;  // column
    uint16_t y = 0;  // row
    uint8_t p = 0;   // polarity, 0 or 1

    friend bool operator==(const Event&, const Event&) = default;
};

struct Geometry {
    uint32_t width = 0;
    uint32_t height = 0;

    friend bool operator==(const Geometry&, const Geometry&) = default;
};

// Time-ordered event sequence with fixed sensor geometry.
// Events are sorted by t, ties broken by (y, x, p) ascending, and every
// event satisfies t <= duration_us and in-bounds coordinates.
struct EventStream {
    Geometry geometry;
    uint64_t duration_us = 0;
    std::vector<Event> events;

    void validate() const;     // throws FormatError on invariant violation
    void sort_events();        // canonical (t, y, x, p) order

    friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct CropSize {
    uint32_t width = 0;
    uint32_t height = 0;
};

struct AugmentSpec {
    std::optional<CropSize> center_crop;
    std::optional<CropSize> random_crop;
    double hflip_prob = 0.0;
    // Applied to retrieved reservoir states downstream, not to raw events.
    double noise_sigma = 0.0;
    uint64_t seed = 0;
};

enum class AugmentMode { Train, Test };

enum class BarDirection { Left, Right, Up, Down };

struct BarSpec {
    Geometry geometry;
    BarDirection direction = BarDirection::Right;
    double speed_px_per_s = 64.0;
    uint64_t duration_us = 1'000'000;
    double event_rate = 1.0;  // events per crossed pixel
    uint64_t seed = 0;
    uint32_t bar_width = 0;   // 0 = default (extent/8, at least 1)
};

// CSV format: header `# <width>,<height>,<duration_us>`, then `t,x,y,p` lines.
EventStream parse_csv(std::istream& in);
EventStream parse_csv_file(const std::string& path);
void write_csv(const EventStream& stream, std::ostream& out);

// Binary format: magic "RNEV", u32 version=1, u32 width, u32 height,
// u64 duration_us, u64 count, then (u64 t, u16 x, u16 y, u8 p, u8 pad)
// records, all little-endian.
EventStream parse_binary(std::istream& in);
EventStream parse_binary_file(const std::string& path);
void write_binary(const EventStream& stream, std::ostream& out);
void write_binary_file(const EventStream& stream, const std::string& path);

// Bright bar sweeping across the sensor: polarity-1 events at the leading
// edge, polarity-0 at the trailing edge. Deterministic given spec.seed.
EventStream synthesize_moving_bar(const BarSpec& spec);

// Clips events at t >= target_us and sets duration to target_us; padding a
// short clip adds no events (null input).
EventStream regularize_length(const EventStream& stream, uint64_t target_us);

// Train mode: center crop -> random crop -> probabilistic hflip.
// Test mode: center crop directly to the final size.
EventStream augment(const EventStream& stream, const AugmentSpec& spec, AugmentMode mode);

}  // namespace rnnet

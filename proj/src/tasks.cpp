#include "rnnet/tasks.hpp"

#include <random>

namespace rnnet {

Dataset make_bar_dataset(const BarTaskSpec& spec, size_t count) {
    Dataset ds;
    ds.num_classes = 2;
    std::mt19937_64 rng(spec.seed);
    for (size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % 2);
        BarSpec bar;
        bar.geometry = spec.geometry;
        bar.direction = label == 0 ? BarDirection::Left : BarDirection::Right;
        // Small per-sample speed jitter so clips are not carbon copies.
        bar.speed_px_per_s =
            spec.speed_px_per_s * std::uniform_real_distribution<double>(0.85, 1.15)(rng);
        bar.duration_us = spec.clip_us;
        bar.event_rate = spec.event_rate;
        bar.seed = rng();
        ds.streams.push_back(synthesize_moving_bar(bar));
        ds.labels.push_back(label);
    }
    return ds;
}

Dataset make_longmem_dataset(const LongMemTaskSpec& spec, size_t count) {
    Dataset ds;
    ds.num_classes = 2;
    std::mt19937_64 rng(spec.seed);
    const uint32_t w = spec.geometry.width;
    const uint32_t h = spec.geometry.height;
    const uint32_t half = w / 2;

    for (size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % 2);
        EventStream stream;
        stream.geometry = spec.geometry;
        stream.duration_us = spec.clip_us;

        // Early class-specific burst on one half of the sensor.
        const uint32_t x0 = label == 0 ? 0 : half;
        for (uint32_t y = 0; y < h; ++y) {
            for (uint32_t x = x0; x < x0 + half; ++x) {
                for (size_t s = 0; s < spec.burst_spikes_per_pixel; ++s) {
                    uint64_t t =
                        std::uniform_int_distribution<uint64_t>(0, spec.burst_end_us - 1)(rng);
                    stream.events.push_back(Event{t, static_cast<uint16_t>(x),
                                                  static_cast<uint16_t>(y), 1});
                }
            }
        }
        // Late distractor sweeps touch every pixel identically for both
        // classes, overwriting any last-spike record of the burst.
        const uint64_t sweep_times[] = {spec.clip_us / 2, spec.clip_us * 17 / 20};
        for (uint64_t base : sweep_times) {
            for (uint32_t y = 0; y < h; ++y) {
                for (uint32_t x = 0; x < w; ++x) {
                    uint64_t jitter = std::uniform_int_distribution<uint64_t>(0, 4999)(rng);
                    stream.events.push_back(Event{base + jitter, static_cast<uint16_t>(x),
                                                  static_cast<uint16_t>(y), 1});
                }
            }
        }
        stream.sort_events();
        stream.validate();
        ds.streams.push_back(std::move(stream));
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace rnnet

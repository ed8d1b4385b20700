#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "rnnet/events.hpp"

using namespace rnnet;

namespace {

EventStream make_stream(uint32_t w, uint32_t h, uint64_t dur, std::vector<Event> events) {
    EventStream s;
    s.geometry = {w, h};
    s.duration_us = dur;
    s.events = std::move(events);
    return s;
}

}  // namespace

TEST_CASE("csv round trip preserves the stream") {
    auto stream = make_stream(8, 4, 1'000,
                              {{10, 1, 2, 1}, {10, 1, 2, 0}, {500, 7, 3, 0}, {999, 0, 0, 1}});
    stream.sort_events();
    std::stringstream buf;
    write_csv(stream, buf);
    CHECK(parse_csv(buf) == stream);
}

TEST_CASE("csv parser reports the offending line") {
    std::stringstream missing("10,1,2,1\n");
    CHECK_THROWS_WITH_AS(parse_csv(missing),
                         doctest::Contains("line 1"), FormatError);

    std::stringstream badfield("# 8,4,1000\n10,1,two,1\n");
    CHECK_THROWS_WITH_AS(parse_csv(badfield), doctest::Contains("line 2"), FormatError);

    std::stringstream oob("# 8,4,1000\n10,9,0,1\n");
    CHECK_THROWS_WITH_AS(parse_csv(oob), doctest::Contains("line 2"), FormatError);

    std::stringstream badpol("# 8,4,1000\n10,1,1,3\n");
    CHECK_THROWS_AS(parse_csv(badpol), FormatError);

    std::stringstream empty("");
    CHECK_THROWS_WITH_AS(parse_csv(empty), doctest::Contains("header"), FormatError);
}

TEST_CASE("csv parser sorts unordered rows") {
    std::stringstream buf("# 8,8,1000\n500,1,1,0\n10,2,2,1\n");
    auto stream = parse_csv(buf);
    REQUIRE(stream.events.size() == 2);
    CHECK(stream.events[0].t == 10);
}

TEST_CASE("binary round trip is bit exact") {
    auto stream = make_stream(640, 480, 2'000'000,
                              {{0, 0, 0, 0}, {1'999'999, 639, 479, 1}, {77, 320, 240, 1}});
    stream.sort_events();
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_binary(stream, buf);
    CHECK(parse_binary(buf) == stream);
}

TEST_CASE("binary parser rejects corruption") {
    std::stringstream badmagic("EVNT0000000000000000");
    CHECK_THROWS_AS(parse_binary(badmagic), FormatError);

    auto stream = make_stream(4, 4, 100, {{1, 1, 1, 1}});
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_binary(stream, buf);
    std::string bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3),
                                std::ios::in | std::ios::binary);
    CHECK_THROWS_AS(parse_binary(truncated), FormatError);
}

TEST_CASE("validate rejects invariant violations") {
    CHECK_THROWS_AS(make_stream(4, 4, 100, {{1, 5, 0, 1}}).validate(), FormatError);
    CHECK_THROWS_AS(make_stream(4, 4, 100, {{1, 0, 0, 2}}).validate(), FormatError);
    CHECK_THROWS_AS(make_stream(4, 4, 100, {{101, 0, 0, 1}}).validate(), FormatError);
    CHECK_THROWS_AS(make_stream(4, 4, 100, {{50, 0, 0, 1}, {10, 0, 0, 1}}).validate(),
                    FormatError);
    CHECK_NOTHROW(make_stream(4, 4, 100, {{10, 0, 0, 1}, {50, 0, 0, 1}}).validate());
}

TEST_CASE("sort_events breaks time ties by (y, x, p)") {
    auto stream = make_stream(4, 4, 100,
                              {{10, 3, 1, 1}, {10, 0, 2, 0}, {10, 3, 1, 0}, {5, 2, 2, 1}});
    stream.sort_events();
    CHECK(stream.events[0].t == 5);
    CHECK(stream.events[1].y == 1);
    CHECK(stream.events[1].p == 0);
    CHECK(stream.events[2].p == 1);
    CHECK(stream.events[3].y == 2);
}

TEST_CASE("moving bar synthesis is deterministic and direction sensitive") {
    BarSpec spec;
    spec.geometry = {32, 32};
    spec.direction = BarDirection::Right;
    spec.speed_px_per_s = 64;
    spec.duration_us = 500'000;
    spec.seed = 5;

    auto a = synthesize_moving_bar(spec);
    auto b = synthesize_moving_bar(spec);
    CHECK(a == b);
    CHECK_FALSE(a.events.empty());
    CHECK_NOTHROW(a.validate());

    spec.direction = BarDirection::Left;
    auto c = synthesize_moving_bar(spec);
    CHECK(a.events != c.events);
}

TEST_CASE("vertical bars sweep along y") {
    BarSpec spec;
    spec.geometry = {16, 16};
    spec.direction = BarDirection::Down;
    spec.speed_px_per_s = 64;
    spec.duration_us = 200'000;
    auto stream = synthesize_moving_bar(spec);
    // Early leading-edge events cluster at small y.
    uint64_t cutoff = 40'000;
    for (const Event& e : stream.events) {
        if (e.t < cutoff && e.p == 1) CHECK(e.y <= 4);
    }
}

TEST_CASE("event count grows with event rate") {
    BarSpec spec;
    spec.geometry = {32, 32};
    spec.duration_us = 500'000;
    spec.speed_px_per_s = 64;
    spec.event_rate = 1.0;
    auto one = synthesize_moving_bar(spec);
    spec.event_rate = 3.0;
    auto three = synthesize_moving_bar(spec);
    CHECK(three.events.size() == 3 * one.events.size());
}

TEST_CASE("bar synthesis validates its spec") {
    BarSpec spec;
    spec.geometry = {16, 16};
    spec.speed_px_per_s = 0;
    CHECK_THROWS_AS(synthesize_moving_bar(spec), ConfigError);
    spec.speed_px_per_s = 64;
    spec.duration_us = 0;
    CHECK_THROWS_AS(synthesize_moving_bar(spec), ConfigError);
    spec.duration_us = 1000;
    spec.bar_width = 99;
    CHECK_THROWS_AS(synthesize_moving_bar(spec), ConfigError);
}

TEST_CASE("regularize_length clips long streams and pads short ones with nothing") {
    auto stream = make_stream(4, 4, 2'000'000,
                              {{100, 0, 0, 1}, {1'499'999, 1, 1, 1}, {1'500'000, 2, 2, 1},
                               {1'900'000, 3, 3, 0}});
    auto clipped = regularize_length(stream, 1'500'000);
    CHECK(clipped.duration_us == 1'500'000);
    REQUIRE(clipped.events.size() == 2);
    CHECK(clipped.events.back().t == 1'499'999);

    auto padded = regularize_length(make_stream(4, 4, 1'000, {{10, 0, 0, 1}}), 5'000);
    CHECK(padded.duration_us == 5'000);
    CHECK(padded.events.size() == 1);

    CHECK_THROWS_AS(regularize_length(stream, 0), ConfigError);
}

TEST_CASE("train augmentation chains center crop, random crop, and hflip") {
    EventStream stream = make_stream(128, 128, 1'000, {});
    for (uint16_t i = 0; i < 128; i += 4) stream.events.push_back({10, i, i, 1});
    stream.sort_events();

    AugmentSpec spec;
    spec.center_crop = CropSize{96, 96};
    spec.random_crop = CropSize{76, 76};
    spec.seed = 3;
    auto out = augment(stream, spec, AugmentMode::Train);
    CHECK(out.geometry == Geometry{76, 76});
    CHECK_NOTHROW(out.validate());
    CHECK(out == augment(stream, spec, AugmentMode::Train));  // deterministic

    // Test mode crops straight to the final size.
    auto test_out = augment(stream, spec, AugmentMode::Test);
    CHECK(test_out.geometry == Geometry{76, 76});
}

TEST_CASE("hflip with probability 1 mirrors x") {
    auto stream = make_stream(8, 8, 100, {{10, 1, 4, 1}});
    AugmentSpec spec;
    spec.hflip_prob = 1.0;
    auto out = augment(stream, spec, AugmentMode::Train);
    REQUIRE(out.events.size() == 1);
    CHECK(out.events[0].x == 6);
    CHECK(out.events[0].y == 4);
}

TEST_CASE("augment validates its spec") {
    auto stream = make_stream(8, 8, 100, {});
    AugmentSpec spec;
    spec.hflip_prob = 1.5;
    CHECK_THROWS_AS(augment(stream, spec, AugmentMode::Train), ConfigError);
    spec.hflip_prob = 0.0;
    spec.center_crop = CropSize{16, 16};
    CHECK_THROWS_AS(augment(stream, spec, AugmentMode::Train), ConfigError);
}

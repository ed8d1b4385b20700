#include "rnnet/events.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <tuple>

namespace rnnet {

namespace {

bool event_order(const Event& a, const Event& b) {
    return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
}

uint64_t parse_u64_field(std::string_view field, size_t line_no, const char* what) {
    uint64_t value = 0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || field.empty()) {
        throw FormatError("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                          std::string(field) + "'");
    }
    return value;
}

std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

template <typename T>
void put_le(std::ostream& out, T v) {
    std::array<unsigned char, sizeof(T)> buf;
    for (size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(T)> buf;
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw FormatError(std::string("truncated record while reading ") + what);
    }
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(buf[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void EventStream::sort_events() {
    std::stable_sort(events.begin(), events.end(), event_order);
}

void EventStream::validate() const {
    for (size_t i = 0; i < events.size(); ++i) {
        const Event& e = events[i];
        if (e.x >= geometry.width || e.y >= geometry.height) {
            throw FormatError("event " + std::to_string(i) + " out of bounds: (" +
                              std::to_string(e.x) + "," + std::to_string(e.y) + ") in " +
                              std::to_string(geometry.width) + "x" + std::to_string(geometry.height));
        }
        if (e.p > 1) {
            throw FormatError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
        }
        if (e.t > duration_us) {
            throw FormatError("event " + std::to_string(i) + " at t=" + std::to_string(e.t) +
                              " exceeds duration " + std::to_string(duration_us));
        }
        if (i > 0 && event_order(e, events[i - 1])) {
            throw FormatError("events not sorted at index " + std::to_string(i));
        }
    }
}

EventStream parse_csv(std::istream& in) {
    EventStream stream;
    std::string line;
    size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = trim(line);
        if (sv.empty()) {
            continue;
        }
        if (!have_header) {
            if (sv.front() != '#') {
                throw FormatError("line " + std::to_string(line_no) +
                                  ": expected header '# width,height,duration_us'");
            }
            sv.remove_prefix(1);
            auto fields = split_commas(trim(sv));
            if (fields.size() != 3) {
                throw FormatError("line " + std::to_string(line_no) + ": header needs 3 fields");
            }
            stream.geometry.width = static_cast<uint32_t>(parse_u64_field(trim(fields[0]), line_no, "width"));
            stream.geometry.height = static_cast<uint32_t>(parse_u64_field(trim(fields[1]), line_no, "height"));
            stream.duration_us = parse_u64_field(trim(fields[2]), line_no, "duration");
            have_header = true;
            continue;
        }
        auto fields = split_commas(sv);
        if (fields.size() != 4) {
            throw FormatError("line " + std::to_string(line_no) + ": expected 't,x,y,p'");
        }
        Event e;
        e.t = parse_u64_field(trim(fields[0]), line_no, "t");
        uint64_t x = parse_u64_field(trim(fields[1]), line_no, "x");
        uint64_t y = parse_u64_field(trim(fields[2]), line_no, "y");
        uint64_t p = parse_u64_field(trim(fields[3]), line_no, "p");
        if (x >= stream.geometry.width || y >= stream.geometry.height) {
            throw FormatError("line " + std::to_string(line_no) + ": coordinate (" +
                              std::to_string(x) + "," + std::to_string(y) + ") out of bounds");
        }
        if (p > 1) {
            throw FormatError("line " + std::to_string(line_no) + ": polarity must be 0 or 1");
        }
        e.x = static_cast<uint16_t>(x);
        e.y = static_cast<uint16_t>(y);
        e.p = static_cast<uint8_t>(p);
        stream.events.push_back(e);
    }
    if (!have_header) {
        throw FormatError("missing header line");
    }
    stream.sort_events();
    stream.validate();
    return stream;
}

EventStream parse_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return parse_csv(in);
}

void write_csv(const EventStream& stream, std::ostream& out) {
    out << "# " << stream.geometry.width << ',' << stream.geometry.height << ','
        << stream.duration_us << '\n';
    for (const Event& e : stream.events) {
        out << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
    }
}

void write_binary(const EventStream& stream, std::ostream& out) {
    out.write("RNEV", 4);
    put_le<uint32_t>(out, 1);
    put_le<uint32_t>(out, stream.geometry.width);
    put_le<uint32_t>(out, stream.geometry.height);
    put_le<uint64_t>(out, stream.duration_us);
    put_le<uint64_t>(out, stream.events.size());
    for (const Event& e : stream.events) {
        put_le<uint64_t>(out, e.t);
        put_le<uint16_t>(out, e.x);
        put_le<uint16_t>(out, e.y);
        put_le<uint8_t>(out, e.p);
        put_le<uint8_t>(out, 0);  // pad
    }
}

void write_binary_file(const EventStream& stream, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    write_binary(stream, out);
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

EventStream parse_binary(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RNEV", 4) != 0) {
        throw FormatError("bad magic, expected RNEV");
    }
    uint32_t version = get_le<uint32_t>(in, "version");
    if (version != 1) {
        throw FormatError("unsupported RNEV version " + std::to_string(version));
    }
    EventStream stream;
    stream.geometry.width = get_le<uint32_t>(in, "width");
    stream.geometry.height = get_le<uint32_t>(in, "height");
    stream.duration_us = get_le<uint64_t>(in, "duration");
    uint64_t count = get_le<uint64_t>(in, "count");
    stream.events.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        Event e;
        e.t = get_le<uint64_t>(in, "event t");
        e.x = get_le<uint16_t>(in, "event x");
        e.y = get_le<uint16_t>(in, "event y");
        e.p = get_le<uint8_t>(in, "event p");
        get_le<uint8_t>(in, "event pad");
        stream.events.push_back(e);
    }
    stream.sort_events();
    stream.validate();
    return stream;
}

EventStream parse_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return parse_binary(in);
}

EventStream synthesize_moving_bar(const BarSpec& spec) {
    if (spec.speed_px_per_s <= 0) {
        throw ConfigError("bar speed must be > 0");
    }
    if (spec.duration_us == 0) {
        throw ConfigError("bar duration must be > 0");
    }
    if (spec.geometry.width == 0 || spec.geometry.height == 0) {
        throw ConfigError("bar geometry must be nonzero");
    }
    const bool horizontal =
        spec.direction == BarDirection::Left || spec.direction == BarDirection::Right;
    const uint32_t travel = horizontal ? spec.geometry.width : spec.geometry.height;
    const uint32_t lanes = horizontal ? spec.geometry.height : spec.geometry.width;
    uint32_t bar_width = spec.bar_width;
    if (bar_width == 0) {
        bar_width = std::max<uint32_t>(1, travel / 8);
    }
    if (bar_width > travel) {
        throw ConfigError("bar wider than geometry along motion axis");
    }

    std::mt19937_64 rng(spec.seed);
    const int count_per_pixel = std::max(1, static_cast<int>(std::llround(spec.event_rate)));
    // Time for the leading edge to advance one pixel.
    const double step_us = 1e6 / spec.speed_px_per_s;

    EventStream stream;
    stream.geometry = spec.geometry;
    stream.duration_us = spec.duration_us;

    auto emit = [&](double base_t, uint32_t pos, uint8_t polarity) {
        // Map the sweep coordinate back to (x, y) for the chosen direction.
        for (uint32_t lane = 0; lane < lanes; ++lane) {
            uint16_t x, y;
            switch (spec.direction) {
                case BarDirection::Right:
                    x = static_cast<uint16_t>(pos);
                    y = static_cast<uint16_t>(lane);
                    break;
                case BarDirection::Left:
                    x = static_cast<uint16_t>(travel - 1 - pos);
                    y = static_cast<uint16_t>(lane);
                    break;
                case BarDirection::Down:
                    x = static_cast<uint16_t>(lane);
                    y = static_cast<uint16_t>(pos);
                    break;
                case BarDirection::Up:
                default:
                    x = static_cast<uint16_t>(lane);
                    y = static_cast<uint16_t>(travel - 1 - pos);
                    break;
            }
            for (int i = 0; i < count_per_pixel; ++i) {
                double jitter = std::uniform_real_distribution<double>(0.0, step_us)(rng);
                uint64_t t = static_cast<uint64_t>(base_t + jitter);
                if (t >= spec.duration_us) {
                    t = spec.duration_us - 1;
                }
                stream.events.push_back(Event{t, x, y, polarity});
            }
        }
    };

    // The bar wraps around the sensor; each pixel crossing of the leading
    // edge emits polarity-1 events, the trailing edge polarity-0.
    uint64_t crossing = 0;
    while (true) {
        double t_lead = crossing * step_us;
        if (t_lead >= static_cast<double>(spec.duration_us)) {
            break;
        }
        emit(t_lead, static_cast<uint32_t>(crossing % travel), 1);
        if (crossing >= bar_width) {
            emit(t_lead, static_cast<uint32_t>((crossing - bar_width) % travel), 0);
        }
        ++crossing;
    }

    stream.sort_events();
    stream.validate();
    return stream;
}

EventStream regularize_length(const EventStream& stream, uint64_t target_us) {
    if (target_us == 0) {
        throw ConfigError("target duration must be > 0");
    }
    EventStream out;
    out.geometry = stream.geometry;
    out.duration_us = target_us;
    out.events.reserve(stream.events.size());
    for (const Event& e : stream.events) {
        if (e.t < target_us) {
            out.events.push_back(e);
        }
    }
    return out;
}

namespace {

EventStream center_crop(const EventStream& stream, CropSize size) {
    if (size.width > stream.geometry.width || size.height > stream.geometry.height) {
        throw ConfigError("crop larger than current geometry");
    }
    uint32_t x0 = (stream.geometry.width - size.width) / 2;
    uint32_t y0 = (stream.geometry.height - size.height) / 2;
    EventStream out;
    out.geometry = {size.width, size.height};
    out.duration_us = stream.duration_us;
    for (const Event& e : stream.events) {
        if (e.x >= x0 && e.x < x0 + size.width && e.y >= y0 && e.y < y0 + size.height) {
            out.events.push_back(Event{e.t, static_cast<uint16_t>(e.x - x0),
                                       static_cast<uint16_t>(e.y - y0), e.p});
        }
    }
    return out;
}

EventStream offset_crop(const EventStream& stream, CropSize size, uint32_t x0, uint32_t y0) {
    EventStream out;
    out.geometry = {size.width, size.height};
    out.duration_us = stream.duration_us;
    for (const Event& e : stream.events) {
        if (e.x >= x0 && e.x < x0 + size.width && e.y >= y0 && e.y < y0 + size.height) {
            out.events.push_back(Event{e.t, static_cast<uint16_t>(e.x - x0),
                                       static_cast<uint16_t>(e.y - y0), e.p});
        }
    }
    return out;
}

}  // namespace

EventStream augment(const EventStream& stream, const AugmentSpec& spec, AugmentMode mode) {
    if (spec.hflip_prob < 0.0 || spec.hflip_prob > 1.0) {
        throw ConfigError("hflip_prob must lie in [0,1]");
    }
    if (spec.noise_sigma < 0.0) {
        throw ConfigError("noise_sigma must be >= 0");
    }
    EventStream out = stream;

    if (mode == AugmentMode::Test) {
        // Test path skips intermediate crops and jumps to the final size.
        std::optional<CropSize> final_size = spec.random_crop ? spec.random_crop : spec.center_crop;
        if (final_size) {
            out = center_crop(out, *final_size);
        }
        out.sort_events();
        return out;
    }

    std::mt19937_64 rng(spec.seed);
    if (spec.center_crop) {
        out = center_crop(out, *spec.center_crop);
    }
    if (spec.random_crop) {
        if (spec.random_crop->width > out.geometry.width ||
            spec.random_crop->height > out.geometry.height) {
            throw ConfigError("crop larger than current geometry");
        }
        uint32_t max_x = out.geometry.width - spec.random_crop->width;
        uint32_t max_y = out.geometry.height - spec.random_crop->height;
        uint32_t x0 = std::uniform_int_distribution<uint32_t>(0, max_x)(rng);
        uint32_t y0 = std::uniform_int_distribution<uint32_t>(0, max_y)(rng);
        out = offset_crop(out, *spec.random_crop, x0, y0);
    }
    if (spec.hflip_prob > 0.0) {
        double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        if (spec.hflip_prob >= 1.0 || draw < spec.hflip_prob) {
            for (Event& e : out.events) {
                e.x = static_cast<uint16_t>(out.geometry.width - 1 - e.x);
            }
        }
    }
    out.sort_events();
    out.validate();
    return out;
}

}  // namespace rnnet

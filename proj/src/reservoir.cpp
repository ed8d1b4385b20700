#include "rnnet/reservoir.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace rnnet {

void DeviceParams::validate() const {
    if (!(p_c > 0.0 && p_c <= 1.0)) {
        throw ConfigError("p_c must lie in (0, 1]");
    }
    if (!(tau_us > 0.0)) {
        throw ConfigError("tau must be > 0");
    }
    if (!(g_max > 0.0)) {
        throw ConfigError("g_max must be > 0");
    }
}

std::string to_string(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::RN: return "RN";
        case EncoderKind::TS: return "TS";
        case EncoderKind::TAP: return "TAP";
    }
    return "?";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "RN" || s == "rn") return EncoderKind::RN;
    if (s == "TS" || s == "ts") return EncoderKind::TS;
    if (s == "TAP" || s == "tap") return EncoderKind::TAP;
    throw ConfigError("unknown encoder kind '" + s + "' (expected RN, TS or TAP)");
}

ReservoirLayer::ReservoirLayer(EncoderKind kind, DeviceParams params, uint32_t channels,
                               uint32_t height, uint32_t width, uint64_t tap_window_us)
    : kind_(kind),
      params_(params),
      channels_(channels),
      height_(height),
      width_(width),
      tap_window_us_(tap_window_us) {
    params_.validate();
    if (kind_ == EncoderKind::TAP && tap_window_us_ == 0) {
        throw ConfigError("TAP layer requires a retrieval window length");
    }
    size_t n = static_cast<size_t>(channels) * height * width;
    if (n == 0) {
        throw ConfigError("reservoir layer must have at least one node");
    }
    state_.assign(n, 0.0);
    last_spike_.assign(n, 0);
    has_spiked_.assign(n, 0);
    if (kind_ == EncoderKind::TAP) {
        tap_count_.assign(n, 0);
    }
}

ReservoirLayer ReservoirLayer::flat(EncoderKind kind, DeviceParams params, size_t length,
                                    uint64_t tap_window_us) {
    return ReservoirLayer(kind, params, 1, 1, static_cast<uint32_t>(length), tap_window_us);
}

void ReservoirLayer::reset() {
    std::fill(state_.begin(), state_.end(), 0.0);
    std::fill(last_spike_.begin(), last_spike_.end(), 0);
    std::fill(has_spiked_.begin(), has_spiked_.end(), 0);
    std::fill(tap_count_.begin(), tap_count_.end(), 0);
    current_time_ = 0;
    max_spike_time_ = 0;
}

double ReservoirLayer::pre_spike_state(size_t node, uint64_t t_us) const {
    if (!has_spiked_[node]) {
        return 0.0;
    }
    switch (kind_) {
        case EncoderKind::RN: {
            // State decayed to one grid step before t; the combined update
            // then applies potentiation plus the final step's decay.
            double elapsed = static_cast<double>(t_us - last_spike_[node]) - 1.0;
            return state_[node] * std::exp(-elapsed / params_.tau_us);
        }
        case EncoderKind::TS:
            return std::exp(-static_cast<double>(t_us - last_spike_[node]) / params_.tau_us);
        case EncoderKind::TAP:
        default:
            return 0.0;
    }
}

std::optional<double> ReservoirLayer::apply_spike(size_t node, uint64_t t_us) {
    if (node >= state_.size()) {
        throw ShapeError("spike node index out of range");
    }
    if (has_spiked_[node] && t_us < last_spike_[node]) {
        throw OrderingError("spike at t=" + std::to_string(t_us) + " precedes node time " +
                            std::to_string(last_spike_[node]));
    }
    if (has_spiked_[node] && t_us == last_spike_[node]) {
        return std::nullopt;  // delta is binary per microsecond
    }
    current_time_ = std::max(current_time_, t_us);
    max_spike_time_ = std::max(max_spike_time_, t_us);

    double pre = pre_spike_state(node, t_us);
    switch (kind_) {
        case EncoderKind::RN:
            state_[node] = params_.p_c * (params_.g_max - pre) +
                           pre * std::exp(-1.0 / params_.tau_us);
            break;
        case EncoderKind::TS:
            break;  // only the spike instant is stored
        case EncoderKind::TAP:
            ++tap_count_[node];
            break;
    }
    last_spike_[node] = t_us;
    has_spiked_[node] = 1;
    return pre;
}

void ReservoirLayer::check_read_time(uint64_t t_us) const {
    if (t_us < max_spike_time_) {
        throw OrderingError("read at t=" + std::to_string(t_us) + " precedes layer time " +
                            std::to_string(max_spike_time_));
    }
}

double ReservoirLayer::read_node(size_t node, uint64_t t_us) const {
    check_read_time(t_us);
    if (!has_spiked_[node]) {
        return 0.0;
    }
    switch (kind_) {
        case EncoderKind::RN:
            return state_[node] *
                   std::exp(-static_cast<double>(t_us - last_spike_[node]) / params_.tau_us);
        case EncoderKind::TS:
            return std::exp(-static_cast<double>(t_us - last_spike_[node]) / params_.tau_us);
        case EncoderKind::TAP: {
            uint64_t windows = t_us / tap_window_us_;
            if (windows == 0) {
                return 0.0;
            }
            return static_cast<double>(tap_count_[node]) / static_cast<double>(windows);
        }
    }
    return 0.0;
}

StateFrame ReservoirLayer::read(uint64_t t_us) const {
    check_read_time(t_us);
    StateFrame frame;
    frame.t_us = t_us;
    frame.channels = channels_;
    frame.height = height_;
    frame.width = width_;
    frame.values.resize(state_.size());
    for (size_t i = 0; i < state_.size(); ++i) {
        frame.values[i] = read_node(i, t_us);
    }
    return frame;
}

std::vector<StateFrame> encode_stream(const EventStream& stream, ReservoirLayer& layer,
                                      uint64_t retrieval_interval_us,
                                      std::vector<SpikeRecord>* spike_log) {
    if (retrieval_interval_us == 0) {
        throw ConfigError("retrieval interval must be > 0");
    }
    if (layer.channels() != 2 || layer.height() != stream.geometry.height ||
        layer.width() != stream.geometry.width) {
        throw ShapeError("layer shape (" + std::to_string(layer.channels()) + "," +
                         std::to_string(layer.height()) + "," + std::to_string(layer.width()) +
                         ") does not match stream geometry " +
                         std::to_string(stream.geometry.width) + "x" +
                         std::to_string(stream.geometry.height));
    }
    const size_t plane = static_cast<size_t>(layer.height()) * layer.width();
    const uint64_t frame_count = stream.duration_us / retrieval_interval_us;

    std::vector<StateFrame> frames;
    frames.reserve(frame_count);
    size_t next_event = 0;
    for (uint64_t k = 1; k <= frame_count; ++k) {
        uint64_t frame_t = k * retrieval_interval_us;
        while (next_event < stream.events.size() && stream.events[next_event].t <= frame_t) {
            const Event& e = stream.events[next_event];
            size_t node = static_cast<size_t>(e.p) * plane +
                          static_cast<size_t>(e.y) * layer.width() + e.x;
            auto pre = layer.apply_spike(node, e.t);
            if (pre && spike_log) {
                spike_log->push_back(SpikeRecord{e.t, node, *pre});
            }
            ++next_event;
        }
        frames.push_back(layer.read(frame_t));
    }
    // Events past the last frame still update the layer state.
    while (next_event < stream.events.size()) {
        const Event& e = stream.events[next_event];
        size_t node =
            static_cast<size_t>(e.p) * plane + static_cast<size_t>(e.y) * layer.width() + e.x;
        auto pre = layer.apply_spike(node, e.t);
        if (pre && spike_log) {
            spike_log->push_back(SpikeRecord{e.t, node, *pre});
        }
        ++next_event;
    }
    return frames;
}

namespace {

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
        throw FormatError(std::string("truncated frame while reading ") + what);
    }
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(buf[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void write_frame_csv(const StateFrame& frame, std::ostream& out) {
    out << "# " << frame.t_us << ',' << frame.channels << ',' << frame.height << ','
        << frame.width << '\n';
    out.precision(17);
    for (size_t i = 0; i < frame.values.size(); ++i) {
        out << frame.values[i] << '\n';
    }
}

StateFrame parse_frame_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.empty() || line[0] != '#') {
        throw FormatError("missing frame header '# t_us,c,h,w'");
    }
    StateFrame frame;
    if (std::sscanf(line.c_str(), "# %lu,%u,%u,%u", &frame.t_us, &frame.channels, &frame.height,
                    &frame.width) != 4) {
        throw FormatError("bad frame header: " + line);
    }
    size_t n = static_cast<size_t>(frame.channels) * frame.height * frame.width;
    frame.values.reserve(n);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        frame.values.push_back(std::stod(line));
    }
    if (frame.values.size() != n) {
        throw FormatError("frame value count " + std::to_string(frame.values.size()) +
                          " does not match shape");
    }
    return frame;
}

void write_frame_binary(const StateFrame& frame, std::ostream& out) {
    out.write("RNSF", 4);
    put_le<uint32_t>(out, 1);
    put_le<uint32_t>(out, frame.channels);
    put_le<uint32_t>(out, frame.height);
    put_le<uint32_t>(out, frame.width);
    put_le<uint64_t>(out, frame.t_us);
    put_le<uint64_t>(out, frame.values.size());
    for (double v : frame.values) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        put_le<uint64_t>(out, bits);
    }
}

StateFrame parse_frame_binary(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RNSF", 4) != 0) {
        throw FormatError("bad magic, expected RNSF");
    }
    uint32_t version = get_le<uint32_t>(in, "version");
    if (version != 1) {
        throw FormatError("unsupported RNSF version " + std::to_string(version));
    }
    StateFrame frame;
    frame.channels = get_le<uint32_t>(in, "channels");
    frame.height = get_le<uint32_t>(in, "height");
    frame.width = get_le<uint32_t>(in, "width");
    frame.t_us = get_le<uint64_t>(in, "t_us");
    uint64_t count = get_le<uint64_t>(in, "count");
    if (count != static_cast<uint64_t>(frame.channels) * frame.height * frame.width) {
        throw FormatError("frame count does not match shape");
    }
    frame.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t bits = get_le<uint64_t>(in, "value");
        std::memcpy(&frame.values[i], &bits, sizeof(double));
    }
    return frame;
}

void write_frame_binary_file(const StateFrame& frame, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    write_frame_binary(frame, out);
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

StateFrame parse_frame_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return parse_frame_binary(in);
}

}  // namespace rnnet

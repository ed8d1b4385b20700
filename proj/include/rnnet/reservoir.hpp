#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rnnet/errors.hpp"
#include "rnnet/events.hpp"

namespace rnnet {

// Short-term-memory device parameters of the reservoir node dynamics:
//   G_t = P_c * (G_max - G_{t-1}) * delta_spk(t) + G_{t-1} * e^(-1/tau)
// with tau expressed in microseconds on a 1 us time grid.
struct DeviceParams {
    double p_c = 0.5;          // potentiation factor, in (0, 1]
    double tau_us = 60'000.0;  // relaxation time constant
    double g_max = 100e-6;     // node state upper bound, Siemens

    void validate() const;
};

enum class EncoderKind { RN, TS, TAP };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

// Dense node-state snapshot at a retrieval instant.
struct StateFrame {
    uint64_t t_us = 0;
    uint32_t channels = 0;
    uint32_t height = 0;
    uint32_t width = 0;
    std::vector<double> values;  // row-major [c][y][x]

    size_t size() const { return values.size(); }
};

// One spike as seen by the energy model: which node fired, when, and the
// node conductance just before the potentiation pulse.
struct SpikeRecord {
    uint64_t t_us = 0;
    size_t node = 0;
    double pre_conductance = 0.0;
};

// Array of independent reservoir nodes, one per input line. Nodes are
// materialized lazily: state is only recomputed on spike arrival or read,
// via closed-form decay, and must match the dense 1 us-grid simulation of
// the update equation to floating-point rounding.
class ReservoirLayer {
public:
    ReservoirLayer(EncoderKind kind, DeviceParams params, uint32_t channels, uint32_t height,
                   uint32_t width, uint64_t tap_window_us = 0);

    static ReservoirLayer flat(EncoderKind kind, DeviceParams params, size_t length,
                               uint64_t tap_window_us = 0);

    EncoderKind kind() const { return kind_; }
    const DeviceParams& params() const { return params_; }
    size_t node_count() const { return state_.size(); }
    uint32_t channels() const { return channels_; }
    uint32_t height() const { return height_; }
    uint32_t width() const { return width_; }
    uint64_t current_time() const { return current_time_; }

    // Applies one spike. Returns the node state immediately before the
    // potentiation pulse (the conductance seen by the encoding pulse), or
    // nullopt when a duplicate (node, t) spike coalesces into the previous
    // one. Time regression throws.
    std::optional<double> apply_spike(size_t node, uint64_t t_us);

    // Non-destructive read of a single node's state decayed to t.
    double read_node(size_t node, uint64_t t_us) const;

    // Non-destructive read of the full layer at t.
    StateFrame read(uint64_t t_us) const;

    // State the node would have at t if no spike arrived at t (the value
    // the forward pass linearizes around).
    double pre_spike_state(size_t node, uint64_t t_us) const;

    void reset();

private:
    void check_read_time(uint64_t t_us) const;

    EncoderKind kind_;
    DeviceParams params_;
    uint32_t channels_, height_, width_;
    uint64_t tap_window_us_;
    uint64_t current_time_ = 0;
    uint64_t max_spike_time_ = 0;
    std::vector<double> state_;            // RN conductance; unused for TS/TAP
    std::vector<uint64_t> last_spike_;     // per-node last spike time
    std::vector<uint8_t> has_spiked_;
    std::vector<uint64_t> tap_count_;      // TAP spike accumulator
};

// Applies every event of the stream in order to a (2, height, width) layer
// and reads frames at k * retrieval_interval for k = 1..duration/interval.
// If spike_log is non-null, one record per applied (non-coalesced) spike is
// appended, carrying the pre-spike conductance.
std::vector<StateFrame> encode_stream(const EventStream& stream, ReservoirLayer& layer,
                                      uint64_t retrieval_interval_us,
                                      std::vector<SpikeRecord>* spike_log = nullptr);

// StateFrame export. CSV: header `# t_us,<c>,<h>,<w>`, row-major values.
// Binary: magic "RNSF", u32 version=1, u32 c, u32 h, u32 w, u64 t_us,
// u64 count, f64 values, little-endian.
void write_frame_csv(const StateFrame& frame, std::ostream& out);
StateFrame parse_frame_csv(std::istream& in);
void write_frame_binary(const StateFrame& frame, std::ostream& out);
StateFrame parse_frame_binary(std::istream& in);
void write_frame_binary_file(const StateFrame& frame, const std::string& path);
StateFrame parse_frame_binary_file(const std::string& path);

}  // namespace rnnet

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnnet/network.hpp"
#include "rnnet/reservoir.hpp"

namespace rnnet {

// Device and converter parameters of the hardware estimate.
struct ElectricalParams {
    double v_pulse = 1.5;        // volts
    double v_read = 0.5;         // volts
    double t_pulse = 1e-6;       // seconds
    double t_read = 1e-6;        // seconds
    double g_max = 100e-6;       // Siemens
    int adc_bits = 8;
    double adc_power_w = 171e-6;
    double accel_tops_per_w = 2.0;

    void validate() const;
};

// Sum of V_pulse^2 * G * t_pulse over spikes, with G sampled just before
// each potentiation pulse.
double encoding_energy(std::span<const SpikeRecord> spikes, const ElectricalParams& params);

// Sum over retrievals and nodes of V_read^2 * G * t_read.
double retrieval_energy(const std::vector<StateFrame>& frames, const ElectricalParams& params);

struct AdcBudget {
    uint64_t ops = 0;
    double required_rate_sps = 0.0;
    double energy_j = 0.0;  // one ADC powered for the whole clip
};

AdcBudget adc_budget(uint64_t node_count, uint64_t retrievals, double clip_seconds,
                     const ElectricalParams& params);

struct AccelEnergy {
    double energy_1x_j = 0.0;  // MAC counted as 1 op
    double energy_2x_j = 0.0;  // MAC counted as 2 ops
};

AccelEnergy accel_energy(const MacReport& macs, const ElectricalParams& params);

struct EnergyReport {
    double encoding_in_j = 0.0;
    double encoding_f_j = 0.0;
    double retrieval_in_j = 0.0;
    double retrieval_f_j = 0.0;
    AdcBudget adc_in;
    AdcBudget adc_f;
    AccelEnergy accel;
    uint64_t mac_total = 0;
    uint64_t ops_1x = 0;
    uint64_t ops_2x = 0;
    double clip_seconds = 0.0;
    double total_j = 0.0;        // 2-op convention
    double total_1x_j = 0.0;     // 1-op convention
    double avg_power_w = 0.0;
    double avg_power_1x_w = 0.0;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

struct EnergyInputs {
    std::vector<SpikeRecord> spikes_in;
    std::vector<SpikeRecord> spikes_f;
    std::vector<StateFrame> frames_in;
    std::vector<StateFrame> frames_f;
    uint64_t adc_nodes_in = 0;
    uint64_t adc_nodes_f = 0;
    MacReport macs;
    double clip_seconds = 0.0;
};

EnergyReport full_report(const EnergyInputs& inputs, const ElectricalParams& params);

}  // namespace rnnet

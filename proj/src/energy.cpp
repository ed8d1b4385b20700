#include "rnnet/energy.hpp"

#include <cmath>
#include <sstream>

namespace rnnet {

void ElectricalParams::validate() const {
    if (!(v_pulse > 0 && v_read > 0 && t_pulse > 0 && t_read > 0 && g_max > 0 &&
          adc_power_w > 0 && accel_tops_per_w > 0)) {
        throw ConfigError("electrical parameters must all be positive");
    }
    if (adc_bits != 4 && adc_bits != 6 && adc_bits != 8) {
        throw ConfigError("adc_bits must be 4, 6 or 8");
    }
}

double encoding_energy(std::span<const SpikeRecord> spikes, const ElectricalParams& params) {
    double total = 0.0;
    for (const SpikeRecord& s : spikes) {
        if (s.pre_conductance < 0.0) {
            throw NumericError("negative conductance in spike log");
        }
        total += params.v_pulse * params.v_pulse * s.pre_conductance * params.t_pulse;
    }
    return total;
}

double retrieval_energy(const std::vector<StateFrame>& frames, const ElectricalParams& params) {
    double total = 0.0;
    for (const StateFrame& frame : frames) {
        for (double g : frame.values) {
            if (g < 0.0) {
                throw NumericError("negative conductance in retrieval frame");
            }
            total += params.v_read * params.v_read * g * params.t_read;
        }
    }
    return total;
}

AdcBudget adc_budget(uint64_t node_count, uint64_t retrievals, double clip_seconds,
                     const ElectricalParams& params) {
    if (node_count == 0 || retrievals == 0 || !(clip_seconds > 0.0)) {
        throw ConfigError("adc_budget requires positive inputs");
    }
    AdcBudget budget;
    budget.ops = node_count * retrievals;
    budget.required_rate_sps = static_cast<double>(budget.ops) / clip_seconds;
    // Conservative: the ADC is powered for the whole clip.
    budget.energy_j = params.adc_power_w * clip_seconds;
    return budget;
}

AccelEnergy accel_energy(const MacReport& macs, const ElectricalParams& params) {
    AccelEnergy e;
    const double per_op = 1.0 / (params.accel_tops_per_w * 1e12);
    e.energy_1x_j = static_cast<double>(macs.total_ops_1x) * per_op;
    e.energy_2x_j = static_cast<double>(macs.total_ops_2x) * per_op;
    return e;
}

EnergyReport full_report(const EnergyInputs& inputs, const ElectricalParams& params) {
    params.validate();
    if (!(inputs.clip_seconds > 0.0)) {
        throw ConfigError("clip duration must be positive");
    }
    EnergyReport r;
    r.clip_seconds = inputs.clip_seconds;
    r.encoding_in_j = encoding_energy(inputs.spikes_in, params);
    r.encoding_f_j = encoding_energy(inputs.spikes_f, params);
    r.retrieval_in_j = retrieval_energy(inputs.frames_in, params);
    r.retrieval_f_j = retrieval_energy(inputs.frames_f, params);
    if (inputs.adc_nodes_in && !inputs.frames_in.empty()) {
        r.adc_in = adc_budget(inputs.adc_nodes_in, inputs.frames_in.size(), inputs.clip_seconds,
                              params);
    }
    if (inputs.adc_nodes_f && !inputs.frames_f.empty()) {
        r.adc_f = adc_budget(inputs.adc_nodes_f, inputs.frames_f.size(), inputs.clip_seconds,
                             params);
    }
    r.mac_total = inputs.macs.total_macs;
    r.ops_1x = inputs.macs.total_ops_1x;
    r.ops_2x = inputs.macs.total_ops_2x;
    r.accel = accel_energy(inputs.macs, params);

    const double common = r.encoding_in_j + r.encoding_f_j + r.retrieval_in_j + r.retrieval_f_j +
                          r.adc_in.energy_j + r.adc_f.energy_j;
    r.total_j = common + r.accel.energy_2x_j;
    r.total_1x_j = common + r.accel.energy_1x_j;
    r.avg_power_w = r.total_j / r.clip_seconds;
    r.avg_power_1x_w = r.total_1x_j / r.clip_seconds;
    return r;
}

nlohmann::json EnergyReport::to_json() const {
    nlohmann::json j;
    j["encoding_j"] = {{"r_in", encoding_in_j}, {"r_f", encoding_f_j}};
    j["retrieval_j"] = {{"r_in", retrieval_in_j}, {"r_f", retrieval_f_j}};
    j["adc"] = {{"r_in",
                 {{"ops", adc_in.ops},
                  {"required_rate_sps", adc_in.required_rate_sps},
                  {"energy_j", adc_in.energy_j}}},
                {"r_f",
                 {{"ops", adc_f.ops},
                  {"required_rate_sps", adc_f.required_rate_sps},
                  {"energy_j", adc_f.energy_j}}}};
    j["accelerator"] = {{"mac_total", mac_total},
                        {"ops_mac_as_1", ops_1x},
                        {"ops_mac_as_2", ops_2x},
                        {"energy_mac_as_1_j", accel.energy_1x_j},
                        {"energy_mac_as_2_j", accel.energy_2x_j}};
    j["clip_seconds"] = clip_seconds;
    j["total_j"] = total_j;
    j["total_mac_as_1_j"] = total_1x_j;
    j["avg_power_w"] = avg_power_w;
    j["avg_power_mac_as_1_w"] = avg_power_1x_w;
    return j;
}

std::string EnergyReport::to_table() const {
    std::ostringstream os;
    auto row = [&](const char* name, double joules) {
        os.setf(std::ios::scientific);
        os.precision(4);
        os << "  " << name << ": " << joules << " J\n";
    };
    os << "Energy report (clip " << clip_seconds << " s)\n";
    row("encoding  R_in ", encoding_in_j);
    row("encoding  R_f  ", encoding_f_j);
    row("retrieval R_in ", retrieval_in_j);
    row("retrieval R_f  ", retrieval_f_j);
    row("ADC       R_in ", adc_in.energy_j);
    row("ADC       R_f  ", adc_f.energy_j);
    os << "  ADC ops: R_in " << adc_in.ops << " (" << adc_in.required_rate_sps << " SPS), R_f "
       << adc_f.ops << " (" << adc_f.required_rate_sps << " SPS)\n";
    os << "  DNN MACs/clip: " << mac_total << " (ops x1 " << ops_1x << ", x2 " << ops_2x << ")\n";
    row("accelerator(x2)", accel.energy_2x_j);
    row("total     (x2) ", total_j);
    os << "  average power: " << avg_power_w << " W (x2 convention), " << avg_power_1x_w
       << " W (x1)\n";
    return os.str();
}

}  // namespace rnnet

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "rnnet/energy.hpp"
#include "rnnet/events.hpp"
#include "rnnet/network.hpp"
#include "rnnet/tasks.hpp"
#include "rnnet/training.hpp"

namespace rnnet {

// One JSON run-config drives every subcommand. Sections: "events" (input
// file, dataset dir, or synth spec), "network" (inline or {"file": path},
// relative to the config file), "training", "energy", "ablate". Flags on
// the command line override individual fields after loading.
struct RunConfig {
    uint64_t seed = 1;
    int threads = 1;
    std::string output_dir = ".";

    // events section
    std::string input_events;              // single stream, for encode/energy
    std::optional<BarSpec> synth_bar;      // inline single-stream synthesis
    std::string synth_task;                // "bars" | "longmem" | ""
    size_t train_count = 200;
    size_t test_count = 50;
    BarTaskSpec bars;
    LongMemTaskSpec longmem;
    std::string dataset_dir;               // train/ + test/, each with labels.csv

    NetworkConfig network;
    bool has_network = false;

    TrainConfig training;

    ElectricalParams electrical;
    bool simulate_rf = false;
    double ts_tau_in_us = 0.0;              // ablate: TS tau overrides, 0 = keep
    double ts_tau_f_us = 0.0;
    std::string encode_dir;                // artifacts consumed by cmd_energy
    std::string checkpoint;                // consumed by eval / simulate_rf

    static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir);
    static RunConfig load_file(const std::string& path);

    void require_network() const;          // ConfigError when absent
};

// Builds the configured dataset pair: synthetic task or on-disk layout
// (<dir>/train and <dir>/test, each holding event files plus a labels.csv
// of `file,label` lines).
void load_datasets(const RunConfig& config, Dataset& train_set, Dataset& test_set);

// Writes the synthesized streams to output_dir as .rnev files with
// labels.csv, or a single stream when the config carries an inline bar.
void cmd_synth(const RunConfig& config);

// Encodes one stream through R_in: frame_NNNNNN.rnsf files, spikes.csv,
// manifest.json.
void cmd_encode(const RunConfig& config);

// Trains end-to-end; writes checkpoint.rnwt, history.csv, metrics.json.
void cmd_train(const RunConfig& config);

// Loads checkpoint.rnwt and reports test accuracy (stdout + metrics.json).
void cmd_eval(const RunConfig& config);

// Runs the five R_in/R_f encoder combinations (TS/TS, TS/RN, RN/TS, RN/RN,
// RN/TAP) and writes ablation.csv.
void cmd_ablate(const RunConfig& config);

// Assembles the hardware energy estimate from encode artifacts plus the
// network config; writes energy.json and energy.txt.
void cmd_energy(const RunConfig& config);

// Central-finite-difference check of the analytic gradients on a small
// random clip; returns the max relative error over sampled parameters.
double cmd_gradcheck(const RunConfig& config, double epsilon = 1e-5, size_t samples = 40);

// Ablation row labels in emission order.
extern const char* const kAblateRows[5][2];

}  // namespace rnnet

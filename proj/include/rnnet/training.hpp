#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnnet/events.hpp"
#include "rnnet/network.hpp"

namespace rnnet {

// Classic Adam; weight decay is added to the gradient before the moment
// updates (coupled form).
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamOptimizer {
public:
    AdamOptimizer(AdamConfig config, std::vector<ParamTensor>& params);

    void step();
    double lr() const { return config_.lr; }
    void set_lr(double lr) { config_.lr = lr; }
    size_t step_count() const { return step_count_; }

private:
    AdamConfig config_;
    std::vector<ParamTensor>* params_;
    std::vector<std::vector<double>> m_, v_;
    size_t step_count_ = 0;
};

// ReduceLROnPlateau, min mode with relative threshold: an epoch improves
// only if metric < best * (1 - threshold). After `patience` consecutive
// non-improving epochs the rate is multiplied by `factor`, floored at
// min_lr.
struct PlateauConfig {
    double factor = 0.9;
    int patience = 2;
    double threshold = 1e-5;
    double min_lr = 1e-6;
};

class PlateauScheduler {
public:
    PlateauScheduler(PlateauConfig config, double initial_lr);

    double step(double metric);  // returns the (possibly reduced) lr
    double lr() const { return lr_; }

private:
    PlateauConfig config_;
    double lr_;
    double best_;
    int bad_epochs_ = 0;
};

struct Dataset {
    std::vector<EventStream> streams;
    std::vector<int> labels;
    size_t num_classes = 0;

    size_t size() const { return streams.size(); }
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double lr_factor = 0.9;
    int patience = 2;
    double lr_threshold = 1e-5;
    double min_lr = 1e-6;
    size_t batch = 32;
    size_t epochs = 20;
    uint64_t seed = 0;
    double surrogate_alpha = 2.0;
    double noise_sigma = 0.0;  // on retrieved (normalized) R_in states
    int threads = 1;
    double stop_at_test_acc = -1.0;  // early stop once reached; <0 disables
};

struct EpochStats {
    size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

// Encodes a stream through the configured R_in layer at its retrieval
// interval.
std::vector<StateFrame> encode_input(const EventStream& stream, const NetworkConfig& config,
                                     std::vector<SpikeRecord>* spike_log = nullptr);

double evaluate(Model& model, const Dataset& dataset, int threads = 1, size_t batch = 16);

TrainResult train(Model& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config);

// History CSV: `epoch,train_loss,train_acc,test_acc,lr`.
void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

}  // namespace rnnet

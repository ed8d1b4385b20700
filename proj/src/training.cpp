#include "rnnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

namespace rnnet {

AdamOptimizer::AdamOptimizer(AdamConfig config, std::vector<ParamTensor>& params)
    : config_(config), params_(&params) {
    if (!(config_.lr > 0.0)) {
        throw ConfigError("learning rate must be > 0");
    }
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].value.size(), 0.0);
        v_[i].assign(params[i].value.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (size_t i = 0; i < params_->size(); ++i) {
        ParamTensor& p = (*params_)[i];
        if (!p.trainable) continue;
        if (p.grad.size() != p.value.size()) {
            throw ShapeError("gradient shape mismatch for " + p.name);
        }
        for (size_t j = 0; j < p.value.size(); ++j) {
            double g = p.grad.data[j] + config_.weight_decay * p.value.data[j];
            m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
            v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.value.data[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

PlateauScheduler::PlateauScheduler(PlateauConfig config, double initial_lr)
    : config_(config), lr_(initial_lr), best_(std::numeric_limits<double>::infinity()) {
    if (!(config_.factor > 0.0 && config_.factor < 1.0)) {
        throw ConfigError("scheduler factor must lie in (0, 1)");
    }
}

double PlateauScheduler::step(double metric) {
    if (!std::isfinite(metric)) {
        throw NumericError("scheduler metric is not finite");
    }
    if (metric < best_ * (1.0 - config_.threshold)) {
        best_ = metric;
        bad_epochs_ = 0;
    } else {
        ++bad_epochs_;
        if (bad_epochs_ >= config_.patience) {
            lr_ = std::max(lr_ * config_.factor, config_.min_lr);
            bad_epochs_ = 0;
        }
    }
    return lr_;
}

std::vector<StateFrame> encode_input(const EventStream& stream, const NetworkConfig& config,
                                     std::vector<SpikeRecord>* spike_log) {
    ReservoirLayer layer(config.r_in.kind, config.r_in.params, 2, stream.geometry.height,
                         stream.geometry.width, config.r_in.effective_tap_window());
    return encode_stream(stream, layer, config.r_in.interval_us, spike_log);
}

namespace {

std::vector<std::vector<StateFrame>> encode_batch(const Dataset& ds,
                                                  const std::vector<size_t>& indices,
                                                  const NetworkConfig& config) {
    std::vector<std::vector<StateFrame>> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        out[i] = encode_input(ds.streams[indices[i]], config);
    }
    return out;
}

void add_state_noise(std::vector<std::vector<StateFrame>>& batch, double sigma_normalized,
                     const NetworkConfig& config, std::mt19937_64& rng) {
    // Sigma is specified on the normalized state scale; RN frames carry raw
    // conductances, so rescale by g_max there.
    const double sigma = config.r_in.kind == EncoderKind::RN
                             ? sigma_normalized * config.r_in.params.g_max
                             : sigma_normalized;
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& frames : batch) {
        for (auto& frame : frames) {
            for (double& v : frame.values) {
                v += dist(rng);
            }
        }
    }
}

}  // namespace

double evaluate(Model& model, const Dataset& dataset, int threads, size_t batch) {
    if (dataset.size() == 0) {
        throw ConfigError("cannot evaluate on an empty dataset");
    }
    const size_t n = dataset.size();
    std::vector<int> predicted(n, -1);

    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < n; start += batch) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(n, start + batch); ++i) idx.push_back(i);
        batches.push_back(std::move(idx));
    }

    auto run_range = [&](size_t lo, size_t hi) {
        for (size_t bi = lo; bi < hi; ++bi) {
            auto frames = encode_batch(dataset, batches[bi], model.config());
            ForwardTrace trace = model.forward_clip(frames, false, false);
            auto preds = argmax_rows(trace.logits);
            for (size_t i = 0; i < batches[bi].size(); ++i) {
                predicted[batches[bi][i]] = preds[i];
            }
        }
    };

    const size_t nthreads = std::max(1, threads);
    if (nthreads <= 1 || batches.size() <= 1) {
        run_range(0, batches.size());
    } else {
        // Eval-mode passes share only read-only weights, so batches can be
        // scored concurrently; results land in per-sample slots.
        std::vector<std::thread> pool;
        const size_t chunk = (batches.size() + nthreads - 1) / nthreads;
        for (size_t t = 0; t < nthreads && t * chunk < batches.size(); ++t) {
            pool.emplace_back(run_range, t * chunk, std::min(batches.size(), (t + 1) * chunk));
        }
        for (auto& th : pool) th.join();
    }

    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        if (predicted[i] == dataset.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config) {
    if (train_set.size() == 0) {
        throw ConfigError("training dataset is empty");
    }
    for (int label : train_set.labels) {
        if (label < 0 || static_cast<size_t>(label) >= model.config().num_classes()) {
            throw ConfigError("training label out of range");
        }
    }
    model.surrogate_alpha = config.surrogate_alpha;

    AdamConfig adam_cfg;
    adam_cfg.lr = config.lr;
    adam_cfg.weight_decay = config.weight_decay;
    AdamOptimizer opt(adam_cfg, model.params());
    PlateauScheduler sched(
        PlateauConfig{config.lr_factor, config.patience, config.lr_threshold, config.min_lr},
        config.lr);

    std::mt19937_64 rng(config.seed);
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < order.size(); start += config.batch) {
            std::vector<size_t> idx(order.begin() + start,
                                    order.begin() + std::min(order.size(), start + config.batch));
            auto frames = encode_batch(train_set, idx, model.config());
            if (config.noise_sigma > 0.0) {
                add_state_noise(frames, config.noise_sigma, model.config(), rng);
            }
            std::vector<int> labels;
            for (size_t i : idx) labels.push_back(train_set.labels[i]);

            ForwardTrace trace = model.forward_clip(frames, true, true);
            Tensor dlogits;
            double loss = cross_entropy_loss(trace.logits, labels, &dlogits);
            loss_sum += loss * static_cast<double>(idx.size());
            auto preds = argmax_rows(trace.logits);
            for (size_t i = 0; i < idx.size(); ++i) {
                if (preds[i] == labels[i]) ++correct;
            }

            model.zero_grads();
            model.backward_clip(trace, dlogits);
            opt.step();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        stats.test_acc =
            test_set.size() > 0 ? evaluate(model, test_set, config.threads) : 0.0;
        stats.lr = opt.lr();
        result.history.push_back(stats);

        opt.set_lr(sched.step(stats.train_loss));
        if (config.stop_at_test_acc >= 0.0 && stats.test_acc >= config.stop_at_test_acc) {
            break;
        }
    }
    return result;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out << "epoch,train_loss,train_acc,test_acc,lr\n";
    out.precision(17);
    for (const EpochStats& e : history) {
        out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.test_acc << ','
            << e.lr << '\n';
    }
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

}  // namespace rnnet

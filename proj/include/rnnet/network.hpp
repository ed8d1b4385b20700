#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rnnet/events.hpp"
#include "rnnet/layers.hpp"
#include "rnnet/reservoir.hpp"
#include "rnnet/tensor.hpp"

namespace rnnet {

enum class LayerKind { Conv, MaxPool, BatchNorm, Relu, SpikeConvert, Flatten, Fc };

std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    size_t kernel = 0;
    size_t out_channels = 0;
    size_t pad = 0;
    size_t stride = 1;
    double threshold = -1.0;  // spike_convert only; <0 = use config default
};

// One reservoir layer section of the network config.
struct ReservoirSpec {
    EncoderKind kind = EncoderKind::RN;
    DeviceParams params;
    uint64_t interval_us = 30'000;
    uint64_t tap_window_us = 0;  // 0 = same as interval

    uint64_t effective_tap_window() const { return tap_window_us ? tap_window_us : interval_us; }
};

// Shape of the activation between two layers: spatial (c, h, w) until the
// flatten layer, features afterwards.
struct ChainShape {
    bool flat = false;
    size_t c = 0, h = 0, w = 0;
    size_t features = 0;

    size_t count() const { return flat ? features : c * h * w; }
};

// Full layer-stack description (the Table-2 schema) plus reservoir
// scheduling. Layers before the spike_convert form the conv stack run per
// R_in retrieval; layers after it form the MLP run per R_f retrieval.
struct NetworkConfig {
    Geometry input_geometry;
    std::vector<LayerSpec> layers;
    ReservoirSpec r_in;
    ReservoirSpec r_f;
    double sc_threshold = 0.3;

    // Throws ShapeError/ConfigError if dims do not chain, the stack has
    // no (or several) spike_convert layers, or the R_f length would not
    // match the flattened conv output.
    std::vector<ChainShape> shape_chain() const;
    void validate() const;

    size_t sc_index() const;            // index of the spike_convert layer
    size_t rf_length() const;           // flattened conv output length
    size_t num_classes() const;         // out features of the last fc
    double threshold_for(const LayerSpec& spec) const;

    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);
    static NetworkConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;
};

struct ParamCounts {
    std::vector<std::pair<std::string, size_t>> per_layer;
    size_t total = 0;
};

ParamCounts count_params(const NetworkConfig& config);

struct MacReport {
    std::vector<std::pair<std::string, size_t>> per_layer;  // per single pass
    size_t conv_macs_per_pass = 0;
    size_t fc_macs_per_pass = 0;
    size_t passes = 0;
    size_t total_macs = 0;   // (conv + fc) * passes
    size_t total_ops_1x = 0; // MAC = 1 op
    size_t total_ops_2x = 0; // MAC = 2 ops
};

MacReport count_macs(const NetworkConfig& config, size_t passes);

// ---- runtime model ----

using LayerCache = std::variant<std::monostate, nn::ConvCtx, nn::PoolCtx, nn::BnCtx, nn::ReluCtx,
                                nn::FcCtx, nn::FlattenCtx>;

struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

// Per-layer parameter slots; -1 where the layer has none.
struct LayerParamIdx {
    int w = -1, b = -1, gamma = -1, beta = -1, rmean = -1, rvar = -1;
};

struct PassRecord {
    uint64_t t_us = 0;
    std::vector<LayerCache> caches;   // conv-stack caches, one per layer
    Tensor sc_pre;                    // (B, F) pre-threshold activations
    Tensor spikes;                    // (B, F) binary SC output
    Tensor rf_pre_state;              // (B, F) R_f state before this pass's spikes
    std::vector<size_t> conv_shape;   // shape of the conv-stack output
};

struct ReadRecord {
    uint64_t t_us = 0;
    Tensor mlp_input;                 // (B, F) normalized R_f read
    std::vector<LayerCache> caches;   // MLP caches
    Tensor output;                    // (B, classes)
};

// Per-clip forward records: one PassRecord per R_in retrieval, one
// ReadRecord per R_f retrieval, and the accumulated potentials.
struct ForwardTrace {
    std::vector<PassRecord> passes;
    std::vector<ReadRecord> reads;
    Tensor logits;  // (B, classes), accumulated over reads
};

class Model {
public:
    explicit Model(NetworkConfig config);

    const NetworkConfig& config() const { return config_; }
    std::vector<ParamTensor>& params() { return params_; }
    const std::vector<ParamTensor>& params() const { return params_; }

    void init_weights(uint64_t seed);
    void zero_grads();

    // Runs the full clip for a batch of frame sequences sharing one
    // retrieval schedule. `training` selects batch vs running BN stats
    // and enables trace recording for backward.
    ForwardTrace forward_clip(const std::vector<std::vector<StateFrame>>& batch_frames,
                              bool training, bool record = true);

    // Single-clip convenience wrapper.
    ForwardTrace forward_clip(const std::vector<StateFrame>& frames, bool training = false);

    // Accumulates parameter gradients from dL/dlogits. The only non-exact
    // derivative in the graph is the ATan surrogate at the SC layer.
    void backward_clip(const ForwardTrace& trace, const Tensor& dlogits);

    double surrogate_alpha = 2.0;

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    Tensor run_stack(const Tensor& input, size_t begin, size_t end, bool training,
                     std::vector<LayerCache>* caches);
    Tensor backward_stack(const Tensor& gout, size_t begin, size_t end,
                          const std::vector<LayerCache>& caches);

    NetworkConfig config_;
    std::vector<ParamTensor> params_;
    std::vector<LayerParamIdx> layer_params_;
    size_t sc_index_ = 0;
};

// Mean categorical cross-entropy over softmax(logits); optionally fills
// dL/dlogits = (softmax - onehot) / batch.
double cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels,
                          Tensor* dlogits = nullptr);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace rnnet

#include "rnnet/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace rnnet {

using nlohmann::json;

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::SpikeConvert: return "spike_convert";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Fc: return "fc";
    }
    return "?";
}

namespace {

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "batchnorm") return LayerKind::BatchNorm;
    if (s == "relu") return LayerKind::Relu;
    if (s == "spike_convert") return LayerKind::SpikeConvert;
    if (s == "flatten") return LayerKind::Flatten;
    if (s == "fc") return LayerKind::Fc;
    throw ConfigError("unknown layer kind '" + s + "'");
}

}  // namespace

std::vector<ChainShape> NetworkConfig::shape_chain() const {
    std::vector<ChainShape> chain;
    chain.reserve(layers.size() + 1);
    ChainShape cur;
    cur.c = 2;
    cur.h = input_geometry.height;
    cur.w = input_geometry.width;
    chain.push_back(cur);
    bool seen_sc = false;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& L = layers[i];
        switch (L.kind) {
            case LayerKind::Conv:
                if (cur.flat) throw ShapeError("conv after flatten at layer " + std::to_string(i));
                if (L.kernel == 0 || L.stride == 0 || L.out_channels == 0) {
                    throw ConfigError("conv layer " + std::to_string(i) + " needs kernel/stride/out_channels");
                }
                cur.h = nn::conv_out_dim(cur.h, L.kernel, L.pad, L.stride);
                cur.w = nn::conv_out_dim(cur.w, L.kernel, L.pad, L.stride);
                cur.c = L.out_channels;
                break;
            case LayerKind::MaxPool:
                if (cur.flat) throw ShapeError("maxpool after flatten at layer " + std::to_string(i));
                if (L.kernel == 0 || L.stride == 0) {
                    throw ConfigError("maxpool layer " + std::to_string(i) + " needs kernel/stride");
                }
                cur.h = nn::conv_out_dim(cur.h, L.kernel, L.pad, L.stride);
                cur.w = nn::conv_out_dim(cur.w, L.kernel, L.pad, L.stride);
                break;
            case LayerKind::BatchNorm:
            case LayerKind::Relu:
            case LayerKind::SpikeConvert:
                if (L.kind == LayerKind::SpikeConvert) {
                    if (seen_sc) throw ConfigError("multiple spike_convert layers");
                    if (!cur.flat) throw ConfigError("spike_convert requires a preceding flatten");
                    seen_sc = true;
                }
                break;
            case LayerKind::Flatten:
                if (!cur.flat) {
                    cur.features = cur.c * cur.h * cur.w;
                    cur.flat = true;
                }
                break;
            case LayerKind::Fc:
                if (!cur.flat) throw ShapeError("fc requires a preceding flatten");
                if (L.out_channels == 0) {
                    throw ConfigError("fc layer " + std::to_string(i) + " needs out_channels");
                }
                cur.features = L.out_channels;
                break;
        }
        chain.push_back(cur);
    }
    if (!seen_sc) {
        throw ConfigError("network has no spike_convert layer");
    }
    return chain;
}

size_t NetworkConfig::sc_index() const {
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::SpikeConvert) return i;
    }
    throw ConfigError("network has no spike_convert layer");
}

size_t NetworkConfig::rf_length() const {
    auto chain = shape_chain();
    return chain[sc_index() + 1].features;
}

size_t NetworkConfig::num_classes() const {
    for (size_t i = layers.size(); i-- > 0;) {
        if (layers[i].kind == LayerKind::Fc) return layers[i].out_channels;
    }
    throw ConfigError("network has no fc layer");
}

double NetworkConfig::threshold_for(const LayerSpec& spec) const {
    return spec.threshold >= 0.0 ? spec.threshold : sc_threshold;
}

void NetworkConfig::validate() const {
    if (input_geometry.width == 0 || input_geometry.height == 0) {
        throw ConfigError("input geometry must be nonzero");
    }
    r_in.params.validate();
    r_f.params.validate();
    if (r_in.interval_us == 0 || r_f.interval_us == 0) {
        throw ConfigError("retrieval intervals must be > 0");
    }
    auto chain = shape_chain();
    size_t sc = sc_index();
    if (sc + 1 >= layers.size() || chain[sc + 1].features == 0) {
        throw ConfigError("spike_convert must feed a nonempty MLP");
    }
    bool fc_after_sc = false;
    for (size_t i = sc + 1; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::Conv || layers[i].kind == LayerKind::MaxPool) {
            throw ConfigError("conv/pool layers not supported after spike_convert");
        }
        if (layers[i].kind == LayerKind::Fc) fc_after_sc = true;
    }
    if (!fc_after_sc) {
        throw ConfigError("network needs at least one fc layer after spike_convert");
    }
}

namespace {

json reservoir_to_json(const ReservoirSpec& r) {
    json j;
    j["kind"] = to_string(r.kind);
    j["p_c"] = r.params.p_c;
    j["tau_us"] = r.params.tau_us;
    j["g_max"] = r.params.g_max;
    j["interval_us"] = r.interval_us;
    if (r.tap_window_us) j["tap_window_us"] = r.tap_window_us;
    return j;
}

ReservoirSpec reservoir_from_json(const json& j) {
    ReservoirSpec r;
    if (j.contains("kind")) r.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("p_c")) r.params.p_c = j.at("p_c").get<double>();
    if (j.contains("tau_us")) r.params.tau_us = j.at("tau_us").get<double>();
    if (j.contains("g_max")) r.params.g_max = j.at("g_max").get<double>();
    if (j.contains("interval_us")) r.interval_us = j.at("interval_us").get<uint64_t>();
    if (j.contains("tap_window_us")) r.tap_window_us = j.at("tap_window_us").get<uint64_t>();
    return r;
}

}  // namespace

json NetworkConfig::to_json() const {
    json j;
    j["input_geometry"] = {{"width", input_geometry.width}, {"height", input_geometry.height}};
    j["sc_threshold"] = sc_threshold;
    j["r_in"] = reservoir_to_json(r_in);
    j["r_f"] = reservoir_to_json(r_f);
    json arr = json::array();
    for (const LayerSpec& L : layers) {
        json e;
        e["layer"] = to_string(L.kind);
        if (L.kind == LayerKind::Conv || L.kind == LayerKind::MaxPool) {
            e["kernel"] = L.kernel;
            e["pad"] = L.pad;
            e["stride"] = L.stride;
        }
        if (L.kind == LayerKind::Conv || L.kind == LayerKind::Fc) {
            e["out_channels"] = L.out_channels;
        }
        if (L.kind == LayerKind::SpikeConvert && L.threshold >= 0.0) {
            e["threshold"] = L.threshold;
        }
        arr.push_back(e);
    }
    j["layers"] = arr;
    return j;
}

NetworkConfig NetworkConfig::from_json(const json& j) {
    NetworkConfig cfg;
    try {
        const json& g = j.at("input_geometry");
        cfg.input_geometry.width = g.at("width").get<uint32_t>();
        cfg.input_geometry.height = g.at("height").get<uint32_t>();
        if (j.contains("sc_threshold")) cfg.sc_threshold = j.at("sc_threshold").get<double>();
        if (j.contains("r_in")) cfg.r_in = reservoir_from_json(j.at("r_in"));
        if (j.contains("r_f")) cfg.r_f = reservoir_from_json(j.at("r_f"));
        for (const json& e : j.at("layers")) {
            LayerSpec L;
            L.kind = layer_kind_from_string(e.at("layer").get<std::string>());
            if (e.contains("kernel")) L.kernel = e.at("kernel").get<size_t>();
            if (e.contains("out_channels")) L.out_channels = e.at("out_channels").get<size_t>();
            if (e.contains("pad")) L.pad = e.at("pad").get<size_t>();
            if (e.contains("stride")) L.stride = e.at("stride").get<size_t>();
            if (e.contains("threshold")) L.threshold = e.at("threshold").get<double>();
            cfg.layers.push_back(L);
        }
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("bad network config: ") + ex.what());
    }
    cfg.validate();
    return cfg;
}

NetworkConfig NetworkConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw ConfigError("bad JSON in " + path + ": " + ex.what());
    }
    return from_json(j);
}

void NetworkConfig::save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out << to_json().dump(2) << '\n';
}

ParamCounts count_params(const NetworkConfig& config) {
    auto chain = config.shape_chain();
    ParamCounts counts;
    for (size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& L = config.layers[i];
        const ChainShape& in = chain[i];
        size_t n = 0;
        switch (L.kind) {
            case LayerKind::Conv:
                n = L.kernel * L.kernel * in.c * L.out_channels + L.out_channels;
                break;
            case LayerKind::BatchNorm:
                n = 2 * in.count();
                break;
            case LayerKind::Fc:
                n = in.features * L.out_channels + L.out_channels;
                break;
            default:
                break;
        }
        if (n) {
            counts.per_layer.emplace_back(to_string(L.kind) + std::to_string(i), n);
            counts.total += n;
        }
    }
    return counts;
}

MacReport count_macs(const NetworkConfig& config, size_t passes) {
    auto chain = config.shape_chain();
    size_t sc = config.sc_index();
    MacReport report;
    report.passes = passes;
    for (size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& L = config.layers[i];
        const ChainShape& in = chain[i];
        const ChainShape& out = chain[i + 1];
        size_t macs = 0;
        if (L.kind == LayerKind::Conv) {
            macs = out.h * out.w * out.c * in.c * L.kernel * L.kernel;
        } else if (L.kind == LayerKind::Fc) {
            macs = in.features * L.out_channels;
        }
        if (macs) {
            report.per_layer.emplace_back(to_string(L.kind) + std::to_string(i), macs);
            if (i < sc) {
                report.conv_macs_per_pass += macs;
            } else {
                report.fc_macs_per_pass += macs;
            }
        }
    }
    report.total_macs = (report.conv_macs_per_pass + report.fc_macs_per_pass) * passes;
    report.total_ops_1x = report.total_macs;
    report.total_ops_2x = 2 * report.total_macs;
    return report;
}

// ---- Model ----

Model::Model(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    auto chain = config_.shape_chain();
    sc_index_ = config_.sc_index();
    layer_params_.resize(config_.layers.size());
    for (size_t i = 0; i < config_.layers.size(); ++i) {
        const LayerSpec& L = config_.layers[i];
        const ChainShape& in = chain[i];
        std::string prefix = "layer" + std::to_string(i) + ".";
        auto add = [&](const std::string& name, Tensor t, bool trainable) {
            params_.push_back(ParamTensor{prefix + name, std::move(t), Tensor(), trainable});
            params_.back().grad = Tensor(params_.back().value.shape);
            return static_cast<int>(params_.size() - 1);
        };
        switch (L.kind) {
            case LayerKind::Conv:
                layer_params_[i].w =
                    add("weight", Tensor({L.out_channels, in.c, L.kernel, L.kernel}), true);
                layer_params_[i].b = add("bias", Tensor({L.out_channels}), true);
                break;
            case LayerKind::Fc:
                layer_params_[i].w = add("weight", Tensor({L.out_channels, in.features}), true);
                layer_params_[i].b = add("bias", Tensor({L.out_channels}), true);
                break;
            case LayerKind::BatchNorm: {
                size_t c = in.flat ? in.features : in.c;
                Tensor gamma({c});
                gamma.fill(1.0);
                Tensor var({c});
                var.fill(1.0);
                layer_params_[i].gamma = add("gamma", std::move(gamma), true);
                layer_params_[i].beta = add("beta", Tensor({c}), true);
                layer_params_[i].rmean = add("running_mean", Tensor({c}), false);
                layer_params_[i].rvar = add("running_var", std::move(var), false);
                break;
            }
            default:
                break;
        }
    }
}

void Model::init_weights(uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto chain = config_.shape_chain();
    for (size_t i = 0; i < config_.layers.size(); ++i) {
        const LayerSpec& L = config_.layers[i];
        if (layer_params_[i].w < 0) continue;
        size_t fan_in = L.kind == LayerKind::Conv
                            ? chain[i].c * L.kernel * L.kernel
                            : chain[i].features;
        double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : params_[layer_params_[i].w].value.data) v = dist(rng);
        for (double& v : params_[layer_params_[i].b].value.data) v = dist(rng);
    }
}

void Model::zero_grads() {
    for (ParamTensor& p : params_) {
        p.grad.fill(0.0);
    }
}

Tensor Model::run_stack(const Tensor& input, size_t begin, size_t end, bool training,
                        std::vector<LayerCache>* caches) {
    Tensor x = input;
    for (size_t i = begin; i < end; ++i) {
        const LayerSpec& L = config_.layers[i];
        LayerCache cache;
        switch (L.kind) {
            case LayerKind::Conv: {
                nn::ConvCtx ctx;
                x = nn::conv2d(x, params_[layer_params_[i].w].value,
                               params_[layer_params_[i].b].value, L.pad, L.stride,
                               caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::MaxPool: {
                nn::PoolCtx ctx;
                x = nn::maxpool(x, L.kernel, L.pad, L.stride, caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::BatchNorm: {
                nn::BnCtx ctx;
                x = nn::batchnorm(x, params_[layer_params_[i].gamma].value,
                                  params_[layer_params_[i].beta].value,
                                  params_[layer_params_[i].rmean].value,
                                  params_[layer_params_[i].rvar].value, training,
                                  caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::Relu: {
                nn::ReluCtx ctx;
                x = nn::relu(x, caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::Flatten: {
                nn::FlattenCtx ctx;
                x = nn::flatten(x, caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::Fc: {
                nn::FcCtx ctx;
                x = nn::fc(x, params_[layer_params_[i].w].value, params_[layer_params_[i].b].value,
                           caches ? &ctx : nullptr);
                cache = std::move(ctx);
                break;
            }
            case LayerKind::SpikeConvert:
                x = nn::spike_convert(x, config_.threshold_for(L));
                break;
        }
        if (caches) {
            (*caches)[i - begin] = std::move(cache);
        }
    }
    return x;
}

Tensor Model::backward_stack(const Tensor& gout, size_t begin, size_t end,
                             const std::vector<LayerCache>& caches) {
    Tensor g = gout;
    for (size_t i = end; i-- > begin;) {
        const LayerSpec& L = config_.layers[i];
        const LayerCache& cache = caches[i - begin];
        switch (L.kind) {
            case LayerKind::Conv: {
                Tensor gx;
                nn::conv2d_backward(g, std::get<nn::ConvCtx>(cache),
                                    params_[layer_params_[i].w].value, &gx,
                                    params_[layer_params_[i].w].grad,
                                    params_[layer_params_[i].b].grad);
                g = std::move(gx);
                break;
            }
            case LayerKind::MaxPool: {
                Tensor gx;
                nn::maxpool_backward(g, std::get<nn::PoolCtx>(cache), gx);
                g = std::move(gx);
                break;
            }
            case LayerKind::BatchNorm: {
                Tensor gx;
                nn::batchnorm_backward(g, std::get<nn::BnCtx>(cache),
                                       params_[layer_params_[i].gamma].value, gx,
                                       params_[layer_params_[i].gamma].grad,
                                       params_[layer_params_[i].beta].grad);
                g = std::move(gx);
                break;
            }
            case LayerKind::Relu: {
                Tensor gx;
                nn::relu_backward(g, std::get<nn::ReluCtx>(cache), gx);
                g = std::move(gx);
                break;
            }
            case LayerKind::Flatten: {
                const auto& ctx = std::get<nn::FlattenCtx>(cache);
                g = Tensor(ctx.in_shape, std::move(g.data));
                break;
            }
            case LayerKind::Fc: {
                Tensor gx;
                nn::fc_backward(g, std::get<nn::FcCtx>(cache), params_[layer_params_[i].w].value,
                                &gx, params_[layer_params_[i].w].grad,
                                params_[layer_params_[i].b].grad);
                g = std::move(gx);
                break;
            }
            case LayerKind::SpikeConvert:
                throw ConfigError("spike_convert cannot appear inside a differentiable stack");
        }
    }
    return g;
}

ForwardTrace Model::forward_clip(const std::vector<StateFrame>& frames, bool training) {
    return forward_clip(std::vector<std::vector<StateFrame>>{frames}, training);
}

ForwardTrace Model::forward_clip(const std::vector<std::vector<StateFrame>>& batch_frames,
                                 bool training, bool record) {
    if (batch_frames.empty() || batch_frames[0].empty()) {
        throw ConfigError("forward_clip needs at least one frame");
    }
    const size_t B = batch_frames.size();
    const size_t num_passes = batch_frames[0].size();
    for (const auto& f : batch_frames) {
        if (f.size() != num_passes) {
            throw ShapeError("all clips in a batch must share the frame schedule");
        }
    }
    const size_t H = config_.input_geometry.height;
    const size_t W = config_.input_geometry.width;
    const size_t F = config_.rf_length();
    const size_t C = config_.num_classes();
    const bool rn_in = config_.r_in.kind == EncoderKind::RN;
    const double in_scale = rn_in ? 1.0 / config_.r_in.params.g_max : 1.0;

    // One private R_f per clip in the batch.
    std::vector<ReservoirLayer> rf;
    rf.reserve(B);
    for (size_t b = 0; b < B; ++b) {
        rf.push_back(ReservoirLayer::flat(config_.r_f.kind, config_.r_f.params, F,
                                          config_.r_f.effective_tap_window()));
    }

    const uint64_t clip_us = batch_frames[0].back().t_us;
    const uint64_t rf_interval = config_.r_f.interval_us;
    const uint64_t num_reads = clip_us / rf_interval;

    ForwardTrace trace;
    trace.logits = Tensor({B, C});
    uint64_t next_read = 1;

    auto do_read = [&](uint64_t t_read) {
        ReadRecord read;
        read.t_us = t_read;
        read.mlp_input = Tensor({B, F});
        const bool rn_f = config_.r_f.kind == EncoderKind::RN;
        const double scale = rn_f ? 1.0 / config_.r_f.params.g_max : 1.0;
        for (size_t b = 0; b < B; ++b) {
            for (size_t f = 0; f < F; ++f) {
                read.mlp_input.at2(b, f) = rf[b].read_node(f, t_read) * scale;
            }
        }
        std::vector<LayerCache> caches;
        if (record) caches.resize(config_.layers.size() - sc_index_ - 1);
        Tensor out = run_stack(read.mlp_input, sc_index_ + 1, config_.layers.size(), training,
                               record ? &caches : nullptr);
        for (size_t i = 0; i < trace.logits.size(); ++i) {
            trace.logits.data[i] += out.data[i];
        }
        if (record) {
            read.caches = std::move(caches);
            read.output = std::move(out);
            trace.reads.push_back(std::move(read));
        }
    };

    for (size_t k = 0; k < num_passes; ++k) {
        const uint64_t t_k = batch_frames[0][k].t_us;
        Tensor x({B, 2, H, W});
        for (size_t b = 0; b < B; ++b) {
            const StateFrame& fr = batch_frames[b][k];
            if (fr.channels != 2 || fr.height != H || fr.width != W) {
                throw ShapeError("frame shape does not match network input geometry");
            }
            if (fr.t_us != t_k) {
                throw ShapeError("frame schedules differ within batch");
            }
            for (size_t i = 0; i < fr.values.size(); ++i) {
                x.data[b * fr.values.size() + i] = fr.values[i] * in_scale;
            }
        }

        PassRecord pass;
        pass.t_us = t_k;
        std::vector<LayerCache> caches;
        if (record) caches.resize(sc_index_);
        Tensor pre = run_stack(x, 0, sc_index_, training, record ? &caches : nullptr);
        Tensor spikes = nn::spike_convert(pre, config_.threshold_for(config_.layers[sc_index_]));

        if (record) {
            pass.caches = std::move(caches);
            pass.rf_pre_state = Tensor({B, F});
        }
        for (size_t b = 0; b < B; ++b) {
            for (size_t f = 0; f < F; ++f) {
                if (record) {
                    pass.rf_pre_state.at2(b, f) = rf[b].pre_spike_state(f, t_k);
                }
                if (spikes.at2(b, f) > 0.0) {
                    rf[b].apply_spike(f, t_k);
                }
            }
        }
        if (record) {
            pass.sc_pre = std::move(pre);
            pass.spikes = std::move(spikes);
            trace.passes.push_back(std::move(pass));
        }

        const uint64_t t_next = k + 1 < num_passes ? batch_frames[0][k + 1].t_us : UINT64_MAX;
        while (next_read <= num_reads && next_read * rf_interval >= t_k &&
               next_read * rf_interval < t_next) {
            do_read(next_read * rf_interval);
            ++next_read;
        }
    }
    trace.logits.check_finite("logits");
    return trace;
}

void Model::backward_clip(const ForwardTrace& trace, const Tensor& dlogits) {
    if (trace.passes.empty() || trace.reads.empty()) {
        throw ConfigError("backward_clip requires a recorded trace");
    }
    const size_t B = trace.logits.shape[0];
    const size_t F = config_.rf_length();
    if (!dlogits.same_shape(trace.logits)) {
        throw ShapeError("dlogits shape mismatch");
    }
    const EncoderKind rf_kind = config_.r_f.kind;
    const DeviceParams& rfp = config_.r_f.params;
    const double rf_scale = rf_kind == EncoderKind::RN ? 1.0 / rfp.g_max : 1.0;
    const uint64_t tap_window = config_.r_f.effective_tap_window();

    std::vector<Tensor> dspk(trace.passes.size(), Tensor({B, F}));

    for (const ReadRecord& read : trace.reads) {
        // d logits / d read output is the identity: potentials accumulate.
        Tensor g_state = backward_stack(dlogits, sc_index_ + 1, config_.layers.size(), read.caches);
        for (double& v : g_state.data) v *= rf_scale;

        switch (rf_kind) {
            case EncoderKind::RN: {
                // Linearized path: read = sum_k P_c*(G_max - Ghat_k)*spk_k
                // * exp(-(T - t_k)/tau), with Ghat_k frozen at its forward
                // value (stop-gradient through the potentiation history).
                for (size_t k = 0; k < trace.passes.size(); ++k) {
                    const PassRecord& pass = trace.passes[k];
                    if (pass.t_us > read.t_us) break;
                    const double decay =
                        std::exp(-static_cast<double>(read.t_us - pass.t_us) / rfp.tau_us);
                    for (size_t i = 0; i < B * F; ++i) {
                        const double c = rfp.p_c * (rfp.g_max - pass.rf_pre_state.data[i]) * decay;
                        dspk[k].data[i] += g_state.data[i] * c;
                    }
                }
                break;
            }
            case EncoderKind::TS: {
                // Only a pass not overwritten by a later spike contributes.
                std::vector<uint8_t> overwritten(B * F, 0);
                for (size_t k = trace.passes.size(); k-- > 0;) {
                    const PassRecord& pass = trace.passes[k];
                    if (pass.t_us > read.t_us) continue;
                    const double decay =
                        std::exp(-static_cast<double>(read.t_us - pass.t_us) / rfp.tau_us);
                    for (size_t i = 0; i < B * F; ++i) {
                        if (!overwritten[i]) {
                            dspk[k].data[i] += g_state.data[i] * decay;
                            if (pass.spikes.data[i] > 0.0) overwritten[i] = 1;
                        }
                    }
                }
                break;
            }
            case EncoderKind::TAP: {
                const uint64_t windows = read.t_us / tap_window;
                if (windows == 0) break;
                const double c = 1.0 / static_cast<double>(windows);
                for (size_t k = 0; k < trace.passes.size(); ++k) {
                    if (trace.passes[k].t_us > read.t_us) break;
                    for (size_t i = 0; i < B * F; ++i) {
                        dspk[k].data[i] += g_state.data[i] * c;
                    }
                }
                break;
            }
        }
    }

    const double threshold = config_.threshold_for(config_.layers[sc_index_]);
    for (size_t k = 0; k < trace.passes.size(); ++k) {
        const PassRecord& pass = trace.passes[k];
        Tensor du(pass.sc_pre.shape);
        bool any = false;
        for (size_t i = 0; i < du.size(); ++i) {
            double g = dspk[k].data[i] *
                       nn::atan_surrogate_grad(pass.sc_pre.data[i], threshold, surrogate_alpha);
            du.data[i] = g;
            any = any || g != 0.0;
        }
        if (any) {
            backward_stack(du, 0, sc_index_, pass.caches);
        }
    }
}

// ---- checkpoint ----

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
        throw FormatError(std::string("truncated checkpoint while reading ") + what);
    }
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(buf[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write("RNWT", 4);
    put_le<uint32_t>(out, 1);
    put_le<uint64_t>(out, params_.size());
    for (const ParamTensor& p : params_) {
        put_le<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_le<uint32_t>(out, static_cast<uint32_t>(p.value.rank()));
        for (size_t d : p.value.shape) put_le<uint64_t>(out, d);
        for (double v : p.value.data) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            put_le<uint64_t>(out, bits);
        }
    }
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

void Model::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RNWT", 4) != 0) {
        throw FormatError("bad magic, expected RNWT");
    }
    uint32_t version = get_le<uint32_t>(in, "version");
    if (version != 1) {
        throw FormatError("unsupported RNWT version " + std::to_string(version));
    }
    uint64_t count = get_le<uint64_t>(in, "count");
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = get_le<uint32_t>(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw FormatError("truncated checkpoint name");
        }
        uint32_t rank = get_le<uint32_t>(in, "rank");
        std::vector<size_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<size_t>(get_le<uint64_t>(in, "dim"));
        }
        size_t n = Tensor::numel(shape);
        std::vector<double> data(n);
        for (size_t v = 0; v < n; ++v) {
            uint64_t bits = get_le<uint64_t>(in, "value");
            std::memcpy(&data[v], &bits, sizeof(double));
        }
        auto it = std::find_if(params_.begin(), params_.end(),
                               [&](const ParamTensor& p) { return p.name == name; });
        if (it == params_.end()) {
            throw FormatError("checkpoint tensor '" + name + "' not in model");
        }
        if (it->value.shape != shape) {
            throw ShapeError("checkpoint tensor '" + name + "' shape mismatch");
        }
        it->value.data = std::move(data);
    }
}

double cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
    if (logits.rank() != 2 || logits.shape[0] != labels.size()) {
        throw ShapeError("loss expects (batch, classes) logits matching labels");
    }
    const size_t B = logits.shape[0], C = logits.shape[1];
    logits.check_finite("logits");
    if (dlogits) *dlogits = Tensor(logits.shape);
    double loss = 0.0;
    for (size_t b = 0; b < B; ++b) {
        if (labels[b] < 0 || static_cast<size_t>(labels[b]) >= C) {
            throw ConfigError("label " + std::to_string(labels[b]) + " out of range");
        }
        double m = logits.at2(b, 0);
        for (size_t c = 1; c < C; ++c) m = std::max(m, logits.at2(b, c));
        double denom = 0.0;
        for (size_t c = 0; c < C; ++c) denom += std::exp(logits.at2(b, c) - m);
        const double log_denom = std::log(denom);
        loss += -(logits.at2(b, static_cast<size_t>(labels[b])) - m - log_denom);
        if (dlogits) {
            for (size_t c = 0; c < C; ++c) {
                double p = std::exp(logits.at2(b, c) - m) / denom;
                dlogits->at2(b, c) =
                    (p - (static_cast<size_t>(labels[b]) == c ? 1.0 : 0.0)) / static_cast<double>(B);
            }
        }
    }
    return loss / static_cast<double>(B);
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const size_t B = logits.shape[0], C = logits.shape[1];
    std::vector<int> out(B, 0);
    for (size_t b = 0; b < B; ++b) {
        for (size_t c = 1; c < C; ++c) {
            if (logits.at2(b, c) > logits.at2(b, static_cast<size_t>(out[b]))) {
                out[b] = static_cast<int>(c);
            }
        }
    }
    return out;
}

}  // namespace rnnet

#include "rnnet/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace rnnet {

const char* const kAblateRows[5][2] = {
    {"TS", "TS"}, {"TS", "RN"}, {"RN", "TS"}, {"RN", "RN"}, {"RN", "TAP"},
};

namespace {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
    if (name.empty()) return dir;
    if (fs::path(name).is_absolute() || dir.empty()) return name;
    return (fs::path(dir) / name).string();
}

EventStream read_stream_file(const std::string& path) {
    if (!fs::exists(path)) throw IoError("no such event file: " + path);
    if (fs::path(path).extension() == ".csv") return parse_csv_file(path);
    return parse_binary_file(path);
}

std::string fmt_frame_name(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06zu.rnsf", index);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

BarDirection direction_from_string(const std::string& s) {
    if (s == "left") return BarDirection::Left;
    if (s == "right") return BarDirection::Right;
    if (s == "up") return BarDirection::Up;
    if (s == "down") return BarDirection::Down;
    throw ConfigError("unknown bar direction: " + s);
}

Geometry geometry_from_json(const json& j) {
    Geometry g;
    g.width = j.at("width").get<uint32_t>();
    g.height = j.at("height").get<uint32_t>();
    return g;
}

BarSpec bar_from_json(const json& j) {
    BarSpec b;
    b.geometry = geometry_from_json(j);
    if (j.contains("direction")) b.direction = direction_from_string(j.at("direction"));
    if (j.contains("speed_px_per_s")) b.speed_px_per_s = j.at("speed_px_per_s").get<double>();
    if (j.contains("duration_us")) b.duration_us = j.at("duration_us").get<uint64_t>();
    if (j.contains("event_rate")) b.event_rate = j.at("event_rate").get<double>();
    if (j.contains("seed")) b.seed = j.at("seed").get<uint64_t>();
    if (j.contains("bar_width")) b.bar_width = j.at("bar_width").get<uint32_t>();
    return b;
}

void parse_events_section(const json& j, RunConfig& c) {
    if (j.contains("input")) c.input_events = j.at("input").get<std::string>();
    if (j.contains("bar")) c.synth_bar = bar_from_json(j.at("bar"));
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    if (j.contains("task")) c.synth_task = j.at("task").get<std::string>();
    if (j.contains("train_count")) c.train_count = j.at("train_count").get<size_t>();
    if (j.contains("test_count")) c.test_count = j.at("test_count").get<size_t>();
    if (j.contains("geometry")) {
        c.bars.geometry = geometry_from_json(j.at("geometry"));
        c.longmem.geometry = c.bars.geometry;
    }
    if (j.contains("clip_us")) {
        c.bars.clip_us = j.at("clip_us").get<uint64_t>();
        c.longmem.clip_us = c.bars.clip_us;
    }
    if (j.contains("speed_px_per_s")) c.bars.speed_px_per_s = j.at("speed_px_per_s").get<double>();
    if (j.contains("event_rate")) c.bars.event_rate = j.at("event_rate").get<double>();
    if (j.contains("burst_end_us")) c.longmem.burst_end_us = j.at("burst_end_us").get<uint64_t>();
    if (j.contains("burst_spikes_per_pixel")) {
        c.longmem.burst_spikes_per_pixel = j.at("burst_spikes_per_pixel").get<size_t>();
    }
    if (!c.synth_task.empty() && c.synth_task != "bars" && c.synth_task != "longmem") {
        throw ConfigError("unknown synth task: " + c.synth_task);
    }
}

void parse_training_section(const json& j, TrainConfig& t) {
    if (j.contains("lr")) t.lr = j.at("lr").get<double>();
    if (j.contains("weight_decay")) t.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("lr_factor")) t.lr_factor = j.at("lr_factor").get<double>();
    if (j.contains("patience")) t.patience = j.at("patience").get<int>();
    if (j.contains("lr_threshold")) t.lr_threshold = j.at("lr_threshold").get<double>();
    if (j.contains("min_lr")) t.min_lr = j.at("min_lr").get<double>();
    if (j.contains("batch")) t.batch = j.at("batch").get<size_t>();
    if (j.contains("epochs")) t.epochs = j.at("epochs").get<size_t>();
    if (j.contains("surrogate_alpha")) t.surrogate_alpha = j.at("surrogate_alpha").get<double>();
    if (j.contains("noise_sigma")) t.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("stop_at_test_acc")) t.stop_at_test_acc = j.at("stop_at_test_acc").get<double>();
}

void parse_energy_section(const json& j, RunConfig& c) {
    ElectricalParams& e = c.electrical;
    if (j.contains("v_pulse")) e.v_pulse = j.at("v_pulse").get<double>();
    if (j.contains("v_read")) e.v_read = j.at("v_read").get<double>();
    if (j.contains("t_pulse")) e.t_pulse = j.at("t_pulse").get<double>();
    if (j.contains("t_read")) e.t_read = j.at("t_read").get<double>();
    if (j.contains("g_max")) e.g_max = j.at("g_max").get<double>();
    if (j.contains("adc_bits")) e.adc_bits = j.at("adc_bits").get<int>();
    if (j.contains("adc_power_w")) e.adc_power_w = j.at("adc_power_w").get<double>();
    if (j.contains("accel_tops_per_w")) e.accel_tops_per_w = j.at("accel_tops_per_w").get<double>();
    if (j.contains("simulate_rf")) c.simulate_rf = j.at("simulate_rf").get<bool>();
    if (j.contains("encode_dir")) c.encode_dir = j.at("encode_dir").get<std::string>();
}

Dataset load_dataset_dir(const std::string& dir) {
    const std::string labels_path = join(dir, "labels.csv");
    std::ifstream in(labels_path);
    if (!in) throw IoError("cannot open " + labels_path);
    Dataset ds;
    int max_label = -1;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw FormatError(labels_path + ":" + std::to_string(lineno) +
                              ": expected `file,label`");
        }
        const std::string file = line.substr(0, comma);
        int label;
        try {
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw FormatError(labels_path + ":" + std::to_string(lineno) + ": bad label");
        }
        if (label < 0) {
            throw FormatError(labels_path + ":" + std::to_string(lineno) + ": negative label");
        }
        ds.streams.push_back(read_stream_file(join(dir, file)));
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    if (ds.streams.empty()) throw IoError(labels_path + ": no samples listed");
    ds.num_classes = static_cast<size_t>(max_label) + 1;
    return ds;
}

void write_dataset_dir(const Dataset& ds, const std::string& dir) {
    ensure_dir(dir);
    std::ostringstream labels;
    for (size_t i = 0; i < ds.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "stream_%05zu.rnev", i);
        write_binary_file(ds.streams[i], join(dir, buf));
        labels << buf << ',' << ds.labels[i] << '\n';
    }
    write_text_file(join(dir, "labels.csv"), labels.str());
}

TrainConfig effective_training(const RunConfig& config) {
    TrainConfig t = config.training;
    t.seed = config.seed;
    t.threads = config.threads;
    return t;
}

// The sensor grid as seen by the digitizer: when the stack opens with a
// maxpool the read circuitry samples the pooled grid, otherwise the full
// input resolution.
size_t digitized_input_nodes(const NetworkConfig& config) {
    const auto chain = config.shape_chain();
    if (!config.layers.empty() && config.layers[0].kind == LayerKind::MaxPool) {
        return chain[1].count();
    }
    return chain[0].count();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::string& base_dir) {
    RunConfig c;
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
        if (j.contains("threads")) c.threads = j.at("threads").get<int>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
        if (j.contains("events")) parse_events_section(j.at("events"), c);
        if (j.contains("network")) {
            const json& n = j.at("network");
            if (n.contains("file")) {
                c.network = NetworkConfig::load_file(join(base_dir, n.at("file")));
            } else {
                c.network = NetworkConfig::from_json(n);
            }
            c.network.validate();
            c.has_network = true;
        }
        if (j.contains("training")) parse_training_section(j.at("training"), c.training);
        if (j.contains("energy")) parse_energy_section(j.at("energy"), c);
        if (j.contains("ablate")) {
            const json& a = j.at("ablate");
            if (a.contains("ts_tau_in_us")) c.ts_tau_in_us = a.at("ts_tau_in_us").get<double>();
            if (a.contains("ts_tau_f_us")) c.ts_tau_f_us = a.at("ts_tau_f_us").get<double>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    c.electrical.validate();
    c.bars.seed = c.seed;
    c.longmem.seed = c.seed;
    return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open run config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j, fs::path(path).parent_path().string());
}

void RunConfig::require_network() const {
    if (!has_network) throw ConfigError("run config has no `network` section");
}

void load_datasets(const RunConfig& config, Dataset& train_set, Dataset& test_set) {
    if (!config.dataset_dir.empty()) {
        train_set = load_dataset_dir(join(config.dataset_dir, "train"));
        test_set = load_dataset_dir(join(config.dataset_dir, "test"));
        if (train_set.num_classes < test_set.num_classes) {
            train_set.num_classes = test_set.num_classes;
        }
        test_set.num_classes = train_set.num_classes;
        return;
    }
    if (config.synth_task == "bars") {
        BarTaskSpec train_spec = config.bars;
        BarTaskSpec test_spec = config.bars;
        test_spec.seed = config.bars.seed + 0x9e3779b9ull;
        train_set = make_bar_dataset(train_spec, config.train_count);
        test_set = make_bar_dataset(test_spec, config.test_count);
        return;
    }
    if (config.synth_task == "longmem") {
        LongMemTaskSpec train_spec = config.longmem;
        LongMemTaskSpec test_spec = config.longmem;
        test_spec.seed = config.longmem.seed + 0x9e3779b9ull;
        train_set = make_longmem_dataset(train_spec, config.train_count);
        test_set = make_longmem_dataset(test_spec, config.test_count);
        return;
    }
    throw ConfigError("events section names neither a dataset_dir nor a synth task");
}

void cmd_synth(const RunConfig& config) {
    ensure_dir(config.output_dir);
    if (config.synth_bar) {
        EventStream stream = synthesize_moving_bar(*config.synth_bar);
        const std::string path = join(config.output_dir, "events.rnev");
        write_binary_file(stream, path);
        std::cout << "wrote " << path << " (" << stream.events.size() << " events)\n";
        return;
    }
    Dataset train_set, test_set;
    load_datasets(config, train_set, test_set);
    write_dataset_dir(train_set, join(config.output_dir, "train"));
    write_dataset_dir(test_set, join(config.output_dir, "test"));
    std::cout << "wrote " << train_set.size() << " train / " << test_set.size()
              << " test streams under " << config.output_dir << "\n";
}

void cmd_encode(const RunConfig& config) {
    config.require_network();
    EventStream stream;
    if (!config.input_events.empty()) {
        stream = read_stream_file(config.input_events);
    } else if (config.synth_bar) {
        stream = synthesize_moving_bar(*config.synth_bar);
    } else {
        throw ConfigError("encode needs events.input or events.bar");
    }
    if (stream.geometry != config.network.input_geometry) {
        throw ConfigError("event geometry does not match network input geometry");
    }

    const ReservoirSpec& rin = config.network.r_in;
    ReservoirLayer layer(rin.kind, rin.params, 2, stream.geometry.height, stream.geometry.width,
                         rin.effective_tap_window());
    std::vector<SpikeRecord> spikes;
    const std::vector<StateFrame> frames = encode_stream(stream, layer, rin.interval_us, &spikes);

    ensure_dir(config.output_dir);
    json manifest;
    manifest["encoder"] = to_string(rin.kind);
    manifest["interval_us"] = rin.interval_us;
    manifest["frame_count"] = frames.size();
    manifest["geometry"] = {{"width", stream.geometry.width}, {"height", stream.geometry.height}};
    manifest["duration_us"] = stream.duration_us;
    manifest["empty"] = stream.events.empty();
    manifest["spike_count"] = spikes.size();
    manifest["spike_log"] = "spikes.csv";
    json frame_list = json::array();
    for (size_t i = 0; i < frames.size(); ++i) {
        const std::string name = fmt_frame_name(i + 1);
        write_frame_binary_file(frames[i], join(config.output_dir, name));
        frame_list.push_back(name);
    }
    manifest["frames"] = frame_list;

    std::ostringstream slog;
    slog << "t_us,node,pre_conductance\n";
    for (const SpikeRecord& s : spikes) {
        slog << s.t_us << ',' << s.node << ',' << format_double(s.pre_conductance) << '\n';
    }
    write_text_file(join(config.output_dir, "spikes.csv"), slog.str());
    write_text_file(join(config.output_dir, "manifest.json"), manifest.dump(2) + "\n");
    std::cout << "encoded " << frames.size() << " frames, " << spikes.size() << " spikes -> "
              << config.output_dir << "\n";
}

void cmd_train(const RunConfig& config) {
    config.require_network();
    Dataset train_set, test_set;
    load_datasets(config, train_set, test_set);
    if (train_set.num_classes > config.network.num_classes()) {
        throw ConfigError("dataset has more classes than the network emits");
    }
    ensure_dir(config.output_dir);

    Model model(config.network);
    model.init_weights(config.seed);
    const TrainResult result = train(model, train_set, test_set, effective_training(config));

    write_history_csv(result.history, join(config.output_dir, "history.csv"));
    model.save_checkpoint(join(config.output_dir, "checkpoint.rnwt"));
    const EpochStats& last = result.history.back();
    json metrics;
    metrics["epochs_run"] = result.history.size();
    metrics["train_loss"] = last.train_loss;
    metrics["train_acc"] = last.train_acc;
    metrics["test_acc"] = last.test_acc;
    metrics["lr"] = last.lr;
    metrics["encoder_in"] = to_string(config.network.r_in.kind);
    metrics["encoder_f"] = to_string(config.network.r_f.kind);
    write_text_file(join(config.output_dir, "metrics.json"), metrics.dump(2) + "\n");
    std::cout << "final test accuracy " << last.test_acc << " after " << result.history.size()
              << " epochs\n";
}

void cmd_eval(const RunConfig& config) {
    config.require_network();
    if (config.checkpoint.empty()) throw ConfigError("eval needs a checkpoint path");
    Dataset train_set, test_set;
    load_datasets(config, train_set, test_set);

    Model model(config.network);
    model.load_checkpoint(config.checkpoint);
    const double acc = evaluate(model, test_set, config.threads);
    ensure_dir(config.output_dir);
    json metrics;
    metrics["test_acc"] = acc;
    metrics["samples"] = test_set.size();
    write_text_file(join(config.output_dir, "eval.json"), metrics.dump(2) + "\n");
    std::cout << "test accuracy " << acc << " on " << test_set.size() << " samples\n";
}

void cmd_ablate(const RunConfig& config) {
    config.require_network();
    Dataset train_set, test_set;
    load_datasets(config, train_set, test_set);
    ensure_dir(config.output_dir);

    std::ostringstream csv;
    csv << "r_in,r_f,test_acc\n";
    for (const auto& row : kAblateRows) {
        NetworkConfig net = config.network;
        net.r_in.kind = encoder_kind_from_string(row[0]);
        net.r_f.kind = encoder_kind_from_string(row[1]);
        if (net.r_in.kind == EncoderKind::TS && config.ts_tau_in_us > 0) {
            net.r_in.params.tau_us = config.ts_tau_in_us;
        }
        if (net.r_f.kind == EncoderKind::TS && config.ts_tau_f_us > 0) {
            net.r_f.params.tau_us = config.ts_tau_f_us;
        }
        net.validate();
        Model model(net);
        model.init_weights(config.seed);
        TrainConfig tc = effective_training(config);
        tc.stop_at_test_acc = -1.0;  // every row trains the full budget
        const TrainResult result = train(model, train_set, test_set, tc);
        const double acc = result.history.back().test_acc;
        csv << row[0] << ',' << row[1] << ',' << format_double(acc) << '\n';
        std::cout << row[0] << '/' << row[1] << ": " << acc << "\n";
    }
    write_text_file(join(config.output_dir, "ablation.csv"), csv.str());
}

void cmd_energy(const RunConfig& config) {
    config.require_network();
    const std::string dir = config.encode_dir.empty() ? config.output_dir : config.encode_dir;
    const std::string manifest_path = join(dir, "manifest.json");
    std::ifstream min(manifest_path);
    if (!min) throw IoError("missing encode manifest: " + manifest_path);
    json manifest;
    try {
        min >> manifest;
    } catch (const json::exception& e) {
        throw ConfigError(manifest_path + ": " + e.what());
    }

    EnergyInputs inputs;
    const uint64_t duration_us = manifest.at("duration_us").get<uint64_t>();
    inputs.clip_seconds = static_cast<double>(duration_us) / 1e6;
    if (inputs.clip_seconds <= 0) throw ConfigError("encode manifest has zero duration");

    for (const auto& name : manifest.at("frames")) {
        inputs.frames_in.push_back(parse_frame_binary_file(join(dir, name.get<std::string>())));
    }
    {
        const std::string spath = join(dir, manifest.at("spike_log").get<std::string>());
        std::ifstream sin(spath);
        if (!sin) throw IoError("missing spike log: " + spath);
        std::string line;
        std::getline(sin, line);  // header
        while (std::getline(sin, line)) {
            if (line.empty()) continue;
            SpikeRecord rec;
            char* end = nullptr;
            rec.t_us = std::strtoull(line.c_str(), &end, 10);
            if (!end || *end != ',') throw FormatError(spath + ": bad spike row");
            rec.node = std::strtoull(end + 1, &end, 10);
            if (!end || *end != ',') throw FormatError(spath + ": bad spike row");
            rec.pre_conductance = std::strtod(end + 1, nullptr);
            inputs.spikes_in.push_back(rec);
        }
    }

    const NetworkConfig& net = config.network;
    const size_t passes = inputs.frames_in.size();
    inputs.adc_nodes_in = digitized_input_nodes(net);
    inputs.adc_nodes_f = net.rf_length();
    inputs.macs = count_macs(net, passes);

    if (config.simulate_rf) {
        Model model(net);
        if (!config.checkpoint.empty()) {
            model.load_checkpoint(config.checkpoint);
        } else {
            model.init_weights(config.seed);
        }
        const ForwardTrace trace = model.forward_clip(inputs.frames_in, false);
        const double gf = net.r_f.params.g_max;
        const double spike_scale = net.r_f.kind == EncoderKind::RN ? 1.0 : gf;
        const size_t F = net.rf_length();
        for (const PassRecord& pass : trace.passes) {
            for (size_t f = 0; f < F; ++f) {
                if (pass.spikes.at2(0, f) > 0.0) {
                    inputs.spikes_f.push_back(
                        {pass.t_us, f, pass.rf_pre_state.at2(0, f) * spike_scale});
                }
            }
        }
        for (const ReadRecord& read : trace.reads) {
            StateFrame frame;
            frame.t_us = read.t_us;
            frame.channels = 1;
            frame.height = 1;
            frame.width = static_cast<uint32_t>(F);
            frame.values.resize(F);
            for (size_t f = 0; f < F; ++f) frame.values[f] = read.mlp_input.at2(0, f) * gf;
            inputs.frames_f.push_back(std::move(frame));
        }
    }

    const EnergyReport report = full_report(inputs, config.electrical);
    ensure_dir(config.output_dir);
    json out = report.to_json();
    out["retrievals_in"] = passes;
    out["retrievals_f"] = duration_us / net.r_f.interval_us;
    out["adc_nodes_in"] = inputs.adc_nodes_in;
    out["adc_nodes_f"] = inputs.adc_nodes_f;
    write_text_file(join(config.output_dir, "energy.json"), out.dump(2) + "\n");
    const std::string table = report.to_table();
    write_text_file(join(config.output_dir, "energy.txt"), table);
    std::cout << table;
}

double cmd_gradcheck(const RunConfig& config, double epsilon, size_t samples) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    double max_rel = 0.0;
    size_t checked = 0;

    auto randomize = [&](Tensor& t) {
        for (double& v : t.data) v = unif(rng);
    };
    // Fills with well-separated distinct values so eps-perturbation cannot
    // flip a maxpool argmax or a relu sign.
    auto randomize_distinct = [&](Tensor& t) {
        const size_t n = t.size();
        std::vector<double> grid(n);
        for (size_t i = 0; i < n; ++i) {
            const double u = 0.1 + 1.8 * static_cast<double>(i) / std::max<size_t>(1, n - 1);
            grid[i] = (i % 2 == 0) ? u : -u;
        }
        std::shuffle(grid.begin(), grid.end(), rng);
        t.data = std::move(grid);
    };
    auto record = [&](double analytic, double numeric) {
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
        max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        ++checked;
    };
    // Central difference of loss_fn against analytic at sampled entries.
    auto check_tensor = [&](Tensor& target, const Tensor& analytic, auto&& loss_fn) {
        const size_t n = std::min(samples, target.size());
        for (size_t s = 0; s < n; ++s) {
            const size_t idx = target.size() <= samples ? s : rng() % target.size();
            const double orig = target.data[idx];
            target.data[idx] = orig + epsilon;
            const double lp = loss_fn();
            target.data[idx] = orig - epsilon;
            const double lm = loss_fn();
            target.data[idx] = orig;
            record(analytic.data[idx], (lp - lm) / (2 * epsilon));
        }
    };
    auto dot = [](const Tensor& a, const Tensor& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
        return s;
    };

    for (int instance = 0; instance < 3; ++instance) {
        {  // conv2d, varying pad/stride
            const size_t pad = instance % 2, stride = 1 + instance % 2;
            Tensor x({2, 3, 6, 6}), w({4, 3, 3, 3}), b({4});
            randomize(x);
            randomize(w);
            randomize(b);
            Tensor r = nn::conv2d(x, w, b, pad, stride);
            randomize(r);
            auto loss = [&]() { return dot(nn::conv2d(x, w, b, pad, stride), r); };
            nn::ConvCtx ctx;
            nn::conv2d(x, w, b, pad, stride, &ctx);
            Tensor gx, gw, gb;
            nn::conv2d_backward(r, ctx, w, &gx, gw, gb);
            check_tensor(x, gx, loss);
            check_tensor(w, gw, loss);
            check_tensor(b, gb, loss);
        }
        {  // maxpool
            Tensor x({2, 3, 6, 6});
            randomize_distinct(x);
            Tensor r = nn::maxpool(x, 2, 0, 2);
            randomize(r);
            auto loss = [&]() { return dot(nn::maxpool(x, 2, 0, 2), r); };
            nn::PoolCtx ctx;
            nn::maxpool(x, 2, 0, 2, &ctx);
            Tensor gx;
            nn::maxpool_backward(r, ctx, gx);
            check_tensor(x, gx, loss);
        }
        {  // batchnorm, train mode, rank 4 and rank 2
            for (const std::vector<size_t>& shape :
                 {std::vector<size_t>{3, 4, 5, 5}, std::vector<size_t>{6, 5}}) {
                const size_t channels = shape[1];
                Tensor x(shape), gamma({channels}), beta({channels});
                randomize(x);
                randomize(gamma);
                randomize(beta);
                Tensor r(shape);
                randomize(r);
                auto loss = [&]() {
                    Tensor rm({channels}), rv({channels});
                    rv.fill(1.0);
                    return dot(nn::batchnorm(x, gamma, beta, rm, rv, true), r);
                };
                nn::BnCtx ctx;
                Tensor rm({channels}), rv({channels});
                rv.fill(1.0);
                nn::batchnorm(x, gamma, beta, rm, rv, true, &ctx);
                Tensor gx, ggamma, gbeta;
                nn::batchnorm_backward(r, ctx, gamma, gx, ggamma, gbeta);
                check_tensor(x, gx, loss);
                check_tensor(gamma, ggamma, loss);
                check_tensor(beta, gbeta, loss);
            }
        }
        {  // fully connected
            Tensor x({4, 7}), w({5, 7}), b({5});
            randomize(x);
            randomize(w);
            randomize(b);
            Tensor r({4, 5});
            randomize(r);
            auto loss = [&]() { return dot(nn::fc(x, w, b), r); };
            nn::FcCtx ctx;
            nn::fc(x, w, b, &ctx);
            Tensor gx, gw, gb;
            nn::fc_backward(r, ctx, w, &gx, gw, gb);
            check_tensor(x, gx, loss);
            check_tensor(w, gw, loss);
            check_tensor(b, gb, loss);
        }
        {  // cross-entropy
            Tensor logits({4, 5});
            randomize(logits);
            std::vector<int> labels(4);
            for (int& l : labels) l = static_cast<int>(rng() % 5);
            auto loss = [&]() { return cross_entropy_loss(logits, labels); };
            Tensor dlogits;
            cross_entropy_loss(logits, labels, &dlogits);
            check_tensor(logits, dlogits, loss);
        }
    }

    {  // R_f read path: finite diff on the MLP parameters of a tiny model.
        NetworkConfig net;
        net.input_geometry = {6, 6};
        net.r_in.interval_us = 30'000;
        net.r_f.interval_us = 60'000;
        net.layers = {
            {LayerKind::Conv, 3, 3, 1, 1}, {LayerKind::BatchNorm},    {LayerKind::Relu},
            {LayerKind::MaxPool, 2, 0, 0, 2}, {LayerKind::Flatten},   {LayerKind::SpikeConvert},
            {LayerKind::Fc, 0, 8},            {LayerKind::Relu},      {LayerKind::Fc, 0, 3},
        };
        net.validate();
        Model model(net);
        model.init_weights(config.seed + 1);

        std::uniform_real_distribution<double> state(0.0, net.r_in.params.g_max);
        std::vector<StateFrame> frames(4);
        for (size_t k = 0; k < frames.size(); ++k) {
            StateFrame& f = frames[k];
            f.t_us = (k + 1) * net.r_in.interval_us;
            f.channels = 2;
            f.height = 6;
            f.width = 6;
            f.values.resize(72);
            for (double& v : f.values) v = state(rng);
        }
        std::vector<std::vector<StateFrame>> batch = {frames};
        const std::vector<int> labels = {1};
        auto loss = [&]() {
            ForwardTrace t = model.forward_clip(batch, true, false);
            return cross_entropy_loss(t.logits, labels);
        };
        model.zero_grads();
        ForwardTrace trace = model.forward_clip(batch, true, true);
        Tensor dlogits;
        cross_entropy_loss(trace.logits, labels, &dlogits);
        model.backward_clip(trace, dlogits);
        const size_t sc = net.sc_index();
        for (size_t li = sc + 1; li < net.layers.size(); ++li) {
            for (ParamTensor& p : model.params()) {
                if (!p.trainable) continue;
                const std::string prefix = "layer" + std::to_string(li) + ".";
                if (p.name.rfind(prefix, 0) != 0) continue;
                check_tensor(p.value, p.grad, loss);
            }
        }
    }

    std::cout << "gradcheck: " << checked << " comparisons, max relative error "
              << format_double(max_rel) << "\n";
    return max_rel;
}

}  // namespace rnnet

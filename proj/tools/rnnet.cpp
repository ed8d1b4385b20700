#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rnnet/commands.hpp"
#include "rnnet/errors.hpp"

namespace {

struct Overrides {
    std::string config_path;
    int threads = 0;       // 0 = not set on the command line
    long long seed = -1;   // <0 = not set
    std::string output_dir;
    std::string checkpoint;
    std::string input_events;
    std::string encode_dir;
};

void add_common(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("config", ov.config_path, "run config JSON")->required();
    cmd->add_option("--threads", ov.threads, "worker threads (1 = bit-reproducible)");
    cmd->add_option("--seed", ov.seed, "override config seed");
    cmd->add_option("--output-dir", ov.output_dir, "override output directory");
}

rnnet::RunConfig load(const Overrides& ov) {
    rnnet::RunConfig config = rnnet::RunConfig::load_file(ov.config_path);
    // Precedence: flag > env > config file.
    if (const char* env = std::getenv("RNNET_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) config.threads = n;
    }
    if (ov.threads >= 1) config.threads = ov.threads;
    if (ov.seed >= 0) config.seed = static_cast<uint64_t>(ov.seed);
    if (!ov.output_dir.empty()) config.output_dir = ov.output_dir;
    if (!ov.checkpoint.empty()) config.checkpoint = ov.checkpoint;
    if (!ov.input_events.empty()) config.input_events = ov.input_events;
    if (!ov.encode_dir.empty()) config.encode_dir = ov.encode_dir;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-camera reservoir network toolchain"};
    app.require_subcommand(1);

    Overrides ov;
    CLI::App* synth = app.add_subcommand("synth", "synthesize event streams");
    CLI::App* encode = app.add_subcommand("encode", "encode a stream into state frames");
    CLI::App* train = app.add_subcommand("train", "train the network");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    CLI::App* ablate = app.add_subcommand("ablate", "run the encoder combination grid");
    CLI::App* energy = app.add_subcommand("energy", "emit the hardware energy report");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    for (CLI::App* cmd : {synth, encode, train, eval, ablate, energy, gradcheck}) {
        add_common(cmd, ov);
    }
    eval->add_option("--checkpoint", ov.checkpoint, "checkpoint file");
    energy->add_option("--checkpoint", ov.checkpoint, "checkpoint for the feedback layer");
    energy->add_option("--encode-dir", ov.encode_dir, "encode artifact directory");
    encode->add_option("--input", ov.input_events, "event stream file");

    CLI11_PARSE(app, argc, argv);

    try {
        const rnnet::RunConfig config = load(ov);
        if (synth->parsed()) rnnet::cmd_synth(config);
        if (encode->parsed()) rnnet::cmd_encode(config);
        if (train->parsed()) rnnet::cmd_train(config);
        if (eval->parsed()) rnnet::cmd_eval(config);
        if (ablate->parsed()) rnnet::cmd_ablate(config);
        if (energy->parsed()) rnnet::cmd_energy(config);
        if (gradcheck->parsed()) {
            const double max_rel = rnnet::cmd_gradcheck(config);
            if (max_rel > 1e-3) {
                std::cerr << "gradient check failed: max relative error " << max_rel << "\n";
                return 4;
            }
        }
    } catch (const rnnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rnnet::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const rnnet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

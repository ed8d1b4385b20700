// End-to-end checks of the run-config loader, the subcommand entry points,
// and the installed binary's exit codes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rnnet/commands.hpp"

using namespace rnnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Scratch directory under the test's working directory, wiped on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::path("cli_scratch_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

size_t count_lines(const std::string& text) {
    size_t n = 0;
    for (char ch : text)
        if (ch == '\n') ++n;
    return n;
}

json tiny_network() {
    return json{
        {"input_geometry", {{"width", 8}, {"height", 8}}},
        {"sc_threshold", 0.3},
        {"r_in",
         {{"kind", "RN"}, {"p_c", 0.5}, {"tau_us", 60000}, {"g_max", 100e-6},
          {"interval_us", 100000}}},
        {"r_f",
         {{"kind", "RN"}, {"p_c", 0.1}, {"tau_us", 2000000}, {"g_max", 100e-6},
          {"interval_us", 500000}}},
        {"layers",
         json::array({
             {{"layer", "conv"}, {"kernel", 3}, {"out_channels", 4}, {"pad", 0}, {"stride", 1}},
             {{"layer", "maxpool"}, {"kernel", 2}, {"pad", 0}, {"stride", 2}},
             {{"layer", "batchnorm"}},
             {{"layer", "relu"}},
             {{"layer", "flatten"}},
             {{"layer", "spike_convert"}},
             {{"layer", "fc"}, {"out_channels", 8}},
             {{"layer", "batchnorm"}},
             {{"layer", "relu"}},
             {{"layer", "fc"}, {"out_channels", 2}},
         })},
    };
}

json tiny_bars_run(const std::string& output_dir) {
    return json{
        {"seed", 5},
        {"threads", 1},
        {"output_dir", output_dir},
        {"events",
         {{"task", "bars"},
          {"train_count", 8},
          {"test_count", 4},
          {"geometry", {{"width", 8}, {"height", 8}}},
          {"clip_us", 500000},
          {"speed_px_per_s", 20.0},
          {"event_rate", 1.0}}},
        {"network", tiny_network()},
        {"training",
         {{"lr", 0.01}, {"batch", 4}, {"epochs", 1}, {"stop_at_test_acc", -1.0}}},
    };
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(RNNET_BINARY) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config picks up every section") {
    json j = tiny_bars_run("out");
    j["checkpoint"] = "some.rnwt";
    j["energy"] = {{"v_pulse", 2.0}, {"simulate_rf", true}, {"encode_dir", "enc"}};
    j["ablate"] = {{"ts_tau_in_us", 12345.0}, {"ts_tau_f_us", 67890.0}};
    RunConfig c = RunConfig::from_json(j, ".");
    CHECK(c.seed == 5);
    CHECK(c.threads == 1);
    CHECK(c.output_dir == "out");
    CHECK(c.checkpoint == "some.rnwt");
    CHECK(c.synth_task == "bars");
    CHECK(c.train_count == 8);
    CHECK(c.test_count == 4);
    CHECK(c.bars.geometry.width == 8);
    CHECK(c.bars.clip_us == 500000);
    CHECK(c.bars.seed == 5);  // task seeds follow the run seed
    CHECK(c.has_network);
    CHECK(c.training.lr == 0.01);
    CHECK(c.training.epochs == 1);
    CHECK(c.electrical.v_pulse == 2.0);
    CHECK(c.simulate_rf);
    CHECK(c.encode_dir == "enc");
    CHECK(c.ts_tau_in_us == 12345.0);
    CHECK(c.ts_tau_f_us == 67890.0);
}

TEST_CASE("run config rejects bad inputs") {
    CHECK_THROWS_AS(RunConfig::from_json(json{{"threads", 0}}, "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(json{{"seed", "nope"}}, "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::load_file("no_such_config.json"), IoError);
    RunConfig bare = RunConfig::from_json(json::object(), ".");
    CHECK_THROWS_AS(bare.require_network(), ConfigError);
    Dataset a, b;
    CHECK_THROWS_AS(load_datasets(bare, a, b), ConfigError);
}

TEST_CASE("network section can point at a file relative to the config") {
    TempDir tmp("netfile");
    spit(tmp / "net.json", tiny_network().dump());
    json j = {{"network", {{"file", "net.json"}}}};
    spit(tmp / "run.json", j.dump());
    RunConfig c = RunConfig::load_file(tmp / "run.json");
    CHECK(c.has_network);
    CHECK(c.network.input_geometry.width == 8);
}

TEST_CASE("synth writes a dataset that loads back through the dataset_dir path") {
    TempDir tmp("synth");
    RunConfig c = RunConfig::from_json(tiny_bars_run(tmp / "data"), ".");
    cmd_synth(c);
    CHECK(fs::exists(tmp.path / "data" / "train" / "labels.csv"));
    CHECK(fs::exists(tmp.path / "data" / "test" / "labels.csv"));
    CHECK(fs::exists(tmp.path / "data" / "train" / "stream_00000.rnev"));

    RunConfig reload;
    reload.dataset_dir = tmp / "data";
    Dataset train_set, test_set;
    load_datasets(reload, train_set, test_set);
    CHECK(train_set.size() == 8);
    CHECK(test_set.size() == 4);
    CHECK(train_set.num_classes == 2);

    // Same config synthesized directly must match what round-tripped via disk.
    Dataset direct_train, direct_test;
    load_datasets(c, direct_train, direct_test);
    REQUIRE(direct_train.size() == train_set.size());
    for (size_t i = 0; i < train_set.size(); ++i) {
        CHECK(train_set.labels[i] == direct_train.labels[i]);
        CHECK(train_set.streams[i].events.size() == direct_train.streams[i].events.size());
    }
}

TEST_CASE("synth with an inline bar writes a single stream") {
    TempDir tmp("synthbar");
    json j = {{"output_dir", tmp / "one"},
              {"events",
               {{"bar",
                 {{"width", 8}, {"height", 8}, {"direction", "right"},
                  {"speed_px_per_s", 16.0}, {"duration_us", 250000}}}}}};
    cmd_synth(RunConfig::from_json(j, "."));
    EventStream s = parse_binary_file((fs::path(tmp / "one") / "events.rnev").string());
    CHECK(!s.events.empty());
    CHECK(s.geometry.width == 8);
}

TEST_CASE("encode emits frames, a spike log, and a manifest") {
    TempDir tmp("encode");
    // 1.5 s bar read every 100 ms -> 15 frames.
    json j = {{"output_dir", tmp / "enc"},
              {"events",
               {{"bar",
                 {{"width", 8}, {"height", 8}, {"speed_px_per_s", 16.0},
                  {"duration_us", 1500000}}}}},
              {"network", tiny_network()}};
    RunConfig c = RunConfig::from_json(j, ".");
    cmd_encode(c);

    json manifest = json::parse(slurp((fs::path(tmp / "enc") / "manifest.json").string()));
    CHECK(manifest.at("frame_count").get<size_t>() == 15);
    CHECK(manifest.at("frames").size() == 15);
    CHECK(manifest.at("encoder").get<std::string>() == "RN");
    CHECK(manifest.at("interval_us").get<uint64_t>() == 100000);
    CHECK(manifest.at("geometry").at("width").get<uint32_t>() == 8);
    CHECK_FALSE(manifest.at("empty").get<bool>());
    CHECK(manifest.at("spike_count").get<size_t>() > 0);
    for (const auto& name : manifest.at("frames")) {
        CHECK(fs::exists(fs::path(tmp / "enc") / name.get<std::string>()));
    }
    const std::string spikes = slurp((fs::path(tmp / "enc") / "spikes.csv").string());
    CHECK(spikes.rfind("t_us,node,pre_conductance\n", 0) == 0);
    CHECK(count_lines(spikes) == manifest.at("spike_count").get<size_t>() + 1);

    // Re-encoding is deterministic byte for byte.
    RunConfig c2 = c;
    c2.output_dir = tmp / "enc2";
    cmd_encode(c2);
    CHECK(slurp((fs::path(tmp / "enc") / "spikes.csv").string()) ==
          slurp((fs::path(tmp / "enc2") / "spikes.csv").string()));
    CHECK(slurp((fs::path(tmp / "enc") / "frame_000001.rnsf").string()) ==
          slurp((fs::path(tmp / "enc2") / "frame_000001.rnsf").string()));
}

TEST_CASE("encoding an empty stream still writes frames and flags the manifest") {
    TempDir tmp("encempty");
    EventStream empty;
    empty.geometry = {8, 8};
    empty.duration_us = 300000;
    write_binary_file(empty, tmp / "empty.rnev");
    json j = {{"output_dir", tmp / "enc"},
              {"events", {{"input", tmp / "empty.rnev"}}},
              {"network", tiny_network()}};
    cmd_encode(RunConfig::from_json(j, "."));
    json manifest = json::parse(slurp((fs::path(tmp / "enc") / "manifest.json").string()));
    CHECK(manifest.at("empty").get<bool>());
    CHECK(manifest.at("spike_count").get<size_t>() == 0);
    CHECK(manifest.at("frame_count").get<size_t>() == 3);
}

TEST_CASE("train writes the full artifact set and eval reproduces its accuracy") {
    TempDir tmp("train");
    RunConfig c = RunConfig::from_json(tiny_bars_run(tmp / "run"), ".");
    cmd_train(c);

    const fs::path out(tmp / "run");
    CHECK(fs::exists(out / "checkpoint.rnwt"));
    const std::string history = slurp((out / "history.csv").string());
    CHECK(history.rfind("epoch,", 0) == 0);
    CHECK(count_lines(history) == 2);  // header + 1 epoch

    json metrics = json::parse(slurp((out / "metrics.json").string()));
    CHECK(metrics.at("epochs_run").get<size_t>() == 1);
    CHECK(metrics.at("encoder_in").get<std::string>() == "RN");
    CHECK(metrics.at("encoder_f").get<std::string>() == "RN");
    const double trained_acc = metrics.at("test_acc").get<double>();

    RunConfig e = c;
    e.checkpoint = (out / "checkpoint.rnwt").string();
    e.output_dir = tmp / "eval";
    cmd_eval(e);
    json eval_metrics = json::parse(slurp((fs::path(tmp / "eval") / "eval.json").string()));
    CHECK(eval_metrics.at("test_acc").get<double>() == trained_acc);
}

TEST_CASE("ablate emits one row per encoder pairing") {
    TempDir tmp("ablate");
    json j = tiny_bars_run(tmp / "run");
    j["events"]["train_count"] = 4;
    j["events"]["test_count"] = 2;
    j["ablate"] = {{"ts_tau_in_us", 100000.0}, {"ts_tau_f_us", 100000.0}};
    cmd_ablate(RunConfig::from_json(j, "."));
    const std::string csv = slurp((fs::path(tmp / "run") / "ablation.csv").string());
    CHECK(csv.rfind("r_in,r_f,test_acc\n", 0) == 0);
    CHECK(count_lines(csv) == 6);  // header + 5 pairings
    for (const auto& row : kAblateRows) {
        CHECK(csv.find(std::string(row[0]) + "," + row[1] + ",") != std::string::npos);
    }
}

TEST_CASE("energy report scales with pulse width and vanishes without events") {
    TempDir tmp("energy");
    // event_rate > 1 makes nodes spike repeatedly, so writes start from a
    // decayed-but-nonzero conductance and the encoding term is positive.
    json enc = {{"output_dir", tmp / "enc"},
                {"events",
                 {{"bar",
                   {{"width", 8}, {"height", 8}, {"speed_px_per_s", 16.0},
                    {"duration_us", 500000}, {"event_rate", 4.0}}}}},
                {"network", tiny_network()}};
    cmd_encode(RunConfig::from_json(enc, "."));

    auto run_energy = [&](const std::string& out, double t_pulse) {
        json j = {{"output_dir", out},
                  {"network", tiny_network()},
                  {"energy", {{"encode_dir", tmp / "enc"}, {"t_pulse", t_pulse}}}};
        cmd_energy(RunConfig::from_json(j, "."));
        return json::parse(slurp((fs::path(out) / "energy.json").string()));
    };
    json base = run_energy(tmp / "e1", 1e-6);
    json wide = run_energy(tmp / "e2", 2e-6);
    const double base_enc = base.at("encoding_j").at("r_in").get<double>();
    CHECK(base_enc > 0.0);
    CHECK(wide.at("encoding_j").at("r_in").get<double>() == doctest::Approx(2 * base_enc));
    CHECK(base.at("total_j").get<double>() > 0.0);
    CHECK(fs::exists(fs::path(tmp / "e1") / "energy.txt"));

    // An empty clip encodes for free; only standby terms remain.
    EventStream empty;
    empty.geometry = {8, 8};
    empty.duration_us = 300000;
    write_binary_file(empty, tmp / "empty.rnev");
    json enc0 = {{"output_dir", tmp / "enc0"},
                 {"events", {{"input", tmp / "empty.rnev"}}},
                 {"network", tiny_network()}};
    cmd_encode(RunConfig::from_json(enc0, "."));
    json j0 = {{"output_dir", tmp / "e0"},
               {"network", tiny_network()},
               {"energy", {{"encode_dir", tmp / "enc0"}}}};
    cmd_energy(RunConfig::from_json(j0, "."));
    json zero = json::parse(slurp((fs::path(tmp / "e0") / "energy.json").string()));
    CHECK(zero.at("encoding_j").at("r_in").get<double>() == 0.0);
}

TEST_CASE("binary exit codes distinguish config, io, and usage failures") {
    TempDir tmp("exit");
    spit(tmp / "broken.json", "{ not json");
    spit(tmp / "nonet.json", "{}");
    CHECK(run_binary("encode " + (tmp / "broken.json")) == 2);
    CHECK(run_binary("encode " + (tmp / "nonet.json")) == 2);   // missing network section
    CHECK(run_binary("encode no_such_file.json") == 3);
    CHECK(run_binary("") != 0);                                 // subcommand is required
    json ok = {{"output_dir", tmp / "ok"},
               {"events",
                {{"bar",
                  {{"width", 8}, {"height", 8}, {"speed_px_per_s", 16.0},
                   {"duration_us", 200000}}}}}};
    spit(tmp / "ok.json", ok.dump());
    CHECK(run_binary("synth " + (tmp / "ok.json")) == 0);
    CHECK(fs::exists(fs::path(tmp / "ok") / "events.rnev"));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "oracles.hpp"
#include "rnnet/network.hpp"

using namespace rnnet;

namespace {

void randomize(Tensor& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
}

NetworkConfig tiny_config() {
    NetworkConfig net;
    net.input_geometry = {8, 8};
    net.r_in.interval_us = 30'000;
    net.r_f.interval_us = 60'000;
    net.layers = {
        {LayerKind::Conv, 3, 4, 1, 1},  {LayerKind::MaxPool, 2, 0, 0, 2},
        {LayerKind::BatchNorm},         {LayerKind::Relu},
        {LayerKind::Flatten},           {LayerKind::SpikeConvert},
        {LayerKind::Fc, 0, 8},          {LayerKind::BatchNorm},
        {LayerKind::Relu},              {LayerKind::Fc, 0, 3},
    };
    return net;
}

std::vector<StateFrame> random_clip(const NetworkConfig& net, size_t passes, uint64_t seed,
                                    double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, hi);
    std::vector<StateFrame> frames(passes);
    for (size_t k = 0; k < passes; ++k) {
        StateFrame& f = frames[k];
        f.t_us = (k + 1) * net.r_in.interval_us;
        f.channels = 2;
        f.height = net.input_geometry.height;
        f.width = net.input_geometry.width;
        f.values.resize(2ull * f.height * f.width);
        for (double& v : f.values) v = dist(rng);
    }
    return frames;
}

}  // namespace

TEST_CASE("conv2d matches the naive oracle") {
    std::mt19937_64 rng(1);
    for (auto [pad, stride] : {std::pair<size_t, size_t>{0, 1}, {1, 1}, {0, 2}, {2, 3}}) {
        Tensor x({2, 3, 9, 7}), w({5, 3, 3, 3}), b({5});
        randomize(x, rng);
        randomize(w, rng);
        randomize(b, rng);
        Tensor got = nn::conv2d(x, w, b, pad, stride);
        Tensor want = oracle::naive_conv2d(x, w, b, pad, stride);
        REQUIRE(got.shape == want.shape);
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv output dimension arithmetic") {
    CHECK(nn::conv_out_dim(128, 2, 0, 2) == 64);
    CHECK(nn::conv_out_dim(64, 3, 0, 1) == 62);
    CHECK(nn::conv_out_dim(62, 3, 0, 2) == 30);
    CHECK(nn::conv_out_dim(30, 3, 1, 1) == 30);
    CHECK(nn::conv_out_dim(76, 5, 0, 2) == 36);
    CHECK(nn::conv_out_dim(3, 3, 0, 1) == 1);
}

TEST_CASE("maxpool hand cases") {
    Tensor x({1, 1, 4, 4});
    for (size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
    Tensor y = nn::maxpool(x, 2, 0, 2);
    REQUIRE(y.shape == std::vector<size_t>{1, 1, 2, 2});
    CHECK(y.data == std::vector<double>{5, 7, 13, 15});

    // Stride 1 with kernel 3 over a 3x3 input collapses to the global max.
    Tensor z({1, 1, 3, 3});
    z.data = {9, 1, 2, 3, 4, 5, 6, 7, 8};
    Tensor m = nn::maxpool(z, 3, 0, 1);
    REQUIRE(m.size() == 1);
    CHECK(m.data[0] == 9);
}

TEST_CASE("batchnorm eval identity and train statistics") {
    std::mt19937_64 rng(2);
    Tensor x({4, 3, 5, 5});
    randomize(x, rng, -2.0, 2.0);
    Tensor gamma({3}), beta({3}), rmean({3}), rvar({3});
    gamma.fill(1.0);
    rvar.fill(1.0);

    Tensor eval_out = nn::batchnorm(x, gamma, beta, rmean, rvar, false);
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK(eval_out.data[i] ==
              doctest::Approx(x.data[i] / std::sqrt(1.0 + nn::kBnEps)).epsilon(1e-12));
    }

    Tensor train_out = nn::batchnorm(x, gamma, beta, rmean, rvar, true);
    const size_t per = 4 * 5 * 5;
    for (size_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (size_t n = 0; n < 4; ++n)
            for (size_t i = 0; i < 25; ++i) mean += train_out.at4(n, c, i / 5, i % 5);
        mean /= per;
        for (size_t n = 0; n < 4; ++n)
            for (size_t i = 0; i < 25; ++i) {
                double d = train_out.at4(n, c, i / 5, i % 5) - mean;
                var += d * d;
            }
        var /= per;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);
        // Running stats take one momentum step away from (0, 1).
        CHECK(rmean.data[c] != 0.0);
    }
}

TEST_CASE("fully connected hand case") {
    Tensor x({1, 2}, {2.0, 3.0});
    Tensor w({2, 2}, {1.0, -1.0, 0.5, 0.25});
    Tensor b({2}, {10.0, -10.0});
    Tensor y = nn::fc(x, w, b);
    CHECK(y.at2(0, 0) == doctest::Approx(2.0 - 3.0 + 10.0));
    CHECK(y.at2(0, 1) == doctest::Approx(1.0 + 0.75 - 10.0));
}

TEST_CASE("spike conversion threshold is strict") {
    Tensor x({1, 4}, {0.3, 0.3000001, -5.0, 5.0});
    Tensor s = nn::spike_convert(x, 0.3);
    CHECK(s.data == std::vector<double>{0, 1, 0, 1});
}

TEST_CASE("flatten preserves row-major order") {
    Tensor x({2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = nn::flatten(x);
    REQUIRE(y.shape == std::vector<size_t>{2, 4});
    CHECK(y.data == x.data);
}

TEST_CASE("preset configs reproduce the documented layer dimensions") {
    auto gesture = NetworkConfig::load_file(std::string(RNNET_SOURCE_DIR) +
                                           "/configs/preset_gesture.json");
    auto chain = gesture.shape_chain();
    // Spatial sizes after each conv/pool stage, in order.
    std::vector<std::pair<size_t, size_t>> spatial;
    for (size_t i = 0; i < gesture.layers.size(); ++i) {
        auto k = gesture.layers[i].kind;
        if (k == LayerKind::Conv || k == LayerKind::MaxPool) {
            spatial.push_back({chain[i + 1].c, chain[i + 1].h});
        }
    }
    std::vector<std::pair<size_t, size_t>> expected = {
        {2, 64},   {64, 62},  {64, 30}, {128, 30}, {128, 14},
        {256, 12}, {512, 12}, {512, 5}, {512, 3},  {512, 1},
    };
    CHECK(spatial == expected);
    CHECK(gesture.rf_length() == 512);
    CHECK(gesture.num_classes() == 11);

    auto lipread = NetworkConfig::load_file(std::string(RNNET_SOURCE_DIR) +
                                        "/configs/preset_lipreading.json");
    auto lipchain = lipread.shape_chain();
    spatial.clear();
    for (size_t i = 0; i < lipread.layers.size(); ++i) {
        auto k = lipread.layers[i].kind;
        if (k == LayerKind::Conv || k == LayerKind::MaxPool) {
            spatial.push_back({lipchain[i + 1].c, lipchain[i + 1].h});
        }
    }
    expected = {
        {64, 36},  {128, 36}, {128, 17}, {128, 17}, {256, 17},
        {256, 8},  {256, 8},  {512, 8},  {512, 3},  {512, 1},
    };
    CHECK(spatial == expected);
    CHECK(lipread.rf_length() == 512);
    CHECK(lipread.num_classes() == 100);
}

TEST_CASE("parameter count of the reduced-preset lands in the documented band") {
    auto gesture = NetworkConfig::load_file(std::string(RNNET_SOURCE_DIR) +
                                           "/configs/preset_gesture.json");
    auto counts = count_params(gesture);
    CHECK(counts.total >= 3'900'000);
    CHECK(counts.total <= 6'500'000);

    // Hand check on the first conv: 3*3*2*64 weights + 64 biases.
    bool found = false;
    for (const auto& [name, n] : counts.per_layer) {
        if (n == 3 * 3 * 2 * 64 + 64) found = true;
    }
    CHECK(found);
}

TEST_CASE("MAC count reproduces the documented per-pass figure") {
    auto gesture = NetworkConfig::load_file(std::string(RNNET_SOURCE_DIR) +
                                           "/configs/preset_gesture.json");
    auto macs = count_macs(gesture, 50);
    CHECK(2 * macs.conv_macs_per_pass == 608'707'584);
    CHECK(macs.total_macs == (macs.conv_macs_per_pass + macs.fc_macs_per_pass) * 50);
    CHECK(macs.total_ops_2x == 2 * macs.total_macs);
}

TEST_CASE("config validation rejects malformed stacks") {
    auto net = tiny_config();
    CHECK_NOTHROW(net.validate());

    auto two_sc = net;
    two_sc.layers.push_back({LayerKind::SpikeConvert});
    CHECK_THROWS_AS(two_sc.validate(), ConfigError);

    auto no_sc = net;
    no_sc.layers.erase(no_sc.layers.begin() + 5);
    CHECK_THROWS_AS(no_sc.validate(), ConfigError);

    auto conv_after = net;
    conv_after.layers.insert(conv_after.layers.end() - 1, {LayerKind::Conv, 3, 4, 1, 1});
    CHECK_THROWS_AS(conv_after.validate(), ConfigError);

    auto bad_kernel = net;
    bad_kernel.layers[0].kernel = 99;  // larger than padded input
    CHECK_THROWS_AS(bad_kernel.validate(), ConfigError);
}

TEST_CASE("config json round trip") {
    auto net = tiny_config();
    net.sc_threshold = 0.4;
    auto back = NetworkConfig::from_json(net.to_json());
    CHECK(back.layers.size() == net.layers.size());
    CHECK(back.sc_threshold == 0.4);
    CHECK(back.rf_length() == net.rf_length());
}

TEST_CASE("forward pass is deterministic and batch order independent per clip") {
    auto net = tiny_config();
    Model model(net);
    model.init_weights(9);
    auto frames = random_clip(net, 4, 3, net.r_in.params.g_max);

    auto t1 = model.forward_clip(frames);
    auto t2 = model.forward_clip(frames);
    CHECK(t1.logits.data == t2.logits.data);
    CHECK(t1.reads.size() == 2);   // 120 ms clip, 60 ms feedback interval
    CHECK(t1.passes.size() == 4);
}

TEST_CASE("checkpoint round trip reproduces logits bit-exactly") {
    auto net = tiny_config();
    Model model(net);
    model.init_weights(11);
    auto frames = random_clip(net, 4, 5, net.r_in.params.g_max);
    auto before = model.forward_clip(frames);

    std::string path = "checkpoint_test.rnwt";
    model.save_checkpoint(path);
    Model loaded(net);
    loaded.load_checkpoint(path);
    auto after = loaded.forward_clip(frames);
    CHECK(after.logits.data == before.logits.data);
    std::remove(path.c_str());
}

TEST_CASE("zero input clip leaves conv weight gradients at zero") {
    auto net = tiny_config();
    Model model(net);
    model.init_weights(13);
    std::vector<StateFrame> frames = random_clip(net, 3, 1, 0.0);  // all-zero states

    model.zero_grads();
    auto trace = model.forward_clip(std::vector<std::vector<StateFrame>>{frames}, true);
    Tensor dlogits;
    cross_entropy_loss(trace.logits, {1}, &dlogits);
    model.backward_clip(trace, dlogits);

    for (const ParamTensor& p : model.params()) {
        if (p.name.find("layer0.weight") != std::string::npos) {
            for (double g : p.grad.data) CHECK(g == 0.0);
        }
        // First MLP fc sees an all-zero feedback read: weight grads vanish.
        if (p.name.find("layer6.weight") != std::string::npos) {
            for (double g : p.grad.data) CHECK(g == 0.0);
        }
    }
}

TEST_CASE("cross entropy hand values and gradient shape") {
    Tensor logits({1, 2});
    CHECK(cross_entropy_loss(logits, {0}) == doctest::Approx(std::log(2.0)));

    Tensor big({1, 2}, {1000.0, 0.0});
    CHECK(std::isfinite(cross_entropy_loss(big, {0})));  // log-sum-exp stability

    Tensor dl;
    Tensor two({2, 3}, {1, 2, 3, 3, 2, 1});
    cross_entropy_loss(two, {2, 0}, &dl);
    REQUIRE(dl.shape == two.shape);
    double row(0);
    for (size_t j = 0; j < 3; ++j) row += dl.at2(0, j);
    CHECK(row == doctest::Approx(0.0).epsilon(1e-12));

    CHECK(argmax_rows(two) == std::vector<int>{2, 0});
}

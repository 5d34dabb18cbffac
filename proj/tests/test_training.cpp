#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"

#include "vmsvae/common.hpp"
#include "vmsvae/dataset.hpp"
#include "vmsvae/training.hpp"

using namespace vmsvae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("vmsvae_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n = 16;
    cfg.m = 8;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 2;
    cfg.seed = 9;
    return cfg;
}

AugmentConfig identity_augment() {
    AugmentConfig aug;
    aug.shift_fraction = 0.0;
    aug.zoom_lo = aug.zoom_hi = 1.0;
    aug.horizontal_flip = false;
    return aug;
}

VmsMap half_map() {
    VmsMap m;
    m.true_channel.assign(kMapCells, 0.5f);
    m.false_channel.assign(kMapCells, 0.5f);
    return m;
}

void zero_final_conv(ModelState& state) {
    size_t final_stage = 0;
    for (auto& pr : state.net.params()) {
        if (pr.name.rfind("dec.conv", 0) == 0) {
            final_stage = std::max(final_stage, size_t(pr.name[8] - '0'));
        }
    }
    std::string base = "dec.conv" + std::to_string(final_stage);
    for (auto& pr : state.net.params()) {
        if (pr.name == base + ".w" || pr.name == base + ".b") {
            std::fill(pr.p->w.begin(), pr.p->w.end(), 0.0f);
        }
    }
}

}  // namespace

TEST_CASE("kl_divergence closed forms") {
    CHECK(kl_divergence({0, 0}, {0, 0}) == doctest::Approx(0.0));
    CHECK(kl_divergence({1}, {0}) == doctest::Approx(0.5).epsilon(1e-12));
    double ln2 = std::log(2.0);
    CHECK(kl_divergence({0, 0}, {ln2, ln2}) ==
          doctest::Approx(0.30685281944005471).epsilon(1e-10));
    CHECK_THROWS_AS(kl_divergence({0, 0}, {0}), ValidationError);
}

TEST_CASE("kl_divergence is zero only at the prior") {
    Rng rng(3);
    for (int it = 0; it < 200; ++it) {
        std::vector<double> mu(4), lv(4);
        for (auto& v : mu) v = rng.uniform(-2, 2);
        for (auto& v : lv) v = rng.uniform(-2, 2);
        double kl = kl_divergence(mu, lv);
        CHECK(kl >= 0.0);
        bool at_prior = true;
        for (double v : mu) at_prior = at_prior && v == 0.0;
        for (double v : lv) at_prior = at_prior && v == 0.0;
        if (!at_prior) CHECK(kl > 0.0);
    }
}

TEST_CASE("reconstruction_loss closed forms") {
    VmsMap half = half_map();
    CHECK(reconstruction_loss(half, half, ReconMode::kL1) == doctest::Approx(0.0));

    // Bernoulli NLL at p = 0.5 is ln 2 per cell regardless of the target.
    Rng rng(6);
    VmsMap target = half_map();
    for (auto& v : target.true_channel) v = static_cast<float>(rng.uniform());
    for (auto& v : target.false_channel) v = static_cast<float>(rng.uniform());
    CHECK(reconstruction_loss(half, target, ReconMode::kLogLikelihood) ==
          doctest::Approx(69558.70586355163).epsilon(1e-9));

    // one informative cell on top of the p = 0.5 baseline
    VmsMap pred = half_map();
    VmsMap tgt = half_map();
    pred.true_channel[0] = 0.8f;
    tgt.true_channel[0] = 1.0f;
    double baseline = (kMapCells * 2 - 1) * std::log(2.0);
    double expect = -std::log(0.8) + baseline;
    CHECK(reconstruction_loss(pred, tgt, ReconMode::kLogLikelihood) ==
          doctest::Approx(expect).epsilon(1e-7));
    CHECK(reconstruction_loss(pred, tgt, ReconMode::kL1) == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("reconstruction_loss rejects malformed maps") {
    VmsMap half = half_map();
    VmsMap short_map;
    short_map.true_channel.assign(10, 0.5f);
    short_map.false_channel.assign(10, 0.5f);
    CHECK_THROWS_AS(reconstruction_loss(half, short_map, ReconMode::kL1), ValidationError);
}

TEST_CASE("total_loss with a squashed decoder reproduces the closed form") {
    ModelState state(tiny_config());
    zero_final_conv(state);
    Dataset ds = make_synthetic_dataset(1, 4);
    std::vector<const ImageSample*> batch = {&ds.samples[0]};
    Rng noise(12);
    LossBreakdown loss = total_loss(state, batch, noise);
    CHECK(loss.reconstruction == doctest::Approx(69558.70586355163).epsilon(1e-6));
    CHECK(loss.kl >= 0.0);
    CHECK(loss.total ==
          doctest::Approx(loss.reconstruction + loss.kl + loss.l2_penalty).epsilon(1e-6));
}

TEST_CASE("total_loss is deterministic and leaves the model untouched") {
    ModelState state(tiny_config());
    Dataset ds = make_synthetic_dataset(2, 4);
    std::vector<const ImageSample*> batch = {&ds.samples[0], &ds.samples[1]};
    std::string digest_before = trainable_digest(state);

    Rng n1(21), n2(21);
    LossBreakdown a = total_loss(state, batch, n1);
    LossBreakdown b = total_loss(state, batch, n2);
    CHECK(a.reconstruction == b.reconstruction);
    CHECK(a.kl == b.kl);
    CHECK(a.l2_penalty == b.l2_penalty);
    CHECK(a.total == b.total);
    CHECK(trainable_digest(state) == digest_before);
}

TEST_CASE("zero-epoch training is a bit-exact no-op") {
    ModelConfig cfg = tiny_config();
    cfg.epochs = 0;
    ModelState state(cfg);
    Dataset ds = make_synthetic_dataset(4, 4);
    std::string digest_before = trainable_digest(state);
    TrainHistory history;
    train(state, ds, identity_augment(), history);
    CHECK(trainable_digest(state) == digest_before);
    CHECK(history.epochs.empty());
}

TEST_CASE("training runs the schedule and fills history") {
    ModelState state(tiny_config());
    Dataset ds = make_synthetic_dataset(4, 4);
    std::string backbone_digest = state.backbone.digest();
    std::string digest_before = trainable_digest(state);

    TrainHistory history;
    size_t callbacks = 0;
    train(state, ds, identity_augment(), history, nullptr,
          [&](const EpochRecord& rec) {
              ++callbacks;
              CHECK(rec.epoch == callbacks);
          });
    REQUIRE(history.epochs.size() == 2);
    CHECK(callbacks == 2);
    CHECK(history.epochs[0].epoch == 1);
    CHECK(history.epochs[1].epoch == 2);
    for (const auto& rec : history.epochs) {
        CHECK(rec.total ==
              doctest::Approx(rec.recon + rec.kl + rec.l2).epsilon(1e-6));
        CHECK(rec.kl >= 0.0);
    }
    CHECK(trainable_digest(state) != digest_before);
    CHECK(state.backbone.digest() == backbone_digest);
}

TEST_CASE("training reproduces exactly for a fixed seed") {
    Dataset ds = make_synthetic_dataset(4, 4);
    TrainHistory h1, h2;
    ModelState s1(tiny_config()), s2(tiny_config());
    train(s1, ds, identity_augment(), h1);
    train(s2, ds, identity_augment(), h2);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (size_t i = 0; i < h1.epochs.size(); ++i) {
        CHECK(h1.epochs[i].total == h2.epochs[i].total);
    }
    CHECK(trainable_digest(s1) == trainable_digest(s2));
}

TEST_CASE("a poisoned parameter aborts training with a fault") {
    ModelState state(tiny_config());
    state.net.params()[0].p->w[0] = std::numeric_limits<float>::quiet_NaN();
    Dataset ds = make_synthetic_dataset(4, 4);
    TrainHistory history;
    CHECK_THROWS_AS(train(state, ds, identity_augment(), history), RuntimeFault);
    CHECK(history.epochs.empty());
}

TEST_CASE("history serializes one json record per epoch") {
    TempDir tmp;
    TrainHistory history;
    history.config = tiny_config();
    for (size_t e = 1; e <= 3; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        rec.recon = 100.0 * e;
        rec.kl = 1.0 * e;
        rec.l2 = 0.5;
        rec.total = rec.recon + rec.kl + rec.l2;
        rec.seconds = 2.0;
        history.epochs.push_back(rec);
    }
    std::string path = (tmp.path / "history.jsonl").string();
    write_history_jsonl(history, path);

    std::ifstream f(path);
    std::string line;
    size_t rows = 0;
    while (std::getline(f, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        ++rows;
        CHECK(j.size() == 5);
        CHECK(j.at("epoch").get<size_t>() == rows);
        CHECK(j.contains("recon"));
        CHECK(j.contains("kl"));
        CHECK(j.contains("l2"));
        CHECK(j.contains("total"));
    }
    CHECK(rows == 3);
}

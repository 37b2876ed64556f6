#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "reportgen/checkpoint.hpp"
#include "reportgen/training.hpp"

using namespace reportgen;

namespace {

struct Fixture {
    ReportModel model;
    Vocabulary vocab;
    std::vector<SyntheticCase> train_cases;
    std::vector<SyntheticCase> val_cases;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n_train = 6, std::size_t n_val = 2) {
    Fixture f;
    std::vector<std::string> corpus;
    for (std::size_t i = 0; i < n_train + n_val; ++i) {
        SyntheticCase item = generate_case(splitmix64(seed + i));
        corpus.push_back(item.report);
        if (i < n_train)
            f.train_cases.push_back(std::move(item));
        else
            f.val_cases.push_back(std::move(item));
    }
    f.vocab = build_vocab(corpus, 1);

    EncoderConfig enc;
    enc.scales = {1.0, 0.5};
    enc.channels = 4;
    enc.bifpn_depth = 1;
    enc.pool_grid = 2;
    DecoderConfig dec;
    dec.d_model = 16;
    dec.n_layers = 1;
    dec.n_heads = 2;
    dec.d_ff = 32;
    dec.max_len = 24;
    dec.vocab_size = f.vocab.size();
    dec.dropout = 0.0;
    f.model = ReportModel::build(enc, dec, EncoderKind::AcBifpn, seed);
    return f;
}

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.learning_rate = 0.003;
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.dropout = 0.0;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("xavier_init matches the uniform law") {
    Rng rng(404);
    Tensor w = xavier_init({100, 100}, rng);
    const double bound = std::sqrt(6.0 / 200.0);
    double mean = 0.0, var = 0.0, max_abs = 0.0;
    for (double v : w.values()) {
        mean += v;
        max_abs = std::max(max_abs, std::abs(v));
    }
    mean /= static_cast<double>(w.size());
    for (double v : w.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size());
    CHECK(max_abs <= bound);
    CHECK(var == Catch::Approx(2.0 / 200.0).epsilon(0.10));

    Rng rng_again(404);
    Tensor w2 = xavier_init({100, 100}, rng_again);
    for (std::size_t i = 0; i < 100; ++i) CHECK(w[i] == w2[i]);

    CHECK_THROWS_AS(xavier_init({5}, rng), ConfigError);
}

TEST_CASE("adam closed-form behavior") {
    SECTION("first step moves by about lr, against the gradient sign") {
        ModelParams params;
        Tensor w = params.add("w", Tensor(Shape{2}, {1.0, -2.0}));
        AdamOptimizer adam(params);
        auto grads = w.grad_mutable();
        grads[0] = 3.7;
        grads[1] = -0.004;
        adam.step(params, 0.01);
        CHECK(1.0 - w[0] == Catch::Approx(0.01).epsilon(1e-4));
        CHECK(w[1] + 2.0 == Catch::Approx(0.01).epsilon(1e-2));
    }
    SECTION("zero gradients leave parameters untouched") {
        ModelParams params;
        Tensor w = params.add("w", Tensor(Shape{3}, {0.5, -0.5, 2.0}));
        w.zero_grad();
        AdamOptimizer adam(params);
        adam.step(params, 0.1);
        CHECK(w[0] == 0.5);
        CHECK(w[1] == -0.5);
        CHECK(w[2] == 2.0);
    }
    SECTION("quadratic bowl converges in 200 steps") {
        ModelParams params;
        Tensor w = params.add("w", Tensor(Shape{1}, {1.0}));
        AdamOptimizer adam(params);
        for (int step = 0; step < 200; ++step) {
            w.zero_grad();
            w.grad_mutable()[0] = 2.0 * w[0];
            adam.step(params, 0.05);
        }
        CHECK(std::abs(w[0]) < 1e-2);
        CHECK(std::abs(w[0]) == Catch::Approx(2.8451333237271486e-05).margin(1e-12));
    }
    SECTION("non-finite gradients abort naming the parameter") {
        ModelParams params;
        Tensor w = params.add("w.bad", Tensor(Shape{1}, {1.0}));
        w.grad_mutable()[0] = std::numeric_limits<double>::quiet_NaN();
        AdamOptimizer adam(params);
        try {
            adam.step(params, 0.1);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("w.bad") != std::string::npos);
        }
    }
}

TEST_CASE("gradient clipping") {
    ModelParams params;
    Tensor a = params.add("a", Tensor(Shape{2}, {0.0, 0.0}));
    Tensor b = params.add("b", Tensor(Shape{1}, {0.0}));

    SECTION("norms below the cap pass through") {
        a.grad_mutable()[0] = 0.3;
        a.grad_mutable()[1] = 0.4;
        b.grad_mutable()[0] = 0.0;
        const double norm = clip_gradients(params, 1.0);
        CHECK(norm == Catch::Approx(0.5).margin(1e-12));
        CHECK(a.grad()[0] == 0.3);
        CHECK(a.grad()[1] == 0.4);
    }
    SECTION("norms above the cap scale to exactly the cap, direction kept") {
        a.grad_mutable()[0] = 1.2;
        a.grad_mutable()[1] = 1.6;
        b.grad_mutable()[0] = 0.0;
        const double pre = clip_gradients(params, 1.0);
        CHECK(pre == Catch::Approx(2.0).margin(1e-12));
        CHECK(a.grad()[0] == Catch::Approx(0.6).margin(1e-12));
        CHECK(a.grad()[1] == Catch::Approx(0.8).margin(1e-12));
        double post_sq = 0.0;
        for (const auto& [name, t] : params.entries())
            for (double g : t.grad()) post_sq += g * g;
        CHECK(std::sqrt(post_sq) == Catch::Approx(1.0).margin(1e-9));
        // cosine with the pre-clip direction is 1 by construction
        const double cosine = (1.2 * 0.6 + 1.6 * 0.8) /
                              (std::sqrt(1.2 * 1.2 + 1.6 * 1.6) * std::sqrt(post_sq));
        CHECK(cosine == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("plateau scheduler trace") {
    SECTION("improving losses keep the rate") {
        PlateauScheduler sched(0.1, 0.5, 3, 1e-6);
        double loss = 1.0;
        for (int epoch = 0; epoch < 10; ++epoch) {
            CHECK(sched.observe(loss) == 0.1);
            loss *= 0.9;
        }
    }
    SECTION("flat losses reduce at epochs 4, 8 (0-indexed)") {
        PlateauScheduler sched(0.1, 0.5, 3, 1e-6);
        std::vector<double> rates;
        for (int epoch = 0; epoch < 10; ++epoch) rates.push_back(sched.observe(1.0));
        const std::vector<double> expected{0.1, 0.1, 0.1, 0.1, 0.05,
                                           0.05, 0.05, 0.05, 0.025, 0.025};
        CHECK(rates == expected);
    }
    SECTION("the rate never drops below min_lr") {
        PlateauScheduler sched(1e-5, 0.1, 1, 1e-6);
        for (int epoch = 0; epoch < 20; ++epoch) sched.observe(1.0);
        CHECK(sched.learning_rate() == 1e-6);
    }
}

TEST_CASE("training is bit-deterministic given seed, config and data") {
    Fixture a = make_fixture(777);
    Fixture b = make_fixture(777);
    const TrainConfig cfg = fast_config();
    const TrainResult ra = train(a.model, a.vocab, a.train_cases, a.val_cases, cfg);
    const TrainResult rb = train(b.model, b.vocab, b.train_cases, b.val_cases, cfg);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t e = 0; e < ra.history.size(); ++e) {
        CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
        CHECK(ra.history[e].val_loss == rb.history[e].val_loss);
        CHECK(ra.history[e].learning_rate == rb.history[e].learning_rate);
    }
    for (std::size_t p = 0; p < a.model.registry.entries().size(); ++p) {
        const auto& ta = a.model.registry.entries()[p].second;
        const auto& tb = b.model.registry.entries()[p].second;
        for (std::size_t i = 0; i < ta.size(); ++i) REQUIRE(ta[i] == tb[i]);
    }
}

TEST_CASE("zero learning rate freezes the loss history") {
    Fixture f = make_fixture(888, 4, 2);
    TrainConfig cfg = fast_config();
    cfg.learning_rate = 0.0;
    cfg.batch_size = 4;  // single batch per epoch keeps epoch means comparable
    cfg.epochs = 4;
    const TrainResult result = train(f.model, f.vocab, f.train_cases, f.val_cases, cfg);
    REQUIRE(result.history.size() >= 2);
    for (const EpochStats& stats : result.history) {
        CHECK(std::abs(stats.train_loss - result.history[0].train_loss) < 1e-12);
        CHECK(std::abs(stats.val_loss - result.history[0].val_loss) < 1e-12);
    }
}

TEST_CASE("loss strictly decreases over the first steps of an overfit run") {
    Fixture f = make_fixture(999, 4, 1);
    TrainConfig cfg = fast_config();
    cfg.batch_size = 4;
    cfg.epochs = 5;
    cfg.learning_rate = 0.002;
    const TrainResult result = train(f.model, f.vocab, f.train_cases, f.val_cases, cfg);
    REQUIRE(result.history.size() == 5);
    for (std::size_t e = 1; e < result.history.size(); ++e)
        CHECK(result.history[e].train_loss < result.history[e - 1].train_loss);
}

TEST_CASE("early stopping fires after the patience window") {
    Fixture f = make_fixture(1010, 4, 2);
    TrainConfig cfg = fast_config();
    cfg.learning_rate = 0.0;  // nothing can improve after epoch 1
    cfg.epochs = 40;
    cfg.early_stop_patience = 5;
    const TrainResult result = train(f.model, f.vocab, f.train_cases, f.val_cases, cfg);
    CHECK(result.stopped_early);
    CHECK(result.history.size() == 6);  // epoch 1 improves over +inf, then 5 stale epochs
}

TEST_CASE("checkpoint round trip preserves the validation loss exactly") {
    Fixture f = make_fixture(1111);
    const TrainConfig cfg = fast_config();
    train(f.model, f.vocab, f.train_cases, f.val_cases, cfg);

    auto tokens_of = [&](const std::vector<SyntheticCase>& cases) {
        std::vector<std::vector<int>> out;
        for (const auto& item : cases)
            out.push_back(encode(item.report, f.vocab, f.model.decoder_cfg.max_len));
        return out;
    };
    const double val_before = evaluate_loss(f.model, f.val_cases, tokens_of(f.val_cases));

    const std::string path = "train_ckpt_roundtrip.bin";
    save_checkpoint(path, f.model.registry);

    ReportModel reloaded = ReportModel::build(f.model.encoder_cfg, f.model.decoder_cfg,
                                              EncoderKind::AcBifpn, 31337);
    load_checkpoint(path, reloaded.registry);
    const double val_after = evaluate_loss(reloaded, f.val_cases, tokens_of(f.val_cases));
    CHECK(val_after == val_before);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint manifest mismatches are rejected") {
    Fixture f = make_fixture(1212);
    const std::string path = "train_ckpt_mismatch.bin";
    save_checkpoint(path, f.model.registry);
    DecoderConfig other = f.model.decoder_cfg;
    other.d_model = 8;
    other.d_ff = 16;
    ReportModel different =
        ReportModel::build(f.model.encoder_cfg, other, EncoderKind::AcBifpn, 1);
    CHECK_THROWS_AS(load_checkpoint(path, different.registry), DataError);
    std::remove(path.c_str());
}

TEST_CASE("empty splits are data errors") {
    Fixture f = make_fixture(1313);
    const TrainConfig cfg = fast_config();
    CHECK_THROWS_AS(train(f.model, f.vocab, {}, f.val_cases, cfg), DataError);
    CHECK_THROWS_AS(train(f.model, f.vocab, f.train_cases, {}, cfg), DataError);
}

// SPDX-License-Identifier: Apache-2.0
#include "qmimo/eval.hpp"
#include "qmimo/io.hpp"
#include "qmimo/trainer.hpp"

#include <catch_amalgamated.hpp>

#include <regex>

#include <filesystem>
#include <fstream>

using namespace qmimo;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config(Mode mode = Mode::Full) {
    ExperimentConfig cfg;
    cfg.channel.M = 8;
    cfg.channel.K = 2;
    cfg.channel.L = 2;
    cfg.channel.n_train = 200;
    cfg.channel.n_test = 40;
    cfg.channel.seed = 3;
    cfg.Np = 8;
    cfg.mode = mode;
    cfg.M_A = mode == Mode::OneBit || mode == Mode::ZcPilots ? 0 : 2;
    cfg.epochs = 3;
    cfg.batch = 50;
    cfg.c1_a = 2;
    cfg.c1_b = 2;
    cfg.seed = 9;
    return cfg;
}

const ChannelDataset& smoke_data() {
    static const ChannelDataset ds = synthesize_dataset(smoke_config().channel);
    return ds;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "qmimo_trainer_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("default optimization schedule", "[trainer]") {
    const ExperimentConfig cfg;
    CHECK(cfg.lr == 2e-3);
    CHECK(cfg.lr_decay == 0.7);
    CHECK(cfg.decay_every == 20);
    CHECK(cfg.epochs == 200);
    CHECK(cfg.batch == 100);
    CHECK(cfg.gamma1 == 1.0);
    CHECK(cfg.gamma2 == 1.0);
    CHECK(cfg.c1_a == 60);
    CHECK(cfg.c1_b == 20);
    CHECK(cfg.adam_beta1 == 0.9);
    CHECK(cfg.adam_beta2 == 0.999);
    CHECK(cfg.adam_eps == 1e-8);
    CHECK_THAT(cfg.lr_at(19), WithinRel(2e-3, 1e-15));
    CHECK_THAT(cfg.lr_at(20), WithinRel(1.4e-3, 1e-14));
    CHECK_THAT(cfg.lr_at(45), WithinRel(2e-3 * 0.49, 1e-14));
}

TEST_CASE("gamma3 schedule", "[trainer]") {
    const ExperimentConfig cfg;
    CHECK_THAT(cfg.gamma3_at(0), WithinAbs(0.01, 1e-15));
    CHECK_THAT(cfg.gamma3_at(24), WithinAbs(0.49, 1e-14));
    for (Index e = 25; e < 200; ++e) CHECK(cfg.gamma3_at(e) == 0.5);
    for (Index e = 1; e < 200; ++e) CHECK(cfg.gamma3_at(e) >= cfg.gamma3_at(e - 1));
}

TEST_CASE("composite loss terms", "[trainer]") {
    Rng rng = make_rng(1, Stream::ParamInit);
    const Tensor target = nn::normal_tensor({4, 8, 2}, 1.0, rng);
    const auto hhat = ag::Var::constant(nn::normal_tensor({4, 8, 2}, 1.0, rng));
    const auto cfg = smoke_config();

    const auto alone = composite_loss(hhat, target, nullptr, cfg, 7);
    CHECK(alone.total.item() == alone.cenet.item());
    CHECK(alone.selnet.item() == 0.0);

    Eigen::VectorXd u = Eigen::VectorXd::Constant(4, 0.5);
    const auto ut = ag::Var::constant(Tensor({4}, u));
    const auto both = composite_loss(hhat, target, &ut, cfg, 0);
    CHECK_THAT(both.selnet.item(), WithinAbs(3.25, 1e-14));
    CHECK_THAT(both.total.item(), WithinRel(both.cenet.item() + 0.01 * 3.25, 1e-14));
    CHECK_THAT(both.cenet.item(), WithinRel(nmse(hhat.value(), target), 1e-14));
}

TEST_CASE("model wiring per mode", "[trainer]") {
    const auto& ds = smoke_data();
    for (Mode mode : {Mode::Full, Mode::OneBit, Mode::FixedAlloc, Mode::ZcPilots, Mode::CnnAblation}) {
        INFO(to_string(mode));
        const auto cfg = smoke_config(mode);
        EndToEndModel model(cfg);
        CHECK((model.selnet() != nullptr) == cfg.uses_selnet());
        CHECK(model.masks().full_resolution_count() == cfg.full_resolution_count());
        const auto P = model.pilot();
        CHECK_THAT((P * P.transpose()).trace(), WithinRel(double(cfg.Np) * cfg.rho, 1e-12));

        nn::StateRefs refs = model.state();
        bool pilot_trainable = false, has_beta = false;
        for (auto& [name, p] : refs.params) {
            if (name.rfind("pdnet", 0) == 0 && p->trainable()) pilot_trainable = true;
            if (std::regex_search(name, std::regex(R"(\.beta[1-5]$)"))) has_beta = true;
        }
        CHECK(pilot_trainable == cfg.trains_pilot());
        CHECK(has_beta == (mode != Mode::CnnAblation));

        Rng rng = make_rng(2, Stream::TrainNoise);
        const std::vector<Index> rows{0, 1, 2, 3};
        const auto sub = ds.train.subset(rows);
        const Tensor noise = awgn({4, 16, cfg.Np}, cfg.sigma2(), rng);
        refs.zero_grad();
        auto pass = model.forward(sub.Htilde, sub.Htarget, noise, 0, true);
        CHECK(pass.Hhat.shape() == Shape{4, 16, 2});
        pass.loss.total.backward();
        for (auto& [name, p] : refs.params)
            if (name.rfind("selnet", 0) == 0) CHECK(p->grad().data().norm() > 0.0);
    }
}

TEST_CASE("fixed allocation uses equispaced chains", "[trainer]") {
    auto cfg = smoke_config(Mode::FixedAlloc);
    cfg.M_A = 4;
    EndToEndModel model(cfg);
    CHECK(model.masks().A == std::vector<Index>{0, 2, 4, 6});
    CHECK(method_label(cfg) == "PDNet+CENet, fixed M_A=4");
    cfg.fixed_A = {1, 5, 6, 7};
    CHECK(EndToEndModel(cfg).masks().A == std::vector<Index>{1, 5, 6, 7});
}

TEST_CASE("one-bit mode trains the estimator alone", "[trainer]") {
    EndToEndModel model(smoke_config(Mode::OneBit));
    CHECK(model.selnet() == nullptr);
    CHECK(model.masks().a.isZero(0.0));
    for (auto& [name, p] : model.state().params) CHECK(name.rfind("selnet", 0) != 0);
}

TEST_CASE("one small step decreases the loss", "[trainer]") {
    const auto& ds = smoke_data();
    for (Mode mode : {Mode::Full, Mode::OneBit}) {
        auto cfg = smoke_config(mode);
        EndToEndModel model(cfg);
        nn::StateRefs refs = model.state();
        nn::Adam opt(refs.trainable(), {.lr = 1e-5});
        const std::vector<Index> rows{0, 1, 2, 3, 4, 5, 6, 7};
        const auto sub = ds.train.subset(rows);
        Rng rng = make_rng(3, Stream::TrainNoise);
        const Tensor noise = awgn({8, 16, cfg.Np}, cfg.sigma2(), rng);

        refs.zero_grad();
        auto before = model.forward(sub.Htilde, sub.Htarget, noise, 0, true);
        before.loss.total.backward();
        opt.step();
        const double after = model.forward(sub.Htilde, sub.Htarget, noise, 0, true).loss.total.item();
        CHECK(after < before.loss.total.item());
    }
}

TEST_CASE("smoke training reduces the loss", "[trainer]") {
    const auto cfg = smoke_config();
    const auto path = scratch("smoke_log.jsonl");
    fs::remove(path);
    TrainOptions opts;
    opts.log_path = path.string();
    const auto bundle = train(cfg, smoke_data().train, opts);
    REQUIRE(bundle.curves.epochs.size() == 3);
    CHECK(bundle.curves.epochs.back().loss < bundle.curves.epochs.front().loss);
    CHECK(bundle.masks.full_resolution_count() == cfg.M_A);
    CHECK(bundle.curves.final_u_tilde.size() == cfg.channel.M);

    std::ifstream log(path);
    std::string line;
    Index lines = 0;
    while (std::getline(log, line)) {
        const auto rec = epoch_record_from_json(nlohmann::json::parse(line));
        CHECK(rec.epoch == lines);
        CHECK(rec.lr == cfg.lr_at(lines));
        CHECK(rec.gamma3 == cfg.gamma3_at(lines));
        CHECK(rec.wall_s >= 0.0);
        ++lines;
    }
    CHECK(lines == 3);
}

TEST_CASE("training is deterministic", "[trainer]") {
    auto cfg = smoke_config(Mode::OneBit);
    cfg.epochs = 2;
    const auto a = train(cfg, smoke_data().train);
    const auto b = train(cfg, smoke_data().train);
    REQUIRE(a.cenet_state.size() == b.cenet_state.size());
    for (const auto& [name, t] : a.cenet_state) CHECK(t.data() == b.cenet_state.at(name).data());
    CHECK(a.Ptilde == b.Ptilde);
}

TEST_CASE("resume reproduces the uninterrupted run", "[trainer]") {
    auto cfg = smoke_config();
    cfg.epochs = 4;
    const auto full = train(cfg, smoke_data().train);

    const auto ckpt = scratch("resume.ckpt");
    fs::remove(ckpt);
    TrainOptions first;
    first.checkpoint_path = ckpt.string();
    first.stop_after_epochs = 2;
    const auto partial = train(cfg, smoke_data().train, first);
    CHECK(partial.curves.epochs.size() == 2);

    TrainOptions second = first;
    second.stop_after_epochs = -1;
    second.resume = true;
    const auto resumed = train(cfg, smoke_data().train, second);
    REQUIRE(resumed.curves.epochs.size() == 4);
    CHECK(resumed.curves.epochs.back().loss == full.curves.epochs.back().loss);
    for (const auto& [name, t] : full.cenet_state) CHECK(t.data() == resumed.cenet_state.at(name).data());
    CHECK(resumed.Ptilde == full.Ptilde);
    CHECK(resumed.masks.A == full.masks.A);

    auto other = cfg;
    other.lr = 1e-3;
    CHECK_THROWS_AS(train(other, smoke_data().train, second), ConfigError);
}

TEST_CASE("non-finite loss aborts training", "[trainer]") {
    auto data = smoke_data().train;
    data.Htarget[5] = std::nan("");
    CHECK_THROWS_AS(train(smoke_config(), data, {}), TrainingDiverged);
}

TEST_CASE("dataset must match the config", "[trainer]") {
    auto cfg = smoke_config();
    cfg.channel.M = 16;
    CHECK_THROWS_AS(train(cfg, smoke_data().train), ContractViolation);
}

TEST_CASE("early stopping keeps the best validation state", "[trainer]") {
    auto cfg = smoke_config(Mode::OneBit);
    cfg.epochs = 4;
    cfg.early_stop_patience = 1;
    cfg.val_fraction = 0.2;
    const auto b = train(cfg, smoke_data().train);
    REQUIRE(!b.curves.epochs.empty());
    for (const auto& r : b.curves.epochs) CHECK(r.val_nmse >= 0.0);
}

TEST_CASE("deployment round trip", "[trainer]") {
    auto cfg = smoke_config();
    cfg.epochs = 1;
    const auto bundle = train(cfg, smoke_data().train);
    const auto path = scratch("bundle.qmimo");
    export_deployment(bundle, path.string());
    const auto loaded = load_deployment(path.string());
    CHECK(loaded.masks.A == bundle.masks.A);
    CHECK(static_cast<Index>(loaded.masks.A.size()) == cfg.M_A);
    CHECK(loaded.Ptilde == bundle.Ptilde);
    CHECK(config_hash(loaded.config) == config_hash(bundle.config));
    CHECK(loaded.curves.epochs.size() == bundle.curves.epochs.size());

    Estimator mem(bundle), disk(loaded);
    Rng r1 = make_rng(4, Stream::EvalNoise), r2 = make_rng(4, Stream::EvalNoise);
    const auto& test = smoke_data().test;
    CHECK(mem.estimate(test.Htilde, 0.1, r1).data() == disk.estimate(test.Htilde, 0.1, r2).data());
}

TEST_CASE("tampered or foreign bundles are rejected", "[trainer]") {
    auto cfg = smoke_config(Mode::OneBit);
    cfg.epochs = 1;
    const auto bundle = train(cfg, smoke_data().train);
    const auto path = scratch("tamper.qmimo");
    export_deployment(bundle, path.string());

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(-16, std::ios::end);
        char c;
        f.get(c);
        f.seekp(-16, std::ios::end);
        f.put(char(c ^ 0x5a));
    }
    CHECK_THROWS_AS(load_deployment(path.string()), io::FormatError);

    export_deployment(bundle, path.string());
    auto c = io::ArrayContainer::load(path.string());
    c.meta["bundle_version"] = kBundleVersion + 1;
    c.save(path.string());
    CHECK_THROWS_AS(load_deployment(path.string()), io::FormatError);

    CHECK_THROWS(load_deployment(scratch("missing.qmimo").string()));
}

TEST_CASE("mixed-SNR noise varies per sample", "[trainer]") {
    auto cfg = smoke_config();
    cfg.snr_mix = true;
    cfg.snr_mix_min_db = 0.0;
    cfg.snr_mix_max_db = 30.0;
    Rng rng = make_rng(5, Stream::SnrMix);
    const Tensor w = training_noise(cfg, {50, 16, 200}, rng);
    std::vector<double> var;
    for (Index s = 0; s < 50; ++s) var.push_back(w.data().segment(s * 3200, 3200).squaredNorm() / 3200.0);
    const auto [lo, hi] = std::minmax_element(var.begin(), var.end());
    CHECK(*hi / *lo > 10.0);
    for (double v : var) {
        CHECK(v < 0.5 * 1.2);
        CHECK(v > 0.5e-3 * 0.8);
    }
}

// SPDX-License-Identifier: Apache-2.0
#include "qmimo/eval.hpp"

#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace qmimo;
using qmimo::testing::rel_err;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "qmimo_eval_tests";
    fs::create_directories(dir);
    return dir / name;
}

ChannelSpec detect_spec() {
    ChannelSpec s;
    s.M = 16;
    s.K = 2;
    s.L = 2;
    s.n_train = 50;
    s.n_test = 50;
    s.seed = 21;
    return s;
}

DetectionProblem random_problem(Index M, Index K, const SelectionMasks& masks, double sigma2, Rng& rng) {
    std::normal_distribution<double> n;
    DetectionProblem p;
    p.H.resize(2 * M, 2 * K);
    for (Index i = 0; i < p.H.size(); ++i) p.H.data()[i] = n(rng);
    p.y.resize(2 * M);
    for (Index i = 0; i < 2 * M; ++i) p.y[i] = n(rng);
    for (Index m : masks.B) {
        p.y[m] = hard_sign(p.y[m]);
        p.y[m + M] = hard_sign(p.y[m + M]);
    }
    p.masks = masks;
    p.sigma2 = sigma2;
    p.rho = 1.0;
    return p;
}

ExperimentConfig tiny_config(Mode mode, Index M_A) {
    ExperimentConfig cfg;
    cfg.channel = detect_spec();
    cfg.channel.M = 8;
    cfg.Np = 8;
    cfg.mode = mode;
    cfg.M_A = M_A;
    cfg.c1_a = 2;
    cfg.c1_b = 2;
    return cfg;
}

ArtifactBundle untrained_bundle(const ExperimentConfig& cfg) {
    EndToEndModel model(cfg);
    return make_bundle(model, {});
}

}  // namespace

TEST_CASE("constellations have unit energy", "[eval]") {
    for (auto kind : {Constellation::Kind::Qpsk, Constellation::Kind::Qam16}) {
        const Constellation c(kind);
        double e = 0.0;
        for (int i = 0; i < c.size(); ++i) e += std::norm(c.point(i));
        CHECK_THAT(e / c.size(), WithinRel(1.0, 1e-14));
        CHECK(c.size() == 1 << c.bits_per_symbol());
    }
    CHECK(Constellation::parse("qpsk").kind() == Constellation::Kind::Qpsk);
    CHECK(Constellation::parse("16qam").kind() == Constellation::Kind::Qam16);
    CHECK_THROWS(Constellation::parse("64qam"));
}

TEST_CASE("nearest neighbours differ in one bit", "[eval]") {
    for (auto kind : {Constellation::Kind::Qpsk, Constellation::Kind::Qam16}) {
        const Constellation c(kind);
        double dmin = 1e9;
        for (int i = 0; i < c.size(); ++i)
            for (int j = 0; j < i; ++j) dmin = std::min(dmin, std::abs(c.point(i) - c.point(j)));
        for (int i = 0; i < c.size(); ++i)
            for (int j = 0; j < i; ++j)
                if (std::abs(std::abs(c.point(i) - c.point(j)) - dmin) < 1e-12) CHECK(std::popcount(unsigned(i ^ j)) == 1);
    }
}

TEST_CASE("modulate then demodulate is lossless", "[eval]") {
    for (auto kind : {Constellation::Kind::Qpsk, Constellation::Kind::Qam16}) {
        const Constellation c(kind);
        for (int i = 0; i < c.size(); ++i) {
            CHECK(c.index_of(c.bits(i)) == i);
            CHECK(c.nearest(c.point(i)) == i);
            CHECK(c.nearest(2.5 * c.point(i), 2.5) == i);
        }
    }
}

TEST_CASE("payload meets the power budget per use", "[eval]") {
    const Constellation c(Constellation::Kind::Qam16);
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) CHECK_THAT(payload_vector({a, b}, c, 3.0).squaredNorm(), WithinRel(3.0, 1e-14));
}

TEST_CASE("identity channel round trip", "[eval]") {
    Tensor H({1, 4, 4});
    H.slice(0).setIdentity();
    const auto masks = SelectionMasks::from_indices(2, {0, 1});
    const Constellation c(Constellation::Kind::Qpsk);
    for (auto det : {Detector::Nml, Detector::ExhaustiveMl}) {
        const auto n = simulate_payload(H, H, masks, 1e-12, 1.0, c, 200, 3, det);
        CHECK(n.bits == 800);
        CHECK(n.errors == 0);
    }
}

TEST_CASE("log Phi accuracy and guard", "[eval]") {
    for (double t = -37.0; t <= 8.0; t += 0.25) {
        const double ref = std::log(0.5 * std::erfc(-t / std::sqrt(2.0)));
        CHECK_THAT(log_phi(t), WithinRel(ref, 1e-10) || WithinAbs(ref, 1e-15));
    }
    CHECK(std::isfinite(log_phi(-1e3)));
    CHECK(std::isfinite(log_phi_guarded(-1e6)));
    CHECK(log_phi_guarded(-10.0) == log_phi(-10.0));
    // continuous and tangent at the guard
    CHECK_THAT(log_phi_guarded(-30.0 - 1e-9), WithinAbs(log_phi(-30.0), 1e-6));
    const double slope = (log_phi_guarded(-31.0) - log_phi_guarded(-32.0));
    const double tangent = (log_phi(-30.0 + 1e-6) - log_phi(-30.0 - 1e-6)) / 2e-6;
    CHECK_THAT(slope, WithinRel(tangent, 1e-5));
}

TEST_CASE("relaxed objective is concave", "[eval]") {
    Rng rng = make_rng(1, Stream::EvalNoise);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> lam(0.0, 1.0);
    for (const auto& masks : {SelectionMasks::equispaced(8, 0), SelectionMasks::equispaced(8, 3), SelectionMasks::equispaced(8, 8)}) {
        const auto p = random_problem(8, 2, masks, 0.05, rng);
        for (int trial = 0; trial < 300; ++trial) {
            Eigen::VectorXd a(4), b(4);
            for (Index i = 0; i < 4; ++i) {
                a[i] = n(rng);
                b[i] = n(rng);
            }
            a *= lam(rng) / a.norm();
            b *= lam(rng) / b.norm();
            const double l = lam(rng);
            const double mid = nml_objective(p, l * a + (1 - l) * b);
            const double chord = l * nml_objective(p, a) + (1 - l) * nml_objective(p, b);
            CHECK(mid >= chord - 1e-9 * std::max(1.0, std::abs(chord)));
        }
    }
}

TEST_CASE("relaxed objective gradient", "[eval]") {
    Rng rng = make_rng(2, Stream::EvalNoise);
    const auto p = random_problem(6, 2, SelectionMasks::equispaced(6, 2), 0.3, rng);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(4) * 0.3;
    Eigen::VectorXd fd(4);
    for (Index i = 0; i < 4; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        fd[i] = (nml_objective(p, xp) - nml_objective(p, xm)) / 2e-6;
    }
    CHECK(rel_err(nml_gradient(p, x), fd) < 1e-6);
}

TEST_CASE("projected ascent stays feasible and never decreases", "[eval]") {
    Rng rng = make_rng(3, Stream::EvalNoise);
    const Constellation c(Constellation::Kind::Qpsk);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_problem(8, 2, SelectionMasks::equispaced(8, trial % 9), 0.1, rng);
        const auto r = detect_nml(p, c);
        CHECK(r.x.squaredNorm() <= p.rho * (1 + 1e-12));
        for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] >= r.objective[i - 1]);
        CHECK(r.symbols.size() == 2);
    }
}

TEST_CASE("noiseless full resolution recovers the least-squares solution", "[eval]") {
    Rng rng = make_rng(4, Stream::EvalNoise);
    const Constellation c(Constellation::Kind::Qpsk);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 10; ++trial) {
        DetectionProblem p;
        p.H.resize(64, 4);
        for (Index i = 0; i < p.H.size(); ++i) p.H.data()[i] = n(rng) / 8.0;
        const std::vector<int> sent{trial % 4, (trial / 4) % 4};
        const Eigen::VectorXd x = payload_vector(sent, c, 1.0);
        p.y = p.H * x;
        p.masks = SelectionMasks::equispaced(32, 32);
        p.sigma2 = 1e-6;
        p.rho = 1.0;
        const Eigen::VectorXd ls = p.H.completeOrthogonalDecomposition().solve(p.y);
        const auto r = detect_nml(p, c);
        CHECK((r.x - ls).norm() < 1e-6);
        CHECK((r.x - x).norm() < 1e-6);
        CHECK(r.symbols == sent);
    }
}

TEST_CASE("iteration cap flags non-convergence", "[eval]") {
    Rng rng = make_rng(5, Stream::EvalNoise);
    const auto p = random_problem(8, 2, SelectionMasks::equispaced(8, 2), 0.01, rng);
    const auto r = detect_nml(p, Constellation(Constellation::Kind::Qpsk), {.max_iterations = 1, .tolerance = 1e-8});
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 1);
    CHECK(r.symbols.size() == 2);
}

TEST_CASE("mixed-resolution detection at high SNR", "[eval]") {
    const auto ch = synthesize_batch(detect_spec(), Split::Test);
    const auto masks = SelectionMasks::equispaced(16, 4);
    const Constellation c(Constellation::Kind::Qpsk);
    const double sigma2 = ExperimentConfig::noise_variance(1.0, 20.0);
    const auto nml = simulate_payload(ch.Htilde, ch.Htilde, masks, sigma2, 1.0, c, 1000, 7, Detector::Nml);
    const auto ml = simulate_payload(ch.Htilde, ch.Htilde, masks, sigma2, 1.0, c, 1000, 7, Detector::ExhaustiveMl);
    CHECK(nml.bits == 4000);
    CHECK(nml.ber() < 1e-2);
    CHECK(nml.ber() <= 2.0 * std::max(ml.ber(), 1.0 / double(ml.bits)));
}

TEST_CASE("full resolution BER vanishes and falls with SNR", "[eval]") {
    const auto ch = synthesize_batch(detect_spec(), Split::Test);
    const auto masks = SelectionMasks::equispaced(16, 16);
    const Constellation c(Constellation::Kind::Qpsk);
    double prev = 1.0;
    for (double snr : {-10.0, -5.0, 0.0}) {
        const auto n = simulate_payload(ch.Htilde, ch.Htilde, masks, ExperimentConfig::noise_variance(1.0, snr), 1.0, c,
                                        2000, 8, Detector::Nml);
        CHECK(n.ber() < prev);
        prev = n.ber();
    }
    const auto hi = simulate_payload(ch.Htilde, ch.Htilde, masks, ExperimentConfig::noise_variance(1.0, 40.0), 1.0, c,
                                     500, 8, Detector::Nml);
    CHECK(hi.errors == 0);
}

TEST_CASE("one-bit 16QAM keeps an error floor", "[eval]") {
    const auto ch = synthesize_batch(detect_spec(), Split::Test);
    const auto masks = SelectionMasks::all_one_bit(16);
    const Constellation c(Constellation::Kind::Qam16);
    const auto at = [&](double snr) {
        return simulate_payload(ch.Htilde, ch.Htilde, masks, ExperimentConfig::noise_variance(1.0, snr), 1.0, c, 500, 9,
                                Detector::Nml)
            .ber();
    };
    const double b30 = at(30.0), b40 = at(40.0);
    CHECK(b40 > 0.05);
    CHECK(b40 > 0.5 * b30);
}

TEST_CASE("full real stack rebuilds the block layout", "[eval]") {
    const auto ch = synthesize_batch(detect_spec(), Split::Test);
    CHECK(full_real_stack(ch.Htarget).data() == ch.Htilde.data());
}

TEST_CASE("method labels", "[eval]") {
    CHECK(method_label(tiny_config(Mode::ZcPilots, 0)) == "CENet, 1-bit");
    CHECK(method_label(tiny_config(Mode::OneBit, 0)) == "PDNet+CENet, 1-bit");
    CHECK(method_label(tiny_config(Mode::FixedAlloc, 4)) == "PDNet+CENet, fixed M_A=4");
    CHECK(method_label(tiny_config(Mode::CnnAblation, 4)) == "CNN");
    CHECK(method_label(tiny_config(Mode::Full, 4)) == "proposed, M_A=4");
    CHECK_THROWS_AS(require_in_scope("GAMP"), OutOfScope);
    CHECK_THROWS_AS(require_in_scope("GL-GAMP"), OutOfScope);
    CHECK_NOTHROW(require_in_scope("CNN"));
}

TEST_CASE("NMSE evaluation is deterministic", "[eval]") {
    const auto cfg = tiny_config(Mode::Full, 2);
    Estimator est(untrained_bundle(cfg));
    const auto test = synthesize_batch(cfg.channel, Split::Test);
    const auto a = nmse_eval(est, test, 10.0, 5);
    const auto b = nmse_eval(est, test, 10.0, 5);
    CHECK(a.value == b.value);
    CHECK(a.value > 0.0);
    CHECK(a.metric == "nmse");
    CHECK(a.n_samples == test.size());
    CHECK(a.method == "proposed, M_A=2");
    CHECK(nmse_eval(est, test, 10.0, 6).value != a.value);
    CHECK_THROWS(nmse_eval(est, test.subset(std::vector<Index>{}), 10.0, 5));
    CHECK_THAT(to_db(0.1), WithinAbs(-10.0, 1e-12));
}

TEST_CASE("benchmark matrix and outputs", "[eval]") {
    const auto cfg = tiny_config(Mode::OneBit, 0);
    const auto bundle_path = scratch("onebit.qmimo");
    export_deployment(untrained_bundle(cfg), bundle_path.string());
    const auto test = synthesize_batch(cfg.channel, Split::Test).subset(std::vector<Index>{0, 1, 2, 3, 4});

    BenchmarkOptions opts;
    opts.snr_db = {0.0, 10.0};
    opts.ber = true;
    opts.ber_options.n_payload = 20;
    const auto recs = run_benchmark_matrix({{"", bundle_path.string()}}, test, opts);
    REQUIRE(recs.size() == 4);
    for (const auto& r : recs) {
        CHECK(r.method == "PDNet+CENet, 1-bit");
        if (r.metric == "ber") {
            CHECK(r.value >= 0.0);
            CHECK(r.value <= 1.0);
        }
    }

    CHECK_THROWS(run_benchmark_matrix({{"", scratch("nope.qmimo").string()}}, test, opts));
    CHECK_THROWS_AS(run_benchmark_matrix({{"GAMP", bundle_path.string()}}, test, opts), OutOfScope);

    const auto csv = scratch("curves.csv");
    write_csv(recs, csv.string());
    std::ifstream f(csv);
    std::string header;
    std::getline(f, header);
    CHECK(header == "method,snr_db,metric,value,n_samples,seed");
    const auto back = read_csv(csv.string());
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].method == recs[i].method);
        CHECK(back[i].snr_db == recs[i].snr_db);
        CHECK(back[i].metric == recs[i].metric);
        CHECK(back[i].value == recs[i].value);
        CHECK(back[i].n_samples == recs[i].n_samples);
        CHECK(back[i].seed == recs[i].seed);
    }

    const auto svg = scratch("nmse.svg");
    write_svg_plot(recs, "nmse", svg.string());
    CHECK(fs::file_size(svg) > 200);
}

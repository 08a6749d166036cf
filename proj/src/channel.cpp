// SPDX-License-Identifier: Apache-2.0
#include "qmimo/channel.hpp"

#include "qmimo/io.hpp"
#include "qmimo/random.hpp"

#include <algorithm>
#include <fstream>

namespace qmimo {

namespace {

constexpr double kDoaLimit = 90.0 - 1e-9;

std::complex<double> complex_normal(Rng& rng, double variance) {
    std::normal_distribution<double> dist(0.0, std::sqrt(variance / 2.0));
    const double re = dist(rng);
    const double im = dist(rng);
    return {re, im};
}

struct PathSeeds {
    Eigen::MatrixXd doa;     // [K, L] degrees
    Eigen::MatrixXcd gains;  // [K, L]
};

PathSeeds initial_paths(const ChannelSpec& spec) {
    Rng rng = make_rng(spec.seed, Stream::ChannelInit);
    std::uniform_real_distribution<double> doa(spec.doa_min_deg, spec.doa_max_deg);
    PathSeeds s{Eigen::MatrixXd(spec.K, spec.L), Eigen::MatrixXcd(spec.K, spec.L)};
    for (Index k = 0; k < spec.K; ++k)
        for (Index l = 0; l < spec.L; ++l) s.doa(k, l) = doa(rng);
    for (Index k = 0; k < spec.K; ++k)
        for (Index l = 0; l < spec.L; ++l) s.gains(k, l) = complex_normal(rng, spec.gain_var);
    return s;
}

Eigen::MatrixXcd perturbed_sample(const ChannelSpec& spec, const PathSeeds& seeds, Split split, Index i) {
    Rng rng = make_rng(spec.seed, Stream::ChannelSample,
                       {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(i)});
    std::uniform_real_distribution<double> jitter(-spec.doa_jitter_deg, spec.doa_jitter_deg);
    Eigen::MatrixXd doa(spec.K, spec.L);
    Eigen::MatrixXcd gains(spec.K, spec.L);
    for (Index k = 0; k < spec.K; ++k)
        for (Index l = 0; l < spec.L; ++l)
            doa(k, l) = std::clamp(seeds.doa(k, l) + jitter(rng), -kDoaLimit, kDoaLimit);
    for (Index k = 0; k < spec.K; ++k)
        for (Index l = 0; l < spec.L; ++l) gains(k, l) = seeds.gains(k, l) + complex_normal(rng, spec.gain_jitter_var);
    return multipath_channel(spec.M, doa, gains);
}

ComplexTensor raw_split(const ChannelSpec& spec, const PathSeeds& seeds, Split split) {
    const Index n = split == Split::Train ? spec.n_train : spec.n_test;
    ComplexTensor H({n, spec.M, spec.K});
    // Samples are independent; each draws from its own stream.
    for (Index i = 0; i < n; ++i) H.slice(i) = perturbed_sample(spec, seeds, split, i);
    return H;
}

double normalization_scale(const ChannelSpec& spec, const ComplexTensor& Htrain) {
    const double mean_energy = Htrain.data().squaredNorm() / double(Htrain.dim(0) * spec.K);
    if (!(mean_energy > 0.0)) throw DomainError("channel normalization: zero-energy training split");
    return std::sqrt(double(spec.M) / mean_energy);
}

}  // namespace

nlohmann::json channel_spec_to_json(const ChannelSpec& s) {
    return {{"M", s.M},
            {"K", s.K},
            {"L", s.L},
            {"doa_min_deg", s.doa_min_deg},
            {"doa_max_deg", s.doa_max_deg},
            {"doa_jitter_deg", s.doa_jitter_deg},
            {"gain_var", s.gain_var},
            {"gain_jitter_var", s.gain_jitter_var},
            {"n_train", s.n_train},
            {"n_test", s.n_test},
            {"seed", s.seed}};
}

ChannelSpec channel_spec_from_json(const nlohmann::json& j) {
    ChannelSpec s;
    s.M = j.at("M");
    s.K = j.at("K");
    s.L = j.at("L");
    s.doa_min_deg = j.at("doa_min_deg");
    s.doa_max_deg = j.at("doa_max_deg");
    s.doa_jitter_deg = j.at("doa_jitter_deg");
    s.gain_var = j.at("gain_var");
    s.gain_jitter_var = j.at("gain_jitter_var");
    s.n_train = j.at("n_train");
    s.n_test = j.at("n_test");
    s.seed = j.at("seed");
    return s;
}

void ChannelSpec::validate() const {
    if (M < 1 || K < 1 || L < 1) throw DomainError("channel spec: M, K and L must be positive");
    if (!(doa_min_deg > -90.0 && doa_max_deg < 90.0 && doa_min_deg <= doa_max_deg))
        throw DomainError("channel spec: DOA range must lie inside (-90, 90) degrees");
    if (!(doa_jitter_deg >= 0.0)) throw DomainError("channel spec: DOA jitter must be non-negative");
    if (!(gain_var > 0.0 && gain_jitter_var > 0.0)) throw DomainError("channel spec: variances must be positive");
    if (n_train < 1 || n_test < 0) throw DomainError("channel spec: sample counts must be positive");
}

const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Eigen::MatrixXcd unstack_columns(const Eigen::Ref<const Eigen::MatrixXd>& stacked) {
    const Index m = stacked.rows() / 2;
    Eigen::MatrixXcd out(m, stacked.cols());
    out.real() = stacked.topRows(m);
    out.imag() = stacked.bottomRows(m);
    return out;
}

Eigen::MatrixXcd multipath_channel(Index M, const Eigen::MatrixXd& doa_deg, const Eigen::MatrixXcd& gains) {
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(M, doa_deg.rows());
    for (Index k = 0; k < doa_deg.rows(); ++k)
        for (Index l = 0; l < doa_deg.cols(); ++l) H.col(k) += gains(k, l) * steering_vector(doa_deg(k, l), M);
    return H;
}

ChannelBatch make_batch(ComplexTensor H, const ChannelSpec& spec, Split split, double scale) {
    const Index n = H.dim(0), m = H.dim(1), k = H.dim(2);
    ChannelBatch b;
    b.Htilde = Tensor({n, 2 * m, 2 * k});
    b.Htarget = Tensor({n, 2 * m, k});
    for (Index i = 0; i < n; ++i) {
        auto [full, target] = real_stack(H.slice(i));
        b.Htilde.slice(i) = full;
        b.Htarget.slice(i) = target;
    }
    b.H = std::move(H);
    b.spec = spec;
    b.split = split;
    b.scale = scale;
    return b;
}

ChannelBatch ChannelBatch::subset(std::span<const Index> rows) const {
    const Index m = H.dim(1), k = H.dim(2);
    ComplexTensor sub({static_cast<Index>(rows.size()), m, k});
    for (std::size_t i = 0; i < rows.size(); ++i) sub.slice(static_cast<Index>(i)) = H.slice(rows[i]);
    return make_batch(std::move(sub), spec, split, scale);
}

ChannelDataset synthesize_dataset(const ChannelSpec& spec) {
    spec.validate();
    const PathSeeds seeds = initial_paths(spec);
    ComplexTensor train = raw_split(spec, seeds, Split::Train);
    ComplexTensor test = raw_split(spec, seeds, Split::Test);
    const double scale = normalization_scale(spec, train);
    train.data() *= scale;
    test.data() *= scale;
    return {make_batch(std::move(train), spec, Split::Train, scale), make_batch(std::move(test), spec, Split::Test, scale)};
}

ChannelBatch synthesize_batch(const ChannelSpec& spec, Split split) {
    spec.validate();
    const PathSeeds seeds = initial_paths(spec);
    ComplexTensor train = raw_split(spec, seeds, Split::Train);
    const double scale = normalization_scale(spec, train);
    ComplexTensor H = split == Split::Train ? std::move(train) : raw_split(spec, seeds, split);
    H.data() *= scale;
    return make_batch(std::move(H), spec, split, scale);
}

void save_channel_batch(const ChannelBatch& batch, const std::string& path) {
    io::ArrayContainer c;
    c.kind = "channel_batch";
    c.meta = {{"spec", channel_spec_to_json(batch.spec)}, {"split", to_string(batch.split)}, {"scale", batch.scale}};
    c.put_complex("H", batch.H);
    c.put("Htilde", batch.Htilde);
    c.put("Htarget", batch.Htarget);
    c.save(path);

    std::ofstream sidecar(path + ".meta.json", std::ios::trunc);
    if (!sidecar) throw std::runtime_error("cannot write metadata sidecar for '" + path + "'");
    sidecar << c.meta.dump(2) << '\n';
}

ChannelBatch load_channel_batch(const std::string& path) {
    const auto c = io::ArrayContainer::load(path, "channel_batch");
    ChannelBatch b;
    b.H = c.get_complex("H");
    b.Htilde = c.get("Htilde");
    b.Htarget = c.get("Htarget");
    b.spec = channel_spec_from_json(c.meta.at("spec"));
    b.split = c.meta.at("split") == "train" ? Split::Train : Split::Test;
    b.scale = c.meta.at("scale");
    return b;
}

}  // namespace qmimo

// SPDX-License-Identifier: Apache-2.0
#include "qmimo/trainer.hpp"

#include "qmimo/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace qmimo {

namespace {

Tensor to_tensor(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix(m.rows(), m.cols()) = m;
    return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) { return t.matrix(t.dim(0), t.dim(1)); }

Tensor vector_tensor(const Eigen::VectorXd& v) { return Tensor({v.size()}, v); }

// Rows of the leading dimension.
Tensor gather(const Tensor& t, std::span<const Index> rows) {
    Shape shape = t.shape();
    const Index stride = t.size() / shape[0];
    shape[0] = static_cast<Index>(rows.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.data().segment(Index(i) * stride, stride) = t.data().segment(rows[i] * stride, stride);
    return out;
}

CenetShape cenet_shape(const ExperimentConfig& cfg) {
    return {cfg.channel.M,
            cfg.channel.K,
            cfg.Np,
            SubnetChannels::from_first(cfg.c1_a),
            SubnetChannels::from_first(cfg.c1_b),
            cfg.mode == Mode::CnnAblation};
}

nlohmann::json curves_to_json(const TrainingCurves& c) {
    nlohmann::json j;
    j["epochs"] = nlohmann::json::array();
    for (const auto& r : c.epochs) j["epochs"].push_back(to_json(r));
    j["final_u_tilde"] = std::vector<double>(c.final_u_tilde.data(), c.final_u_tilde.data() + c.final_u_tilde.size());
    return j;
}

TrainingCurves curves_from_json(const nlohmann::json& j) {
    TrainingCurves c;
    for (const auto& r : j.at("epochs")) c.epochs.push_back(epoch_record_from_json(r));
    const auto u = j.at("final_u_tilde").get<std::vector<double>>();
    c.final_u_tilde = Eigen::Map<const Eigen::VectorXd>(u.data(), Index(u.size()));
    return c;
}

void copy_state_into(nn::StateRefs& refs, const std::map<std::string, Tensor>& state) {
    auto assign = [&](const std::string& name, Tensor& dst) {
        const auto it = state.find(name);
        if (it == state.end()) throw io::FormatError("missing state entry " + name);
        if (it->second.shape() != dst.shape())
            throw io::FormatError("state entry " + name + " has shape " + to_string(it->second.shape()) +
                                  ", expected " + to_string(dst.shape()));
        dst = it->second;
    };
    for (auto& [name, p] : refs.params) assign(name, p->value());
    for (auto& [name, t] : refs.buffers) assign(name, *t);
}

std::map<std::string, Tensor> snapshot(const nn::StateRefs& refs) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, p] : refs.params) out[name] = p->value();
    for (const auto& [name, t] : refs.buffers) out[name] = *t;
    return out;
}

struct EarlyStop {
    double best = std::numeric_limits<double>::infinity();
    Index bad_epochs = 0;
    std::map<std::string, Tensor> best_state;
};

void save_checkpoint(const std::string& path, const ExperimentConfig& cfg, Index next_epoch, nn::StateRefs& refs,
                     nn::Adam& opt, const TrainingCurves& curves, const EarlyStop& es) {
    io::ArrayContainer c;
    c.kind = "qmimo.checkpoint";
    c.meta["config"] = to_json(cfg);
    c.meta["config_hash"] = config_hash(cfg);
    c.meta["next_epoch"] = next_epoch;
    c.meta["adam_steps"] = opt.steps();
    c.meta["curves"] = curves_to_json(curves);
    c.meta["best_val"] = std::isfinite(es.best) ? nlohmann::json(es.best) : nlohmann::json(nullptr);
    c.meta["bad_epochs"] = es.bad_epochs;
    for (const auto& [name, t] : snapshot(refs)) c.put("state/" + name, t);
    for (const auto& [name, t] : es.best_state) c.put("best/" + name, t);
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        c.put("adam_m/" + std::to_string(i), opt.first_moments()[i]);
        c.put("adam_v/" + std::to_string(i), opt.second_moments()[i]);
    }
    const std::string tmp = path + ".tmp";
    c.save(tmp);
    std::filesystem::rename(tmp, path);
}

Index load_checkpoint(const std::string& path, const ExperimentConfig& cfg, nn::StateRefs& refs, nn::Adam& opt,
                      TrainingCurves& curves, EarlyStop& es) {
    const auto c = io::ArrayContainer::load(path, "qmimo.checkpoint");
    if (c.meta.at("config_hash") != config_hash(cfg))
        throw ConfigError("checkpoint " + path + " was written for a different configuration");
    std::map<std::string, Tensor> state, best;
    for (const auto& name : c.names()) {
        if (name.rfind("state/", 0) == 0) state[name.substr(6)] = c.get(name);
        if (name.rfind("best/", 0) == 0) best[name.substr(5)] = c.get(name);
    }
    copy_state_into(refs, state);
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        opt.first_moments()[i] = c.get("adam_m/" + std::to_string(i));
        opt.second_moments()[i] = c.get("adam_v/" + std::to_string(i));
    }
    opt.set_steps(c.meta.at("adam_steps"));
    curves = curves_from_json(c.meta.at("curves"));
    es.best = c.meta.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : double(c.meta.at("best_val"));
    es.bad_epochs = c.meta.at("bad_epochs");
    es.best_state = std::move(best);
    return c.meta.at("next_epoch");
}

}  // namespace

nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},   {"loss", r.loss},     {"cenet_loss", r.cenet_loss}, {"selnet_loss", r.selnet_loss},
            {"lr", r.lr},         {"gamma3", r.gamma3}, {"kappa", r.kappa},           {"val_nmse", r.val_nmse},
            {"wall_s", r.wall_s}, {"A", r.A}};
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch");
    r.loss = j.at("loss");
    r.cenet_loss = j.at("cenet_loss");
    r.selnet_loss = j.at("selnet_loss");
    r.lr = j.at("lr");
    r.gamma3 = j.at("gamma3");
    r.kappa = j.at("kappa");
    r.val_nmse = j.at("val_nmse");
    r.wall_s = j.at("wall_s");
    r.A = j.at("A").get<std::vector<Index>>();
    return r;
}

LossTerms composite_loss(const ag::Var& Hhat, const Tensor& Htarget, const ag::Var* u_tilde,
                         const ExperimentConfig& cfg, Index epoch) {
    LossTerms t;
    t.cenet = ag::cenet_loss(Hhat, Htarget);
    if (!u_tilde) {
        t.selnet = ag::Var::constant(Tensor({1}));
        t.total = t.cenet;
        return t;
    }
    t.selnet = ag::selnet_loss(*u_tilde, cfg.M_A, cfg.gamma1, cfg.gamma2);
    t.total = t.cenet + cfg.gamma3_at(epoch) * t.selnet;
    return t;
}

EndToEndModel::EndToEndModel(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(cfg.seed, Stream::ParamInit);
    const Index M = cfg.channel.M, K = cfg.channel.K;
    if (cfg.trains_pilot())
        pilot_ = PilotWeights::init(K, cfg.Np, cfg.rho, rng);
    else
        frozen_pilot_ = zc_pilots(cfg.Np, K, cfg.rho).Ptilde;
    if (cfg.uses_selnet())
        selnet_.emplace(M, cfg.M_A, rng);
    else
        fixed_ = cfg.fixed_masks();
    cenet_ = CENet(cenet_shape(cfg), rng);
}

EndToEndModel::Pass EndToEndModel::forward(const Tensor& Htilde, const Tensor& Htarget, const Tensor& noise,
                                           Index epoch, bool training) {
    const ag::Var P = cfg_.trains_pilot() ? pilot_.normalized_var() : ag::Var::constant(to_tensor(frozen_pilot_));
    const ag::Var Z = pdnet_forward(ag::Var::constant(Htilde), P) + ag::Var::constant(noise);
    const ag::Var Zq = ag::quantize(Z, cfg_.kappa_at(epoch), cfg_.surrogate);

    Pass pass;
    ag::Var a, b, u_tilde;
    if (selnet_) {
        auto out = selnet_->forward();
        a = out.a;
        b = 1.0 - a;
        u_tilde = out.u_tilde;
        pass.selection = std::move(out.state);
    } else {
        a = ag::Var::constant(vector_tensor(fixed_.a));
        b = ag::Var::constant(vector_tensor(fixed_.b));
    }
    pass.Hhat = cenet_(ag::row_mask(Z, a), ag::row_mask(Zq, b), training);
    pass.loss = composite_loss(pass.Hhat, Htarget, selnet_ ? &u_tilde : nullptr, cfg_, epoch);
    return pass;
}

Eigen::MatrixXd EndToEndModel::pilot() const { return cfg_.trains_pilot() ? pilot_.normalized() : frozen_pilot_; }

SelectionMasks EndToEndModel::masks() const {
    return selnet_ ? SelectionMasks::from_mask(selnet_->state().a) : fixed_;
}

std::optional<SelectionState> EndToEndModel::selection() const {
    if (!selnet_) return std::nullopt;
    return selnet_->state();
}

nn::StateRefs EndToEndModel::state() {
    nn::StateRefs refs;
    if (cfg_.trains_pilot()) pilot_.collect("pdnet", refs);
    if (selnet_) selnet_->collect("selnet", refs);
    cenet_.collect("cenet", refs);
    return refs;
}

ArtifactBundle make_bundle(EndToEndModel& model, TrainingCurves curves) {
    ArtifactBundle b;
    b.config = model.config();
    b.Ptilde = model.pilot();
    b.masks = model.masks();
    nn::StateRefs refs;
    model.cenet().collect("cenet", refs);
    b.cenet_state = snapshot(refs);
    if (const auto s = model.selection()) curves.final_u_tilde = s->u_tilde;
    b.curves = std::move(curves);
    return b;
}

void export_deployment(const ArtifactBundle& bundle, const std::string& path) {
    io::ArrayContainer c;
    c.kind = "qmimo.deployment";
    c.meta["bundle_version"] = kBundleVersion;
    c.meta["config"] = to_json(bundle.config);
    c.meta["A"] = bundle.masks.A;
    c.meta["B"] = bundle.masks.B;
    c.meta["M_A"] = bundle.masks.full_resolution_count();
    c.meta["curves"] = curves_to_json(bundle.curves);
    c.put("pilot", to_tensor(bundle.Ptilde));
    for (const auto& [name, t] : bundle.cenet_state) c.put(name, t);
    c.save(path);
}

ArtifactBundle load_deployment(const std::string& path) {
    const auto c = io::ArrayContainer::load(path, "qmimo.deployment");
    if (c.meta.value("bundle_version", -1) != kBundleVersion)
        throw io::FormatError("bundle " + path + ": unsupported version " + c.meta.value("bundle_version", nlohmann::json()).dump());
    ArtifactBundle b;
    b.config = config_from_json(c.meta.at("config"));
    b.config.validate();
    b.Ptilde = to_matrix(c.get("pilot"));
    b.masks = SelectionMasks::from_indices(b.config.channel.M, c.meta.at("A").get<std::vector<Index>>());
    if (b.masks.B != c.meta.at("B").get<std::vector<Index>>() || b.masks.full_resolution_count() != c.meta.at("M_A"))
        throw io::FormatError("bundle " + path + ": inconsistent index sets");
    for (const auto& name : c.names())
        if (name.rfind("cenet.", 0) == 0) b.cenet_state[name] = c.get(name);
    b.curves = curves_from_json(c.meta.at("curves"));
    return b;
}

Estimator::Estimator(const ArtifactBundle& bundle) : bundle_(bundle) {
    Rng rng = make_rng(0, Stream::ParamInit);
    cenet_ = CENet(cenet_shape(bundle_.config), rng);
    nn::StateRefs refs;
    cenet_.collect("cenet", refs);
    copy_state_into(refs, bundle_.cenet_state);
}

Tensor Estimator::infer(const Tensor& Ya, const Tensor& Yb) { return cenet_.infer(Ya, Yb); }

Tensor Estimator::estimate(const Tensor& Htilde, double sigma2, Rng& rng, Index chunk) {
    const Index n = Htilde.dim(0), M = bundle_.config.channel.M, K = bundle_.config.channel.K;
    Tensor out({n, 2 * M, K});
    const Index per = out.size() / n;
    for (Index start = 0; start < n; start += chunk) {
        const Index count = std::min(chunk, n - start);
        std::vector<Index> rows(static_cast<std::size_t>(count));
        std::iota(rows.begin(), rows.end(), start);
        const Observation obs = observe(gather(Htilde, rows), bundle_.Ptilde, sigma2, bundle_.masks, rng);
        out.data().segment(start * per, count * per) = infer(obs.Ya, obs.Yb).data();
    }
    return out;
}

Tensor training_noise(const ExperimentConfig& cfg, Shape shape, Rng& rng) {
    if (!cfg.snr_mix) return awgn(std::move(shape), cfg.sigma2(), rng);
    Tensor w = awgn(shape, 1.0, rng);
    std::uniform_real_distribution<double> snr(cfg.snr_mix_min_db, cfg.snr_mix_max_db);
    const Index per = w.size() / shape[0];
    for (Index s = 0; s < shape[0]; ++s)
        w.data().segment(s * per, per) *= std::sqrt(ExperimentConfig::noise_variance(cfg.rho, snr(rng)));
    return w;
}

ArtifactBundle train(const ExperimentConfig& cfg, const ChannelBatch& data, const TrainOptions& options) {
    cfg.validate();
    if (data.spec.M != cfg.channel.M || data.spec.K != cfg.channel.K)
        throw ContractViolation("train: dataset is M=" + std::to_string(data.spec.M) + ", K=" +
                                std::to_string(data.spec.K) + " but the config expects M=" +
                                std::to_string(cfg.channel.M) + ", K=" + std::to_string(cfg.channel.K));
    const Index n = data.size();
    Index n_val = 0;
    if (cfg.early_stop_patience > 0) n_val = std::clamp<Index>(Index(std::lround(double(n) * cfg.val_fraction)), 1, n - 1);
    const Index n_fit = n - n_val;
    if (n_fit < 1) throw ContractViolation("train: empty training split");

    std::vector<Index> val_rows(static_cast<std::size_t>(n_val));
    std::iota(val_rows.begin(), val_rows.end(), n_fit);
    const Tensor val_H = gather(data.Htilde, val_rows), val_T = gather(data.Htarget, val_rows);

    EndToEndModel model(cfg);
    nn::StateRefs refs = model.state();
    nn::Adam opt(refs.trainable(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    TrainingCurves curves;
    EarlyStop es;

    Index start_epoch = 0;
    if (options.resume && !options.checkpoint_path.empty() && std::filesystem::exists(options.checkpoint_path))
        start_epoch = load_checkpoint(options.checkpoint_path, cfg, refs, opt, curves, es);

    std::ofstream log;
    if (!options.log_path.empty()) log.open(options.log_path, std::ios::app);

    const auto t0 = std::chrono::steady_clock::now();
    const Shape noise_tail{2 * cfg.channel.M, cfg.Np};
    Index epochs_run = 0;
    for (Index epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        if (cfg.early_stop_patience > 0 && es.bad_epochs >= cfg.early_stop_patience) break;
        if (options.stop_after_epochs >= 0 && epochs_run >= options.stop_after_epochs) break;
        opt.set_lr(cfg.lr_at(epoch));

        std::vector<Index> order(static_cast<std::size_t>(n_fit));
        std::iota(order.begin(), order.end(), Index{0});
        Rng shuffle = make_rng(cfg.seed, Stream::Shuffle, {std::uint64_t(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle);

        EpochRecord rec;
        rec.epoch = epoch;
        for (Index start = 0, b = 0; start < n_fit; start += cfg.batch, ++b) {
            const Index count = std::min(cfg.batch, n_fit - start);
            const std::span<const Index> rows(order.data() + start, std::size_t(count));
            Rng noise_rng = make_rng(cfg.seed, Stream::TrainNoise, {std::uint64_t(epoch), std::uint64_t(b)});
            const Tensor noise = training_noise(cfg, {count, noise_tail[0], noise_tail[1]}, noise_rng);

            refs.zero_grad();
            auto pass = model.forward(gather(data.Htilde, rows), gather(data.Htarget, rows), noise, epoch, true);
            const double loss = pass.loss.total.item();
            if (!std::isfinite(loss))
                throw TrainingDiverged("training diverged: loss " + std::to_string(loss) + " at epoch " +
                                       std::to_string(epoch) + ", batch " + std::to_string(b));
            pass.loss.total.backward();
            opt.step();
            rec.loss += loss * double(count);
            rec.cenet_loss += pass.loss.cenet.item() * double(count);
            rec.selnet_loss += pass.loss.selnet.item() * double(count);
        }
        rec.loss /= double(n_fit);
        rec.cenet_loss /= double(n_fit);
        rec.selnet_loss /= double(n_fit);
        rec.lr = opt.lr();
        rec.gamma3 = cfg.uses_selnet() ? cfg.gamma3_at(epoch) : 0.0;
        rec.kappa = cfg.kappa_at(epoch);
        rec.A = model.masks().A;

        if (n_val > 0) {
            Rng vr = make_rng(cfg.seed, Stream::EvalNoise, {std::uint64_t(epoch)});
            const Tensor noise = training_noise(cfg, {n_val, noise_tail[0], noise_tail[1]}, vr);
            rec.val_nmse = model.forward(val_H, val_T, noise, epoch, false).loss.cenet.item();
            if (rec.val_nmse < es.best) {
                es.best = rec.val_nmse;
                es.bad_epochs = 0;
                es.best_state = snapshot(refs);
            } else {
                ++es.bad_epochs;
            }
        }
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        curves.epochs.push_back(rec);
        ++epochs_run;

        if (log) log << to_json(rec).dump() << '\n' << std::flush;
        if (!options.checkpoint_path.empty())
            save_checkpoint(options.checkpoint_path, cfg, epoch + 1, refs, opt, curves, es);
        if (options.on_epoch) options.on_epoch(rec);
    }
    if (cfg.early_stop_patience > 0 && !es.best_state.empty()) copy_state_into(refs, es.best_state);
    return make_bundle(model, std::move(curves));
}

}  // namespace qmimo

// SPDX-License-Identifier: Apache-2.0
#include "qmimo/config.hpp"
#include "qmimo/eval.hpp"
#include "qmimo/io.hpp"
#include "qmimo/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

using namespace qmimo;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream s;
    s << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

std::string default_out_root() {
    const char* env = std::getenv("QMIMO_OUT_ROOT");
    return env && *env ? env : "runs";
}

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.channel.seed = *c.seed;
    }
    if (!c.mode.empty()) cfg.mode = mode_from_string(c.mode);
    cfg.validate();
    return cfg;
}

fs::path out_dir(const Common& c) {
    const fs::path dir = c.out.empty() ? fs::path(default_out_root()) : fs::path(c.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".write_test";
    if (!std::ofstream(probe)) throw std::runtime_error("output directory " + dir.string() + " is not writable");
    fs::remove(probe);
    return dir;
}

// Audit record of one subcommand run.
struct RunManifest {
    std::string command;
    std::string config_path;
    std::string config_hash;
    std::vector<std::string> artifacts;
    std::string started, finished;

    void write(const fs::path& dir, const ExperimentConfig& cfg) {
        finished = utc_now();
        for (const auto& a : artifacts)
            if (!fs::exists(a)) throw std::runtime_error("manifest: artifact " + a + " is missing");
        if (config_hash != qmimo::config_hash(cfg)) throw std::logic_error("manifest: config hash out of date");
        const nlohmann::json j{{"command", command},     {"config_path", config_path}, {"config_hash", config_hash},
                               {"config", to_json(cfg)}, {"artifacts", artifacts},     {"started", started},
                               {"finished", finished}};
        std::ofstream(dir / (command + ".manifest.json")) << j.dump(2) << '\n';
    }
};

RunManifest start_manifest(const std::string& command, const Common& c, const ExperimentConfig& cfg) {
    return {command, c.config_path, config_hash(cfg), {}, utc_now(), {}};
}

std::vector<double> parse_snr_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw CLI::ValidationError("--snr-list", "bad number '" + item + "'");
    }
    if (out.empty()) throw CLI::ValidationError("--snr-list", "empty list");
    return out;
}

ChannelDataset load_or_synthesize(const std::string& data_dir, const ExperimentConfig& cfg) {
    if (data_dir.empty()) return synthesize_dataset(cfg.channel);
    ChannelDataset ds{load_channel_batch((fs::path(data_dir) / "train.bin").string()),
                      load_channel_batch((fs::path(data_dir) / "test.bin").string())};
    if (!(ds.train.spec == cfg.channel))
        throw ContractViolation("dataset in " + data_dir + " was generated from a different channel spec");
    return ds;
}

void print_records(const std::vector<CurveRecord>& recs) {
    for (const auto& r : recs) {
        std::cout << std::left << std::setw(28) << r.method << " snr " << std::setw(5) << r.snr_db << ' ' << r.metric
                  << ' ' << r.value;
        if (r.metric == "nmse") std::cout << " (" << to_db(r.value) << " dB)";
        std::cout << '\n';
    }
}

void write_plots(const std::vector<CurveRecord>& recs, const fs::path& dir, RunManifest& m) {
    for (const char* metric : {"nmse", "ber"}) {
        if (std::none_of(recs.begin(), recs.end(), [&](const CurveRecord& r) { return r.metric == metric; })) continue;
        const auto path = (dir / (std::string(metric) + ".svg")).string();
        write_svg_plot(recs, metric, path);
        m.artifacts.push_back(path);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-ADC massive MIMO channel estimation workbench"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "overrides seed and channel_seed");
    app.add_option("--out", common.out, "output directory (default $QMIMO_OUT_ROOT or ./runs)");
    app.add_option("--mode", common.mode, "full, one_bit, fixed_alloc, zc_pilots or cnn_ablation");

    auto* gen = app.add_subcommand("gen-data", "synthesize train/test channel sets");

    auto* tr = app.add_subcommand("train", "train a model and export its deployment bundle");
    std::string data_dir;
    bool resume = false;
    tr->add_option("--data", data_dir, "directory written by gen-data (default: synthesize)");
    tr->add_flag("--resume", resume, "continue from the checkpoint in --out");

    auto* ev = app.add_subcommand("eval", "NMSE (and BER) sweep over bundles");
    std::vector<std::string> bundles, methods;
    std::string snr_list = "0,5,10,15,20,25,30";
    bool with_ber = false;
    std::string constellation = "qpsk";
    Index n_payload = 1000;
    ev->add_option("--bundle", bundles, "deployment bundle (repeatable)")->required();
    ev->add_option("--method", methods, "row labels matching --bundle order (default: from bundle)");
    ev->add_option("--snr-list", snr_list, "comma-separated SNRs in dB");
    ev->add_option("--data", data_dir, "directory written by gen-data (default: synthesize)");
    ev->add_flag("--ber", with_ber, "also measure payload BER");
    ev->add_option("--constellation", constellation, "qpsk or 16qam");
    ev->add_option("--n-payload", n_payload, "channel uses per SNR");

    auto* det = app.add_subcommand("detect", "payload BER with the relaxed detector");
    bool perfect_csi = false;
    double payload_rho = -1.0;
    det->add_option("--bundle", bundles, "deployment bundle")->required()->expected(1);
    det->add_option("--snr-list", snr_list, "comma-separated SNRs in dB");
    det->add_option("--data", data_dir, "directory written by gen-data (default: synthesize)");
    det->add_option("--constellation", constellation, "qpsk or 16qam");
    det->add_option("--n-payload", n_payload, "channel uses per SNR");
    det->add_flag("--perfect-csi", perfect_csi, "detect with the true channel");
    det->add_option("--payload-rho", payload_rho, "payload power (default: pilot power)");

    auto* rep = app.add_subcommand("report", "plots and a summary table from CSV files");
    std::vector<std::string> csvs;
    rep->add_option("csv", csvs, "curve CSV files")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve(common);
        const fs::path dir = out_dir(common);

        if (*gen) {
            auto m = start_manifest("gen-data", common, cfg);
            const auto t0 = std::chrono::steady_clock::now();
            const auto ds = synthesize_dataset(cfg.channel);
            for (const auto* b : {&ds.train, &ds.test}) {
                const auto path = (dir / (std::string(to_string(b->split)) + ".bin")).string();
                save_channel_batch(*b, path);
                m.artifacts.push_back(path);
                m.artifacts.push_back(path + ".meta.json");
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test samples to " << dir
                      << " in " << secs << " s\n";
            m.write(dir, cfg);
        } else if (*tr) {
            auto m = start_manifest("train", common, cfg);
            const auto ds = load_or_synthesize(data_dir, cfg);
            TrainOptions opts;
            opts.log_path = (dir / "train_log.jsonl").string();
            opts.checkpoint_path = (dir / "checkpoint.qmimo").string();
            opts.resume = resume;
            if (!resume) fs::remove(opts.log_path);
            opts.on_epoch = [](const EpochRecord& r) {
                std::cout << "epoch " << r.epoch << " loss " << r.loss << " cenet " << r.cenet_loss << " selnet "
                          << r.selnet_loss << " lr " << r.lr << " t " << r.wall_s << " s\n"
                          << std::flush;
            };
            const auto bundle = train(cfg, ds.train, opts);
            const auto path = (dir / "bundle.qmimo").string();
            export_deployment(bundle, path);
            Estimator est(bundle);
            const auto r = nmse_eval(est, ds.test, cfg.train_snr_db, cfg.seed);
            std::cout << method_label(cfg) << ": test NMSE at " << cfg.train_snr_db << " dB = " << to_db(r.value)
                      << " dB\n";
            m.artifacts = {path, opts.log_path, opts.checkpoint_path};
            m.write(dir, cfg);
        } else if (*ev) {
            if (!methods.empty() && methods.size() != bundles.size())
                throw CLI::ValidationError("--method", "give one label per --bundle");
            auto m = start_manifest("eval", common, cfg);
            std::vector<BenchmarkRow> rows;
            for (std::size_t i = 0; i < bundles.size(); ++i) rows.push_back({methods.empty() ? "" : methods[i], bundles[i]});
            BenchmarkOptions opts;
            opts.snr_db = parse_snr_list(snr_list);
            opts.seed = cfg.seed;
            opts.ber = with_ber;
            opts.ber_options.constellation = Constellation::parse(constellation);
            opts.ber_options.n_payload = n_payload;
            opts.ber_options.seed = cfg.seed;
            const auto ds = load_or_synthesize(data_dir, cfg);
            const auto recs = run_benchmark_matrix(rows, ds.test, opts);
            print_records(recs);
            const auto csv = (dir / "curves.csv").string();
            write_csv(recs, csv);
            m.artifacts.push_back(csv);
            write_plots(recs, dir, m);
            m.write(dir, cfg);
        } else if (*det) {
            auto m = start_manifest("detect", common, cfg);
            Estimator est(load_deployment(bundles.front()));
            const auto ds = load_or_synthesize(data_dir, est.bundle().config);
            BerOptions opts;
            opts.constellation = Constellation::parse(constellation);
            opts.n_payload = n_payload;
            opts.seed = cfg.seed;
            opts.perfect_csi = perfect_csi;
            opts.payload_rho = payload_rho;
            const auto recs = ber_eval(est, ds.test, parse_snr_list(snr_list), opts);
            print_records(recs);
            const auto csv = (dir / "ber.csv").string();
            write_csv(recs, csv);
            m.artifacts.push_back(csv);
            write_plots(recs, dir, m);
            m.write(dir, cfg);
        } else if (*rep) {
            auto m = start_manifest("report", common, cfg);
            std::vector<CurveRecord> all;
            for (const auto& f : csvs) {
                auto r = read_csv(f);
                all.insert(all.end(), r.begin(), r.end());
            }
            write_plots(all, dir, m);
            std::map<std::pair<std::string, std::string>, std::map<double, double>> table;
            for (const auto& r : all) table[{r.metric, r.method}][r.snr_db] = r.value;
            const auto md = (dir / "report.md").string();
            std::ofstream out(md);
            for (const auto& [key, row] : table) {
                out << "| " << key.first << " | " << key.second << " |";
                for (const auto& [snr, v] : row)
                    out << ' ' << snr << " dB: " << (key.first == "nmse" ? to_db(v) : v) << " |";
                out << '\n';
            }
            out.close();
            m.artifacts.push_back(md);
            std::cout << "wrote " << md << '\n';
            m.write(dir, cfg);
        }
    } catch (const OutOfScope& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

// SPDX-License-Identifier: Apache-2.0
#include "qmimo/eval.hpp"

#include "qmimo/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace qmimo {

namespace {

constexpr double kGuard = -30.0;

std::uint64_t snr_tag(double snr_db) { return std::bit_cast<std::uint64_t>(snr_db); }

// Rows {m, m + M} for every m in the index set.
std::vector<Index> doubled(const std::vector<Index>& set, Index M) {
    std::vector<Index> rows;
    for (Index m : set) rows.push_back(m);
    for (Index m : set) rows.push_back(m + M);
    return rows;
}

double mills(double t) {
    return std::exp(-0.5 * t * t - 0.5 * std::log(2.0 * std::numbers::pi) - log_phi(t));
}

template <typename LogPhi>
double objective(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x, LogPhi&& lphi) {
    const Index M = p.masks.antennas();
    const Eigen::VectorXd hx = p.H * x;
    const double c = std::sqrt(2.0 / p.sigma2);
    double f = 0.0;
    for (Index i : doubled(p.masks.B, M)) f += lphi(c * p.y[i] * hx[i]);
    for (Index j : doubled(p.masks.A, M)) f -= (hx[j] - p.y[j]) * (hx[j] - p.y[j]) / p.sigma2;
    return f;
}

Eigen::VectorXd project_ball(const Eigen::VectorXd& x, double rho) {
    const double n = x.norm(), r = std::sqrt(rho);
    return n > r ? Eigen::VectorXd(x * (r / n)) : x;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else if (ch != '\r') {
            fields.back() += ch;
        }
    }
    return fields;
}

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '<') out += "&lt;";
        else if (ch == '>') out += "&gt;";
        else if (ch == '&') out += "&amp;";
        else out += ch;
    }
    return out;
}

}  // namespace

std::string method_label(const ExperimentConfig& cfg) {
    const std::string ma = std::to_string(cfg.full_resolution_count());
    switch (cfg.mode) {
        case Mode::ZcPilots: return cfg.full_resolution_count() == 0 ? "CENet, 1-bit" : "CENet, M_A=" + ma;
        case Mode::OneBit: return "PDNet+CENet, 1-bit";
        case Mode::FixedAlloc: return "PDNet+CENet, fixed M_A=" + ma;
        case Mode::CnnAblation: return "CNN";
        case Mode::Full: return "proposed, M_A=" + ma;
    }
    return "?";
}

void require_in_scope(const std::string& method) {
    std::string lower;
    for (char ch : method) lower += char(std::tolower(static_cast<unsigned char>(ch)));
    if (lower.find("gamp") != std::string::npos)
        throw OutOfScope("method '" + method + "' is a message-passing baseline and is out of scope");
}

CurveRecord nmse_eval(Estimator& est, const ChannelBatch& test, double snr_db, std::uint64_t seed) {
    if (test.size() == 0) throw std::invalid_argument("nmse_eval: empty test set");
    const auto& cfg = est.bundle().config;
    if (test.spec.M != cfg.channel.M || test.spec.K != cfg.channel.K)
        throw ContractViolation("nmse_eval: test set dimensions differ from the bundle");
    Rng rng = make_rng(seed, Stream::EvalNoise, {snr_tag(snr_db)});
    const Tensor Hhat = est.estimate(test.Htilde, ExperimentConfig::noise_variance(cfg.rho, snr_db), rng);
    return {method_label(cfg), snr_db, "nmse", nmse(Hhat, test.Htarget), test.size(), seed};
}

Constellation::Constellation(Kind kind) : kind_(kind) {
    if (kind == Kind::Qpsk) {
        bits_ = 2;
        for (int i = 0; i < 4; ++i)
            points_.emplace_back((i & 2 ? -1.0 : 1.0) / std::sqrt(2.0), (i & 1 ? -1.0 : 1.0) / std::sqrt(2.0));
    } else {
        bits_ = 4;
        // Gray pairs per axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
        const double level[4] = {-3.0, -1.0, 3.0, 1.0};
        for (int i = 0; i < 16; ++i) points_.emplace_back(level[i >> 2] / std::sqrt(10.0), level[i & 3] / std::sqrt(10.0));
    }
}

Constellation Constellation::parse(const std::string& name) {
    if (name == "qpsk") return Constellation(Kind::Qpsk);
    if (name == "16qam") return Constellation(Kind::Qam16);
    throw std::invalid_argument("unknown constellation '" + name + "' (qpsk, 16qam)");
}

std::vector<int> Constellation::bits(int index) const {
    std::vector<int> b(static_cast<std::size_t>(bits_));
    for (int i = 0; i < bits_; ++i) b[std::size_t(i)] = (index >> (bits_ - 1 - i)) & 1;
    return b;
}

int Constellation::index_of(const std::vector<int>& b) const {
    int index = 0;
    for (int v : b) index = (index << 1) | (v & 1);
    return index;
}

int Constellation::nearest(std::complex<double> z, double scale) const {
    int best = 0;
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < size(); ++i) {
        const double d = std::norm(z - scale * points_[std::size_t(i)]);
        if (d < dmin) {
            dmin = d;
            best = i;
        }
    }
    return best;
}

double log_phi(double t) {
    if (t > 0.0) return std::log1p(-0.5 * std::erfc(t / std::numbers::sqrt2));
    if (t > -30.0) return std::log(0.5 * std::erfc(-t / std::numbers::sqrt2));
    const double t2 = t * t;
    return -0.5 * t2 - std::log(-t) - 0.5 * std::log(2.0 * std::numbers::pi) +
           std::log1p(-1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2));
}

double log_phi_guarded(double t) { return t >= kGuard ? log_phi(t) : log_phi(kGuard) + mills(kGuard) * (t - kGuard); }

double nml_objective(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return objective(p, x, log_phi_guarded);
}

double ml_log_likelihood(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return objective(p, x, log_phi);
}

Eigen::VectorXd nml_gradient(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Index M = p.masks.antennas();
    const Eigen::VectorXd hx = p.H * x;
    const double c = std::sqrt(2.0 / p.sigma2);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p.H.rows());
    for (Index i : doubled(p.masks.B, M)) w[i] = c * p.y[i] * mills(std::max(c * p.y[i] * hx[i], kGuard));
    for (Index j : doubled(p.masks.A, M)) w[j] = -2.0 * (hx[j] - p.y[j]) / p.sigma2;
    return p.H.transpose() * w;
}

NmlResult detect_nml(const DetectionProblem& p, const Constellation& c, const NmlOptions& opts) {
    const Index K2 = p.H.cols(), K = K2 / 2;
    NmlResult r;
    r.x = Eigen::VectorXd::Zero(K2);
    double f = nml_objective(p, r.x);
    r.objective.push_back(f);
    // Curvature bound: (2 / sigma2) ||H||_F^2 covers both row kinds.
    double step = p.sigma2 / (2.0 * std::max(p.H.squaredNorm(), 1e-300));
    for (r.iterations = 1; r.iterations <= opts.max_iterations; ++r.iterations) {
        const Eigen::VectorXd g = nml_gradient(p, r.x);
        step *= 2.0;
        Eigen::VectorXd xn, d;
        double fn = f;
        bool accepted = false;
        while (step > 1e-300) {
            xn = project_ball(r.x + step * g, p.rho);
            d = xn - r.x;
            fn = nml_objective(p, xn);
            if (fn >= f + g.dot(d) - d.squaredNorm() / (2.0 * step)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || d.norm() < opts.tolerance) {
            r.converged = true;
            if (accepted && fn >= f) {
                r.x = xn;
                f = fn;
                r.objective.push_back(f);
            }
            break;
        }
        r.x = xn;
        f = fn;
        r.objective.push_back(f);
    }
    if (r.iterations > opts.max_iterations) r.iterations = opts.max_iterations;
    const double scale = std::sqrt(p.rho / double(K));
    for (Index k = 0; k < K; ++k) r.symbols.push_back(c.nearest({r.x[k], r.x[k + K]}, scale));
    return r;
}

Eigen::VectorXd payload_vector(const std::vector<int>& symbols, const Constellation& c, double rho) {
    const Index K = static_cast<Index>(symbols.size());
    Eigen::VectorXd x(2 * K);
    for (Index k = 0; k < K; ++k) {
        const auto s = c.point(symbols[std::size_t(k)]);
        x[k] = s.real();
        x[k + K] = s.imag();
    }
    return x * std::sqrt(rho) / x.norm();
}

std::vector<int> detect_ml(const DetectionProblem& p, const Constellation& c) {
    const Index K = p.H.cols() / 2;
    std::vector<int> cand(static_cast<std::size_t>(K), 0), best = cand;
    double best_ll = -std::numeric_limits<double>::infinity();
    while (true) {
        const double ll = ml_log_likelihood(p, payload_vector(cand, c, p.rho));
        if (ll > best_ll) {
            best_ll = ll;
            best = cand;
        }
        std::size_t k = 0;
        while (k < cand.size() && ++cand[k] == c.size()) cand[k++] = 0;
        if (k == cand.size()) break;
    }
    return best;
}

BerCount simulate_payload(const Tensor& Htilde_true, const Tensor& Htilde_csi, const SelectionMasks& masks,
                          double sigma2, double rho, const Constellation& c, Index n_uses, std::uint64_t seed,
                          Detector detector, std::uint64_t stream_tag) {
    if (Htilde_true.shape() != Htilde_csi.shape()) throw ContractViolation("simulate_payload: CSI shape mismatch");
    const Index n = Htilde_true.dim(0), M2 = Htilde_true.dim(1), K = Htilde_true.dim(2) / 2;
    if (n == 0) throw std::invalid_argument("simulate_payload: no channels");
    BerCount count;
    const auto b_rows = doubled(masks.B, M2 / 2);
    for (Index u = 0; u < n_uses; ++u) {
        Rng rng = make_rng(seed, Stream::Payload, {stream_tag, std::uint64_t(u)});
        std::uniform_int_distribution<int> pick(0, c.size() - 1);
        std::vector<int> sent(static_cast<std::size_t>(K));
        for (auto& s : sent) s = pick(rng);
        const Eigen::VectorXd x = payload_vector(sent, c, rho);

        DetectionProblem p;
        p.H = Htilde_true.slice(u % n);
        p.y = p.H * x + awgn({M2}, sigma2, rng).data();
        for (Index i : b_rows) p.y[i] = hard_sign(p.y[i]);
        p.H = Htilde_csi.slice(u % n);
        p.masks = masks;
        p.sigma2 = sigma2;
        p.rho = rho;

        std::vector<int> got;
        if (detector == Detector::Nml) {
            auto r = detect_nml(p, c);
            if (!r.converged) ++count.unconverged;
            got = std::move(r.symbols);
        } else {
            got = detect_ml(p, c);
        }
        for (Index k = 0; k < K; ++k) {
            const auto bs = c.bits(sent[std::size_t(k)]), bg = c.bits(got[std::size_t(k)]);
            for (std::size_t i = 0; i < bs.size(); ++i) count.errors += bs[i] != bg[i];
            count.bits += c.bits_per_symbol();
        }
    }
    return count;
}

Tensor full_real_stack(const Tensor& Htarget) {
    const Index n = Htarget.dim(0), M = Htarget.dim(1) / 2, K = Htarget.dim(2);
    Tensor out({n, 2 * M, 2 * K});
    for (Index s = 0; s < n; ++s) {
        const auto t = Htarget.slice(s);
        auto f = out.slice(s);
        f.topLeftCorner(M, K) = t.topRows(M);
        f.topRightCorner(M, K) = -t.bottomRows(M);
        f.bottomLeftCorner(M, K) = t.bottomRows(M);
        f.bottomRightCorner(M, K) = t.topRows(M);
    }
    return out;
}

std::vector<CurveRecord> ber_eval(Estimator& est, const ChannelBatch& channels, const std::vector<double>& snr_db,
                                  const BerOptions& opts) {
    const auto& cfg = est.bundle().config;
    const double payload_rho = opts.payload_rho > 0.0 ? opts.payload_rho : cfg.rho;
    std::vector<CurveRecord> out;
    for (std::size_t i = 0; i < snr_db.size(); ++i) {
        const double sigma2 = ExperimentConfig::noise_variance(cfg.rho, snr_db[i]);
        Tensor csi = channels.Htilde;
        if (!opts.perfect_csi) {
            Rng rng = make_rng(opts.seed, Stream::EvalNoise, {snr_tag(snr_db[i])});
            csi = full_real_stack(est.estimate(channels.Htilde, sigma2, rng));
        }
        const BerCount n = simulate_payload(channels.Htilde, csi, est.bundle().masks, sigma2, payload_rho,
                                            opts.constellation, opts.n_payload, opts.seed, Detector::Nml, i);
        out.push_back({method_label(cfg), snr_db[i], "ber", n.ber(), n.bits, opts.seed});
    }
    return out;
}

std::vector<CurveRecord> run_benchmark_matrix(const std::vector<BenchmarkRow>& rows, const ChannelBatch& test,
                                              const BenchmarkOptions& opts) {
    std::vector<CurveRecord> out;
    for (const auto& row : rows) require_in_scope(row.method);
    for (const auto& row : rows) {
        if (row.bundle_path.empty() || !std::filesystem::exists(row.bundle_path))
            throw std::runtime_error("benchmark: missing bundle for row '" + row.method + "' (" + row.bundle_path + ")");
        Estimator est(load_deployment(row.bundle_path));
        const std::string label = row.method.empty() ? method_label(est.bundle().config) : row.method;
        require_in_scope(label);
        for (double snr : opts.snr_db) {
            auto r = nmse_eval(est, test, snr, opts.seed);
            r.method = label;
            out.push_back(r);
        }
        if (opts.ber) {
            BerOptions bo = opts.ber_options;
            bo.seed = opts.seed;
            for (auto r : ber_eval(est, test, opts.snr_db, bo)) {
                r.method = label;
                out.push_back(r);
            }
        }
    }
    return out;
}

void write_csv(const std::vector<CurveRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "method,snr_db,metric,value,n_samples,seed\n";
    f.precision(17);
    for (const auto& r : records)
        f << csv_quote(r.method) << ',' << r.snr_db << ',' << r.metric << ',' << r.value << ',' << r.n_samples << ','
          << r.seed << '\n';
}

std::vector<CurveRecord> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<CurveRecord> out;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto v = csv_split(line);
        if (v.size() != 6) throw io::FormatError("malformed CSV row: " + line);
        out.push_back({v[0], std::stod(v[1]), v[2], std::stod(v[3]), std::stoll(v[4]), std::stoull(v[5])});
    }
    return out;
}

void write_svg_plot(const std::vector<CurveRecord>& records, const std::string& metric, const std::string& path) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& r : records) {
        if (r.metric != metric || !(r.value > 0.0)) continue;
        const double ly = std::log10(r.value);
        series[r.method].emplace_back(r.snr_db, ly);
        x0 = std::min(x0, r.snr_db);
        x1 = std::max(x1, r.snr_db);
        y0 = std::min(y0, ly);
        y1 = std::max(y1, ly);
    }
    if (series.empty()) {
        x0 = 0, x1 = 1, y0 = -1, y1 = 0;
    }
    if (x1 <= x0) x1 = x0 + 1.0;
    y0 = std::floor(y0);
    y1 = std::max(std::ceil(y1), y0 + 1.0);

    const double W = 720, H = 460, left = 70, right = 230, top = 30, bottom = 50;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * (H - top - bottom); };
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right << "\" height=\""
      << H - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int e = int(y0); e <= int(y1); ++e) {
        f << "<line x1=\"" << left << "\" x2=\"" << W - right << "\" y1=\"" << py(e) << "\" y2=\"" << py(e)
          << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 8 << "\" y=\"" << py(e) + 4
          << "\" text-anchor=\"end\">1e" << e << "</text>\n";
    }
    const int nx = 6;
    for (int i = 0; i <= nx; ++i) {
        const double x = x0 + (x1 - x0) * i / nx;
        f << "<text x=\"" << px(x) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << x << "</text>\n";
    }
    f << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
    f << "<text x=\"18\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (top + H - bottom) / 2 << ")\">" << svg_escape(metric == "nmse" ? "NMSE" : "BER") << "</text>\n";
    int ci = 0;
    for (auto& [method, pts] : series) {
        std::sort(pts.begin(), pts.end());
        const char* col = palette[ci % 8];
        f << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : pts) f << px(x) << ',' << py(y) << ' ';
        f << "\"/>\n";
        for (const auto& [x, y] : pts)
            f << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
        const double ly = top + 16 + 18 * ci;
        f << "<line x1=\"" << W - right + 12 << "\" x2=\"" << W - right + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
          << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n<text x=\"" << W - right + 42 << "\" y=\"" << ly + 4
          << "\">" << svg_escape(method) << "</text>\n";
        ++ci;
    }
    f << "</svg>\n";
}

}  // namespace qmimo

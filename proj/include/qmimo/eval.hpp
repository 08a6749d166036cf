// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/airlink.hpp"
#include "qmimo/channel.hpp"
#include "qmimo/trainer.hpp"

#include <Eigen/Dense>

#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmimo {

class OutOfScope : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct CurveRecord {
    std::string method;
    double snr_db = 0.0;
    std::string metric;  // "nmse" or "ber"
    double value = 0.0;
    Index n_samples = 0;
    std::uint64_t seed = 0;
};

inline double to_db(double v) { return 10.0 * std::log10(v); }

// Comparison-table label for a trained configuration.
std::string method_label(const ExperimentConfig& cfg);
// Throws OutOfScope for the message-passing baselines.
void require_in_scope(const std::string& method);

// NMSE of the bundle's estimator over a test batch at the given SNR.
CurveRecord nmse_eval(Estimator& est, const ChannelBatch& test, double snr_db, std::uint64_t seed);

// Gray-mapped square constellations with unit average energy.
class Constellation {
public:
    enum class Kind { Qpsk, Qam16 };
    explicit Constellation(Kind kind);
    static Constellation parse(const std::string& name);

    Kind kind() const { return kind_; }
    const char* name() const { return kind_ == Kind::Qpsk ? "qpsk" : "16qam"; }
    int bits_per_symbol() const { return bits_; }
    int size() const { return static_cast<int>(points_.size()); }
    std::complex<double> point(int index) const { return points_[static_cast<std::size_t>(index)]; }
    // Symbol index -> bits (MSB first). The index is the bit pattern itself.
    std::vector<int> bits(int index) const;
    int index_of(const std::vector<int>& bits) const;
    // Nearest point to z / scale.
    int nearest(std::complex<double> z, double scale = 1.0) const;

private:
    Kind kind_;
    int bits_;
    std::vector<std::complex<double>> points_;
};

// Gaussian rows (A~) and sign rows (B~) of a real-stacked observation.
struct DetectionProblem {
    Eigen::MatrixXd H;  // [2M, 2K]
    Eigen::VectorXd y;  // [2M]
    SelectionMasks masks;
    double sigma2 = 1.0;
    double rho = 1.0;
};

// Objective maximized by the relaxed detector:
//   sum_{B~} log Phi(sqrt(2/sigma2) y_i h_i^T x) - sum_{A~} (h_j^T x - y_j)^2 / sigma2
// with log Phi continued linearly below -30.
double nml_objective(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd nml_gradient(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x);
// Exact log-likelihood used by the exhaustive reference.
double ml_log_likelihood(const DetectionProblem& p, const Eigen::Ref<const Eigen::VectorXd>& x);

double log_phi(double t);          // accurate for all t
double log_phi_guarded(double t);  // tangent continuation below -30

struct NmlOptions {
    int max_iterations = 500;
    double tolerance = 1e-8;
};

struct NmlResult {
    Eigen::VectorXd x;         // relaxed real-stacked estimate [2K]
    std::vector<int> symbols;  // per-user hard decisions
    bool converged = false;
    int iterations = 0;
    std::vector<double> objective;  // per accepted iterate
};

// Projected gradient ascent over ||x||^2 <= rho, then per-user nearest point
// on the constellation scaled by sqrt(rho / K).
NmlResult detect_nml(const DetectionProblem& p, const Constellation& c, const NmlOptions& opts = {});

// Exhaustive search over every symbol vector, each scaled to ||x||^2 = rho.
std::vector<int> detect_ml(const DetectionProblem& p, const Constellation& c);

// Symbols -> real-stacked payload with ||x||^2 = rho.
Eigen::VectorXd payload_vector(const std::vector<int>& symbols, const Constellation& c, double rho);

enum class Detector { Nml, ExhaustiveMl };

struct BerCount {
    long long bits = 0;
    long long errors = 0;
    long long unconverged = 0;
    double ber() const { return bits ? double(errors) / double(bits) : 0.0; }
};

// Payload transmission over Htilde_true [N, 2M, 2K] with detection against
// Htilde_csi (the same tensor for perfect CSI); channel uses cycle over N.
BerCount simulate_payload(const Tensor& Htilde_true, const Tensor& Htilde_csi, const SelectionMasks& masks,
                          double sigma2, double rho, const Constellation& c, Index n_uses, std::uint64_t seed,
                          Detector detector, std::uint64_t stream_tag = 0);

// [N, 2M, K] column estimates -> [N, 2M, 2K] block layout.
Tensor full_real_stack(const Tensor& Htarget);

struct BerOptions {
    Constellation constellation{Constellation::Kind::Qpsk};
    Index n_payload = 1000;  // channel uses per SNR
    std::uint64_t seed = 1;
    bool perfect_csi = false;
    double payload_rho = -1.0;  // negative: same as the pilot power
};

std::vector<CurveRecord> ber_eval(Estimator& est, const ChannelBatch& channels, const std::vector<double>& snr_db,
                                  const BerOptions& opts);

struct BenchmarkRow {
    std::string method;  // label; empty takes the bundle's own label
    std::string bundle_path;
};

struct BenchmarkOptions {
    std::vector<double> snr_db{0, 5, 10, 15, 20, 25, 30};
    std::uint64_t seed = 1;
    bool ber = false;
    BerOptions ber_options;
};

std::vector<CurveRecord> run_benchmark_matrix(const std::vector<BenchmarkRow>& rows, const ChannelBatch& test,
                                              const BenchmarkOptions& opts);

void write_csv(const std::vector<CurveRecord>& records, const std::string& path);
std::vector<CurveRecord> read_csv(const std::string& path);

// Metric-vs-SNR line plot with logarithmic y axis, one series per method.
void write_svg_plot(const std::vector<CurveRecord>& records, const std::string& metric, const std::string& path);

}  // namespace qmimo

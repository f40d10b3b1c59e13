#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace tuneout {

// J_0(x) ... J_n(x) for integer orders by backward (Miller) recurrence,
// normalised with J_0 + 2 sum J_2k = 1.
std::vector<double> bessel_j_sequence(int n_max, double x);
// J_n(x) for any integer n and real x.
double bessel_j(int n, double x);

// Phase V0 tau / 2 of the diffraction formula with V0 in E_r and tau in us:
// (V0 E_r / hbar) tau / 2 = pi V0 E_r[Hz] tau.
double kd_phase(double depth_recoil, double tau_us, double recoil_hz);
double kd_depth_from_phase(double phase, double tau_us, double recoil_hz);

struct MomentumPopulations {
    std::map<int, double> p;
    std::map<int, double> sigma;  // optional, per order
    // Optional covariance keyed (N, M) with N <= M. Populations normalised to
    // their sum have a singular covariance; the inversion uses its pseudo-inverse.
    std::map<std::pair<int, int>, double> covariance;

    double at(int N) const;
    double total() const;
    int n_max() const;
    bool has(int N) const { return p.count(N) != 0; }
    // Covariance entry, or nullopt when not recorded.
    std::optional<double> cov(int N, int M) const;
};

// P_N = J_N(phase)^2 for |N| <= n_max. n_max <= 0 picks the smallest order
// range whose neglected tail is below `tail`.
MomentumPopulations diffraction_populations_at_phase(double phase, int n_max = 0,
                                                     double tail = 1e-12);
MomentumPopulations diffraction_populations(double depth_recoil, double tau_eff_us,
                                            double recoil_hz, int n_max = 0,
                                            double tail = 1e-12);

struct RamanNathVerdict {
    double margin = 0.0;  // |V0| / bound
    bool ok = true;       // margin <= warn_fraction
    double bound_recoil = 125.0;
    double tau_eff_us = 0.0;
};

RamanNathVerdict raman_nath_check(double depth_recoil, double tau_eff_us,
                                  double warn_fraction = 0.2, double bound_recoil = 125.0);

struct PulseProfile {
    double nominal_us = 0.0;
    std::vector<double> t_us;
    std::vector<double> envelope;  // I(t) / I_max
    double rms_fluctuation = 0.0;

    void validate() const;

    static PulseProfile square(double duration_us, int samples = 1001);
    // Gated pulse of length `duration_us` whose intensity approaches I_max
    // exponentially with 1/e time `edge_us` from both gate edges.
    static PulseProfile exponential_edges(double duration_us, double edge_us, int samples = 2001);
};

// Integral of the envelope by the trapezoidal rule, us.
double effective_pulse_duration(const PulseProfile& profile);

// Depth fluctuation produced by a relative intensity fluctuation; V0 is
// linear in I, so the relative fluctuation carries over one to one.
double depth_fluctuation(double depth_recoil, double relative_intensity_rms);

struct InversionOptions {
    double detection_threshold = 1e-4;  // orders |N| >= 2 below this are dropped
    double atom_number = 1e5;           // binomial variance P(1-P)/N when no sigma is given
    double noise_floor = 1e-4;          // added in quadrature
    double max_phase = 0.0;             // 0: derived from the highest order present
    int max_iterations = 100;
};

struct DepthEstimate {
    double depth_recoil = 0.0;  // |V0|; the sign is not determined by diffraction
    double sigma_recoil = 0.0;
    double phase = 0.0;
    double chi2 = 0.0;
    int dof = 0;
    int iterations = 0;
    std::vector<int> orders_used;
    double tau_eff_us = 0.0;
};

// Least-squares fit of J_N^2 to the provided orders, generalised to the
// population covariance when one is recorded for every pair of used orders.
DepthEstimate invert_depth(const MomentumPopulations& populations, double tau_eff_us,
                           double recoil_hz, const InversionOptions& options = {});

struct RoundTripStudy {
    std::vector<double> estimates;
    std::vector<double> sigmas;
    std::vector<double> pulls;
    double fraction_within_3sigma = 0.0;
};

// Forward model, multiplicative Gaussian noise of relative size `noise` on each
// population (reported as the per-order sigma), inversion. Trials are
// independent and seeded from `seed`, so the result does not depend on `jobs`.
RoundTripStudy kd_round_trip_study(double depth_recoil, double tau_eff_us, double recoil_hz,
                                   double noise, int trials, std::uint64_t seed, int jobs = 1,
                                   const InversionOptions& options = {});

}  // namespace tuneout

#include "tuneout/kd_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/parallel.hpp"

namespace tuneout {

std::vector<double> bessel_j_sequence(int n_max, double x) {
    if (n_max < 0) throw ValidationError("Bessel order range must be >= 0");
    if (!std::isfinite(x)) throw ValidationError("Bessel argument must be finite");
    std::vector<double> out(static_cast<std::size_t>(n_max) + 1, 0.0);
    if (x == 0.0) {
        out[0] = 1.0;
        return out;
    }
    const double ax = std::abs(x);
    const int top = std::max(n_max, static_cast<int>(std::ceil(ax)));
    int start = top + 30 + static_cast<int>(std::sqrt(160.0 * (top + 1)));
    start += start % 2;

    constexpr double kBig = 1e250;
    double next = 0.0;  // J_{k+1}
    double cur = 1e-300;  // J_k, arbitrary scale
    double norm = 0.0;
    for (int k = start; k > 0; --k) {
        if (k <= n_max) out[static_cast<std::size_t>(k)] = cur;
        if (k % 2 == 0) norm += 2.0 * cur;
        const double prev = 2.0 * k / ax * cur - next;
        next = cur;
        cur = prev;
        if (std::abs(cur) > kBig) {
            cur /= kBig;
            next /= kBig;
            norm /= kBig;
            for (int j = k; j <= n_max; ++j) out[static_cast<std::size_t>(j)] /= kBig;
        }
    }
    out[0] = cur;
    norm += cur;
    for (auto& v : out) v /= norm;
    if (x < 0.0) {
        for (std::size_t n = 1; n < out.size(); n += 2) out[n] = -out[n];
    }
    return out;
}

double bessel_j(int n, double x) {
    const int an = std::abs(n);
    const double v = bessel_j_sequence(an, x)[static_cast<std::size_t>(an)];
    return (n < 0 && an % 2 == 1) ? -v : v;
}

double kd_phase(double depth_recoil, double tau_us, double recoil_hz) {
    if (!(tau_us > 0.0)) throw ValidationError("pulse duration must be > 0");
    if (!(recoil_hz > 0.0)) throw ValidationError("recoil frequency must be > 0");
    return constants::pi * depth_recoil * recoil_hz * tau_us * 1e-6;
}

double kd_depth_from_phase(double phase, double tau_us, double recoil_hz) {
    return phase / kd_phase(1.0, tau_us, recoil_hz);
}

double MomentumPopulations::at(int N) const {
    const auto it = p.find(N);
    return it == p.end() ? 0.0 : it->second;
}

double MomentumPopulations::total() const {
    double s = 0.0;
    for (const auto& [n, v] : p) s += v;
    return s;
}

std::optional<double> MomentumPopulations::cov(int N, int M) const {
    const auto it = covariance.find(N <= M ? std::pair{N, M} : std::pair{M, N});
    if (it == covariance.end()) return std::nullopt;
    return it->second;
}

int MomentumPopulations::n_max() const {
    int m = 0;
    for (const auto& [n, v] : p) m = std::max(m, std::abs(n));
    return m;
}

MomentumPopulations diffraction_populations_at_phase(double phase, int n_max, double tail) {
    if (!std::isfinite(phase)) throw ValidationError("diffraction phase must be finite");
    int n = n_max;
    std::vector<double> j;
    if (n <= 0) {
        if (!(tail > 0.0)) throw ValidationError("tail bound must be > 0");
        const int reach = static_cast<int>(std::ceil(std::abs(phase))) + 60;
        j = bessel_j_sequence(reach, phase);
        double rest = 0.0;
        n = reach;
        while (n > 0) {
            const double add = 2.0 * j[static_cast<std::size_t>(n)] * j[static_cast<std::size_t>(n)];
            if (rest + add >= tail) break;
            rest += add;
            --n;
        }
        n = std::max(n, 1);  // the first orders are always reported
    } else {
        j = bessel_j_sequence(n, phase);
    }
    MomentumPopulations out;
    for (int k = -n; k <= n; ++k) {
        const double v = j[static_cast<std::size_t>(std::abs(k))];
        out.p[k] = v * v;
    }
    return out;
}

MomentumPopulations diffraction_populations(double depth_recoil, double tau_eff_us,
                                            double recoil_hz, int n_max, double tail) {
    return diffraction_populations_at_phase(kd_phase(depth_recoil, tau_eff_us, recoil_hz), n_max,
                                            tail);
}

RamanNathVerdict raman_nath_check(double depth_recoil, double tau_eff_us, double warn_fraction,
                                  double bound_recoil) {
    if (!(bound_recoil > 0.0)) throw ValidationError("Raman-Nath bound must be > 0");
    if (!(tau_eff_us > 0.0)) throw ValidationError("pulse duration must be > 0");
    RamanNathVerdict v;
    v.bound_recoil = bound_recoil;
    v.tau_eff_us = tau_eff_us;
    v.margin = std::abs(depth_recoil) / bound_recoil;
    v.ok = v.margin <= warn_fraction;
    return v;
}

void PulseProfile::validate() const {
    if (!(nominal_us > 0.0)) throw ValidationError("pulse: nominal duration must be > 0");
    if (t_us.empty() || envelope.empty()) throw ValidationError("pulse: empty envelope");
    if (t_us.size() != envelope.size()) {
        throw ValidationError("pulse: time and envelope sizes differ");
    }
    if (t_us.size() < 100) throw ValidationError("pulse: need at least 100 envelope samples");
    for (std::size_t i = 0; i < envelope.size(); ++i) {
        if (!(envelope[i] >= 0.0 && envelope[i] <= 1.0)) {
            std::ostringstream msg;
            msg << "pulse: envelope sample " << i << " = " << envelope[i]
                << " is not normalised to [0, 1]";
            throw ValidationError(msg.str());
        }
        if (i > 0 && !(t_us[i] > t_us[i - 1])) {
            throw ValidationError("pulse: time stamps must increase");
        }
    }
    if (!(rms_fluctuation >= 0.0)) throw ValidationError("pulse: rms fluctuation must be >= 0");
}

PulseProfile PulseProfile::square(double duration_us, int samples) {
    if (!(duration_us > 0.0)) throw ValidationError("pulse: duration must be > 0");
    PulseProfile p;
    p.nominal_us = duration_us;
    p.t_us.resize(static_cast<std::size_t>(samples));
    p.envelope.assign(static_cast<std::size_t>(samples), 1.0);
    for (int i = 0; i < samples; ++i) p.t_us[i] = duration_us * i / (samples - 1);
    return p;
}

PulseProfile PulseProfile::exponential_edges(double duration_us, double edge_us, int samples) {
    if (!(duration_us > 0.0) || !(edge_us > 0.0)) {
        throw ValidationError("pulse: duration and edge time must be > 0");
    }
    PulseProfile p = square(duration_us, samples);
    double peak = 0.0;
    for (std::size_t i = 0; i < p.t_us.size(); ++i) {
        const double from_edge = std::min(p.t_us[i], duration_us - p.t_us[i]);
        p.envelope[i] = 1.0 - std::exp(-from_edge / edge_us);
        peak = std::max(peak, p.envelope[i]);
    }
    for (auto& v : p.envelope) v /= peak;
    return p;
}

double effective_pulse_duration(const PulseProfile& profile) {
    profile.validate();
    double s = 0.0;
    for (std::size_t i = 1; i < profile.t_us.size(); ++i) {
        s += 0.5 * (profile.envelope[i] + profile.envelope[i - 1]) *
             (profile.t_us[i] - profile.t_us[i - 1]);
    }
    return s;
}

double depth_fluctuation(double depth_recoil, double relative_intensity_rms) {
    return std::abs(depth_recoil) * relative_intensity_rms;
}

namespace {

struct Observation {
    int order;
    double value;
    double sigma;
};

// Observations with the whitening matrix W, W^T W = C^+, applied to residuals.
struct Data {
    std::vector<Observation> obs;
    Eigen::MatrixXd whiten;
};

struct Residuals {
    double chi2 = 0.0;
    double fisher = 0.0;    // |W dP/dx|^2
    double gradient = 0.0;  // (W dP/dx) . (W (P - model))
};

Residuals evaluate(const Data& d, int top, double x) {
    const auto j = bessel_j_sequence(top + 1, x);
    const auto k = static_cast<Eigen::Index>(d.obs.size());
    Eigen::VectorXd res(k);
    Eigen::VectorXd der(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& o = d.obs[static_cast<std::size_t>(i)];
        const int n = std::abs(o.order);
        const double jn = j[static_cast<std::size_t>(n)];
        // J_{-1} = -J_1
        const double jm = n == 0 ? -j[1] : j[static_cast<std::size_t>(n - 1)];
        res(i) = o.value - jn * jn;
        der(i) = jn * (jm - j[static_cast<std::size_t>(n + 1)]);
    }
    const Eigen::VectorXd wr = d.whiten * res;
    const Eigen::VectorXd wd = d.whiten * der;
    return {wr.squaredNorm(), wd.squaredNorm(), wd.dot(wr)};
}

Data whitened(std::vector<Observation> obs, const MomentumPopulations& pops) {
    Data d;
    const auto k = static_cast<Eigen::Index>(obs.size());
    Eigen::MatrixXd c(k, k);
    bool full = true;
    for (Eigen::Index a = 0; a < k && full; ++a) {
        for (Eigen::Index b = 0; b < k && full; ++b) {
            const auto v = pops.cov(obs[static_cast<std::size_t>(a)].order, obs[static_cast<std::size_t>(b)].order);
            if (!v || !std::isfinite(*v)) full = false;
            else c(a, b) = *v;
        }
    }
    if (full) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
        const double top = eig.eigenvalues().maxCoeff();
        if (eig.info() == Eigen::Success && top > 0.0) {
            std::vector<Eigen::Index> keep;
            for (Eigen::Index a = 0; a < k; ++a) {
                if (eig.eigenvalues()(a) > 1e-10 * top) keep.push_back(a);
            }
            d.whiten.resize(static_cast<Eigen::Index>(keep.size()), k);
            for (std::size_t r = 0; r < keep.size(); ++r) {
                d.whiten.row(static_cast<Eigen::Index>(r)) =
                    eig.eigenvectors().col(keep[r]).transpose() / std::sqrt(eig.eigenvalues()(keep[r]));
            }
            d.obs = std::move(obs);
            return d;
        }
    }
    d.whiten = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index a = 0; a < k; ++a) d.whiten(a, a) = 1.0 / obs[static_cast<std::size_t>(a)].sigma;
    d.obs = std::move(obs);
    return d;
}

struct Refined {
    double x = 0.0;
    Residuals res;
    int iterations = 0;
};

Refined refine(const Data& obs, int top, double x, double x_max,
               int max_iterations) {
    Refined out{x, evaluate(obs, top, x), 0};
    double lambda = 1e-3;
    for (int it = 0; it < max_iterations; ++it) {
        out.iterations = it + 1;
        if (!(out.res.fisher > 0.0)) break;
        bool accepted = false;
        double step = 0.0;
        for (int tries = 0; tries < 40; ++tries) {
            step = out.res.gradient / (out.res.fisher * (1.0 + lambda));
            const double trial = std::clamp(out.x + step, 0.0, x_max);
            const Residuals r = evaluate(obs, top, trial);
            if (r.chi2 <= out.res.chi2) {
                step = trial - out.x;
                out.x = trial;
                out.res = r;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted || std::abs(step) <= 1e-15 * std::max(1.0, out.x)) break;
    }
    return out;
}

// Half-width where chi2 rises by one, for the flat start of the curve at x = 0.
double profile_sigma(const Data& obs, int top, double x, double chi2,
                     double x_max) {
    double lo = x;
    double hi = x_max;
    if (evaluate(obs, top, hi).chi2 < chi2 + 1.0) return hi - x;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (evaluate(obs, top, mid).chi2 < chi2 + 1.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi) - x;
}

}  // namespace

DepthEstimate invert_depth(const MomentumPopulations& populations, double tau_eff_us,
                           double recoil_hz, const InversionOptions& options) {
    const double per_phase = kd_phase(1.0, tau_eff_us, recoil_hz);
    for (int n : {0, 1, -1}) {
        if (!populations.has(n)) {
            throw ValidationError("depth inversion needs orders 0, +1 and -1");
        }
    }
    if (!(options.atom_number > 0.0) || !(options.noise_floor >= 0.0)) {
        throw ValidationError("depth inversion: atom number must be > 0 and noise floor >= 0");
    }

    std::vector<Observation> obs;
    int top = 1;
    for (const auto& [n, v] : populations.p) {
        if (!std::isfinite(v)) throw ValidationError("depth inversion: non-finite population");
        if (std::abs(n) >= 2 && v < options.detection_threshold) continue;
        double s = 0.0;
        if (const auto it = populations.sigma.find(n);
            it != populations.sigma.end() && it->second > 0.0) {
            s = it->second;
        } else {
            const double pc = std::clamp(v, 0.0, 1.0);
            s = std::sqrt(pc * (1.0 - pc) / options.atom_number +
                          options.noise_floor * options.noise_floor);
        }
        if (!(s > 0.0)) throw ValidationError("depth inversion: zero weight for an order");
        obs.push_back({n, v, s});
        top = std::max(top, std::abs(n));
    }

    double lo = obs.front().value;
    double hi = lo;
    double widest = 0.0;
    for (const auto& o : obs) {
        lo = std::min(lo, o.value);
        hi = std::max(hi, o.value);
        widest = std::max(widest, o.sigma);
    }
    if (hi - lo <= 2.0 * widest && obs.size() >= 3) {
        std::ostringstream msg;
        msg << "depth inversion: populations of all " << obs.size()
            << " orders agree within noise (spread " << hi - lo
            << "); the depth is not identifiable";
        throw ComputationError(msg.str());
    }

    const double x_max = options.max_phase > 0.0 ? options.max_phase : top + 10.0;
    const Data data = whitened(obs, populations);

    // Small-argument start J_1^2 / J_0^2 ~ (x/2)^2, then a coarse scan so that
    // depths past the first J_0 zero are not mistaken for the first branch.
    std::vector<double> starts;
    const double p0 = populations.at(0);
    const double p1 = 0.5 * (populations.at(1) + populations.at(-1));
    if (p0 > 0.0 && p1 >= 0.0) starts.push_back(std::min(2.0 * std::sqrt(p1 / p0), x_max));
    constexpr int kScan = 400;
    double best_x = 0.0;
    double best_chi2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kScan; ++i) {
        const double x = x_max * i / kScan;
        const double c = evaluate(data, top, x).chi2;
        if (c < best_chi2) {
            best_chi2 = c;
            best_x = x;
        }
    }
    starts.push_back(best_x);

    Refined best;
    best.res.chi2 = std::numeric_limits<double>::infinity();
    int iterations = 0;
    for (double s : starts) {
        const Refined r = refine(data, top, s, x_max, options.max_iterations);
        iterations += r.iterations;
        if (r.res.chi2 < best.res.chi2) best = r;
    }

    DepthEstimate out;
    out.phase = best.x;
    out.depth_recoil = best.x / per_phase;
    const double sigma_phase = best.res.fisher > 1e-12
                                   ? 1.0 / std::sqrt(best.res.fisher)
                                   : profile_sigma(data, top, best.x, best.res.chi2, x_max);
    out.sigma_recoil = sigma_phase / per_phase;
    out.chi2 = best.res.chi2;
    out.dof = static_cast<int>(data.whiten.rows()) - 1;
    out.iterations = iterations;
    out.tau_eff_us = tau_eff_us;
    for (const auto& o : obs) out.orders_used.push_back(o.order);
    return out;
}

RoundTripStudy kd_round_trip_study(double depth_recoil, double tau_eff_us, double recoil_hz,
                                   double noise, int trials, std::uint64_t seed, int jobs,
                                   const InversionOptions& options) {
    if (trials < 1) throw ValidationError("round-trip study needs >= 1 trial");
    if (!(noise > 0.0)) throw ValidationError("round-trip study needs noise > 0");
    const auto truth = diffraction_populations(depth_recoil, tau_eff_us, recoil_hz);
    RoundTripStudy out;
    out.estimates.resize(static_cast<std::size_t>(trials));
    out.sigmas.resize(static_cast<std::size_t>(trials));
    out.pulls.resize(static_cast<std::size_t>(trials));
    parallel_for(static_cast<std::size_t>(trials), jobs, [&](std::size_t t) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(t)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> normal(0.0, 1.0);
        MomentumPopulations m;
        for (const auto& [n, v] : truth.p) {
            const double meas = v * (1.0 + noise * normal(rng));
            m.p[n] = meas;
            m.sigma[n] = noise * std::abs(meas);
        }
        const auto est = invert_depth(m, tau_eff_us, recoil_hz, options);
        out.estimates[t] = est.depth_recoil;
        out.sigmas[t] = est.sigma_recoil;
        out.pulls[t] = (est.depth_recoil - std::abs(depth_recoil)) / est.sigma_recoil;
    });
    int within = 0;
    for (double p : out.pulls) within += std::abs(p) <= 3.0;
    out.fraction_within_3sigma = static_cast<double>(within) / trials;
    return out;
}

}  // namespace tuneout

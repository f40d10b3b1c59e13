#include "tuneout/tuneout_solver.hpp"

#include <boost/math/tools/toms748_solve.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <tuple>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/parallel.hpp"

namespace tuneout {

std::pair<double, double> default_bracket(const HyperfineState& state, const LightField& light,
                                          const Contributions& c) {
    const bool vector_active =
        c.vector && state.m_F.twice() != 0 && polarization_params(light).C != 0.0;
    if (vector_active) return {782.0, 794.5};
    return {785.0, 794.0};
}

TuneoutResult find_tuneout(const PolarizabilityModel& model, const LightField& light,
                           double mass_kg, const Contributions& c, const TuneoutOptions& options) {
    light.validate();
    auto [lo, hi] = std::pair{options.lo_nm, options.hi_nm};
    if (lo == 0.0 && hi == 0.0) std::tie(lo, hi) = default_bracket(model.state(), light, c);
    if (!(lo < hi)) throw ValidationError("tune-out bracket needs lo < hi");
    if (options.restrict_to_window && (lo < kWindowLoNm || hi > kWindowHiNm)) {
        std::ostringstream msg;
        msg << "tune-out bracket (" << lo << ", " << hi << ") nm leaves the window ("
            << kWindowLoNm << ", " << kWindowHiNm << ") nm";
        throw ValidationError(msg.str());
    }
    if (!(options.tolerance_nm > 0.0)) throw ValidationError("tolerance must be > 0");

    const auto f = [&](double nm) { return model.shift_coefficient(light.at_wavelength(nm), c); };

    if (options.scan) {
        const int n = std::max(options.scan_points, 2);
        std::vector<std::pair<double, double>> crossings;
        double x_prev = lo;
        double f_prev = f(lo);
        for (int i = 1; i <= n; ++i) {
            const double x = lo + (hi - lo) * i / n;
            const double fx = f(x);
            if ((f_prev < 0.0) != (fx < 0.0)) crossings.emplace_back(x_prev, x);
            x_prev = x;
            f_prev = fx;
        }
        if (crossings.size() > 1) {
            std::ostringstream msg;
            msg.precision(9);
            msg << crossings.size() << " sign changes in (" << lo << ", " << hi << ") nm:";
            for (const auto& [a, b] : crossings) msg << " [" << a << ", " << b << "]";
            throw MultipleRootsError(msg.str(), crossings);
        }
    }

    const double f_lo = f(lo);
    const double f_hi = f(hi);
    if (f_lo == 0.0 || f_hi == 0.0 || (f_lo < 0.0) == (f_hi < 0.0)) {
        std::ostringstream msg;
        msg.precision(9);
        msg << "no sign change of the light shift in (" << lo << ", " << hi << ") nm";
        throw ComputationError(msg.str());
    }

    std::uintmax_t iterations = static_cast<std::uintmax_t>(options.max_iterations);
    const double tol = options.tolerance_nm;
    const auto stop = [tol](double a, double b) { return std::abs(b - a) <= tol; };
    const auto [a, b] =
        boost::math::tools::toms748_solve(f, lo, hi, f_lo, f_hi, stop, iterations);
    if (!stop(a, b)) {
        std::ostringstream msg;
        msg << "tune-out search did not reach " << tol << " nm in " << options.max_iterations
            << " iterations (bracket " << std::setprecision(12) << a << " .. " << b << " nm)";
        throw NonConvergenceError(msg.str());
    }
    const double fa = f(a);
    const double fb = f(b);
    const double root = (fa == fb) ? 0.5 * (a + b) : a - fa * (b - a) / (fb - fa);

    TuneoutResult r;
    r.wavelength_nm = root;
    r.bracket_lo_nm = lo;
    r.bracket_hi_nm = hi;
    r.toggles = c;
    r.iterations = static_cast<int>(iterations);

    const double h = options.slope_step_nm;
    r.slope_au_per_pm = (f(root + h) - f(root - h)) / (2.0 * h) * 1e-3;
    if (light.intensity_W_m2 > 0.0) {
        const double vp = lattice_depth(model, light.at_wavelength(root + h), mass_kg, c);
        const double vm = lattice_depth(model, light.at_wavelength(root - h), mass_kg, c);
        r.slope_recoil_per_pm = (vp - vm) / (2.0 * h) * 1e-3;
    }
    return r;
}

TuneoutResult find_tuneout(const HyperfineState& state, const LightField& light,
                           const SpeciesData& data, const Contributions& c,
                           const TuneoutOptions& options) {
    return find_tuneout(PolarizabilityModel(state, data), light, data.mass_kg.value, c, options);
}

namespace {

// Cumulative configurations, then the residuals one at a time.
constexpr int kConfigs = 6;
Contributions ledger_config(int i) {
    Contributions c = Contributions::d_lines_only();
    switch (i) {
        case 0: break;
        case 1: c.tensor = true; break;
        case 2: c.tensor = c.higher_p = true; break;
        case 3: c = Contributions::all(); break;
        case 4: c.higher_p = true; break;
        case 5: c.core = true; break;
    }
    return c;
}

struct LedgerRoots {
    double root[kConfigs];

    double base() const { return root[0]; }
    double tensor() const { return root[1] - root[0]; }
    double higher_p() const { return root[2] - root[1]; }
    double core() const { return root[3] - root[2]; }
    double total() const { return root[3]; }
};

LedgerRoots ledger_roots(const HyperfineState& state, const LightField& geometry,
                         const SpeciesData& data, const TuneoutOptions& opt, int configs) {
    const PolarizabilityModel model(state, data);
    LedgerRoots r{};
    for (int i = 0; i < configs; ++i) {
        r.root[i] =
            find_tuneout(model, geometry, data.mass_kg.value, ledger_config(i), opt).wavelength_nm;
    }
    return r;
}

}  // namespace

ContributionLedger contribution_ledger(const HyperfineState& state, const LightField& geometry,
                                       const SpeciesData& data, const LedgerOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    ContributionLedger out;
    out.dataset = options.dataset.empty() ? data.name : options.dataset;
    out.mode = data.mode;
    out.propagation = options.propagation;

    LedgerRoots nominal{};
    parallel_for(kConfigs, options.jobs, [&](std::size_t i) {
        const int k = static_cast<int>(i);
        nominal.root[k] = find_tuneout(state, geometry, data, ledger_config(k), options.solver)
                              .wavelength_nm;
    });
    out.base_nm.value = nominal.base();
    out.tensor_shift_nm.value = nominal.tensor();
    out.higher_p_shift_nm.value = nominal.higher_p();
    out.core_shift_nm.value = nominal.core();
    out.total_nm.value = nominal.total();
    out.tensor_alone_nm = nominal.tensor();
    out.higher_p_alone_nm = nominal.root[4] - nominal.root[0];
    out.core_alone_nm = nominal.root[5] - nominal.root[0];

    TuneoutOptions quick = options.solver;
    quick.scan = false;

    if (options.propagation == Propagation::Sensitivity) {
        std::vector<std::pair<std::string, double>> names;
        data.for_each_datum([&](const std::string& name, const Datum& d) {
            if (d.uncertainty > 0.0) names.emplace_back(name, d.uncertainty);
        });
        out.sensitivities.resize(names.size());
        parallel_for(names.size(), options.jobs, [&](std::size_t i) {
            const auto up = ledger_roots(state, geometry, data.perturbed(names[i].first, +1.0),
                                         quick, 4);
            const auto dn = ledger_roots(state, geometry, data.perturbed(names[i].first, -1.0),
                                         quick, 4);
            LedgerSensitivity s;
            s.datum = names[i].first;
            s.base_nm = 0.5 * (up.base() - dn.base());
            s.tensor_nm = 0.5 * (up.tensor() - dn.tensor());
            s.higher_p_nm = 0.5 * (up.higher_p() - dn.higher_p());
            s.core_nm = 0.5 * (up.core() - dn.core());
            s.total_nm = 0.5 * (up.total() - dn.total());
            out.sensitivities[i] = s;
        });
        double sq[5] = {0, 0, 0, 0, 0};
        for (const auto& s : out.sensitivities) {
            sq[0] += s.base_nm * s.base_nm;
            sq[1] += s.tensor_nm * s.tensor_nm;
            sq[2] += s.higher_p_nm * s.higher_p_nm;
            sq[3] += s.core_nm * s.core_nm;
            sq[4] += s.total_nm * s.total_nm;
        }
        out.base_nm.sigma = std::sqrt(sq[0]);
        out.tensor_shift_nm.sigma = std::sqrt(sq[1]);
        out.higher_p_shift_nm.sigma = std::sqrt(sq[2]);
        out.core_shift_nm.sigma = std::sqrt(sq[3]);
        out.total_nm.sigma = std::sqrt(sq[4]);
    } else {
        if (options.samples < 2) throw ValidationError("Monte-Carlo propagation needs >= 2 samples");
        std::vector<std::pair<std::string, double>> names;
        data.for_each_datum([&](const std::string& name, const Datum& d) {
            if (d.uncertainty > 0.0) names.emplace_back(name, d.uncertainty);
        });
        // Draws are made up front so the result does not depend on the job count.
        std::mt19937_64 rng(options.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<std::vector<double>> z(static_cast<std::size_t>(options.samples),
                                           std::vector<double>(names.size()));
        for (auto& row : z) {
            for (auto& v : row) v = normal(rng);
        }
        std::vector<LedgerRoots> samples(z.size());
        parallel_for(z.size(), options.jobs, [&](std::size_t s) {
            SpeciesData d = data;
            for (std::size_t k = 0; k < names.size(); ++k) d = d.perturbed(names[k].first, z[s][k]);
            samples[s] = ledger_roots(state, geometry, d, quick, 4);
        });
        const auto stddev = [&](auto get) {
            double mean = 0.0;
            for (const auto& s : samples) mean += get(s);
            mean /= static_cast<double>(samples.size());
            double var = 0.0;
            for (const auto& s : samples) var += (get(s) - mean) * (get(s) - mean);
            return std::sqrt(var / static_cast<double>(samples.size() - 1));
        };
        out.base_nm.sigma = stddev([](const LedgerRoots& r) { return r.base(); });
        out.tensor_shift_nm.sigma = stddev([](const LedgerRoots& r) { return r.tensor(); });
        out.higher_p_shift_nm.sigma = stddev([](const LedgerRoots& r) { return r.higher_p(); });
        out.core_shift_nm.sigma = stddev([](const LedgerRoots& r) { return r.core(); });
        out.total_nm.sigma = stddev([](const LedgerRoots& r) { return r.total(); });
    }
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

LightField linear_lattice_geometry(double intensity_W_m2) {
    LightField l;
    l.intensity_W_m2 = intensity_W_m2;
    l.theta0_rad = 0.0;
    l.theta_k_rad = 0.0;
    l.theta_p_rad = constants::pi / 2.0;
    return l;
}

LinearModelResult linear_model(const std::vector<double>& grid_nm,
                               const std::vector<double>& depth_recoil) {
    if (grid_nm.size() != depth_recoil.size()) {
        throw ValidationError("linear model: grid and depth sizes differ");
    }
    if (grid_nm.size() < 3) throw ValidationError("linear model: need at least 3 grid points");
    bool negative = false;
    bool positive = false;
    for (double v : depth_recoil) {
        if (!std::isfinite(v)) throw ValidationError("linear model: non-finite depth");
        negative |= v < 0.0;
        positive |= v > 0.0;
    }
    if (!(negative && positive)) {
        throw ComputationError("linear model: grid does not bracket the tune-out wavelength");
    }

    const double n = static_cast<double>(grid_nm.size());
    double cx = 0.0;
    for (double x : grid_nm) cx += x;
    cx /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < grid_nm.size(); ++i) {
        const double dx = grid_nm[i] - cx;
        sxx += dx * dx;
        sxy += dx * depth_recoil[i];
        sy += depth_recoil[i];
    }
    if (!(sxx > 0.0)) throw ValidationError("linear model: degenerate wavelength grid");

    LinearModelResult r;
    r.grid_nm = grid_nm;
    r.depth_recoil = depth_recoil;
    r.center_nm = cx;
    r.slope_recoil_per_nm = sxy / sxx;
    r.intercept_recoil = sy / n;
    r.wavelength_nm = cx - r.intercept_recoil / r.slope_recoil_per_nm;
    double max_abs = 0.0;
    double max_dev = 0.0;
    for (std::size_t i = 0; i < grid_nm.size(); ++i) {
        const double line = r.intercept_recoil + r.slope_recoil_per_nm * (grid_nm[i] - cx);
        max_abs = std::max(max_abs, std::abs(depth_recoil[i]));
        max_dev = std::max(max_dev, std::abs(depth_recoil[i] - line));
    }
    r.max_deviation = max_dev / max_abs;
    return r;
}

LinearModelResult linear_model(const std::vector<double>& grid_nm, const HyperfineState& state,
                               const LightField& beam, const SpeciesData& data,
                               const Contributions& c) {
    if (!(beam.intensity_W_m2 > 0.0)) {
        throw ValidationError("linear model: beam intensity must be > 0");
    }
    const PolarizabilityModel model(state, data);
    std::vector<double> depth(grid_nm.size());
    for (std::size_t i = 0; i < grid_nm.size(); ++i) {
        depth[i] = lattice_depth(model, beam.at_wavelength(grid_nm[i]), data.mass_kg.value, c);
    }
    return linear_model(grid_nm, depth);
}

}  // namespace tuneout

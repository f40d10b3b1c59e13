#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/fit_models.hpp"
#include "tuneout/parallel.hpp"
#include "tuneout/tuneout_solver.hpp"

using namespace tuneout;

namespace {

const std::string kRb87 = TUNEOUT_DATA_DIR "/rb87.species";
constexpr double kLambdaM = 790.01858;

const SpeciesData& rb87() {
    static const SpeciesData d = load_species_data(kRb87);
    return d;
}

const FluctuatingPolarizationModel& pol_model() {
    static const FluctuatingPolarizationModel m(rb87(), kLambdaM);
    return m;
}

std::vector<double> grid(double lo, double hi, int n) {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

std::vector<double> scan_grid() { return grid(kLambdaM - 0.03, kLambdaM + 0.03, 25); }

// Monte-Carlo estimate of E|g|, g ~ Normal(gamma, (2 sigma)^2), and its standard error.
std::pair<double, double> mc_abs_mean(double gamma, double sigma, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(gamma, 2.0 * sigma);
    double s = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = std::abs(normal(rng));
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double var = (s2 / n - mean * mean) * n / (n - 1.0);
    return {mean, std::sqrt(var / n)};
}

PolarizationFit default_pol() {
    PolarizationFit p;
    p.A0 = -7.80e-3;
    p.sigma_A = 4.78e-3;
    p.slope_per_pm = 0.6;
    p.lambda_m_nm = kLambdaM;
    return p;
}

}  // namespace

TEST_CASE("least squares: linear model with exact data") {
    const std::vector<double> x = {0, 1, 2, 3, 4, 5};
    std::vector<double> y;
    for (double v : x) y.push_back(2.5 - 0.75 * v);
    const std::vector<double> s(x.size(), 0.1);
    const auto r = wls_curve_fit([](double t, const std::vector<double>& p) { return p[0] + p[1] * t; },
                                 x, y, s, {{"a", 0.0}, {"b", 1.0}});
    CHECK(r.converged);
    CHECK(r.value("a") == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(r.value("b") == doctest::Approx(-0.75).epsilon(1e-12));
    CHECK(r.chi2 < 1e-20);
    CHECK(r.dof == 4);
    // covariance of a straight-line fit: sigma^2 (X^T X)^-1
    const double n = 6, sx = 15, sxx = 55, det = n * sxx - sx * sx;
    CHECK(r.covariance(1, 1) == doctest::Approx(0.01 * n / det).epsilon(1e-6));
    CHECK(r.covariance(0, 0) == doctest::Approx(0.01 * sxx / det).epsilon(1e-6));
    CHECK(r.covariance(0, 1) == doctest::Approx(-0.01 * sx / det).epsilon(1e-6));
    CHECK(!r.log.empty());
}

TEST_CASE("least squares: quadratic with a known optimum") {
    const auto x = grid(-2.0, 3.0, 30);
    std::vector<double> y;
    for (double v : x) y.push_back(1.7 * (v - 0.4) * (v - 0.4) - 0.3);
    const std::vector<double> s(x.size(), 1.0);
    const auto r = wls_curve_fit(
        [](double t, const std::vector<double>& p) { return p[0] * (t - p[1]) * (t - p[1]) + p[2]; },
        x, y, s, {{"a", 1.0}, {"b", 0.0}, {"c", 0.0}});
    CHECK(std::abs(r.value("a") - 1.7) < 1e-8);
    CHECK(std::abs(r.value("b") - 0.4) < 1e-8);
    CHECK(std::abs(r.value("c") + 0.3) < 1e-8);
}

TEST_CASE("least squares: analytic Jacobian path") {
    const auto x = grid(0.0, 4.0, 40);
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 * std::exp(-0.7 * v));
    WlsProblem prob;
    prob.parameters = {{"A", 1.0}, {"k", 0.1}};
    prob.residual_count = x.size();
    prob.jacobian = [&](const std::vector<double>& p, std::vector<double>& r, Eigen::MatrixXd& J) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = std::exp(-p[1] * x[i]);
            r[i] = y[i] - p[0] * e;
            J(i, 0) = -e;
            J(i, 1) = p[0] * x[i] * e;
        }
    };
    const auto r = wls_fit(prob);
    CHECK(r.values[0] == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(r.values[1] == doctest::Approx(0.7).epsilon(1e-10));
}

TEST_CASE("least squares: bounds and fixed parameters") {
    const auto x = grid(0.0, 1.0, 10);
    std::vector<double> y;
    for (double v : x) y.push_back(1.0 + 2.0 * v);
    const std::vector<double> s(x.size(), 1.0);
    const auto f = [](double t, const std::vector<double>& p) { return p[0] + p[1] * t; };

    auto r = wls_curve_fit(f, x, y, s, {{"a", 0.0, -10.0, 10.0}, {"b", 0.5, 0.0, 1.5}});
    CHECK(r.value("b") == doctest::Approx(1.5));
    CHECK(r.at_bound[1]);
    CHECK(r.error("b") == 0.0);
    CHECK(r.error("a") > 0.0);

    r = wls_curve_fit(f, x, y, s, {{"a", 0.0}, {"b", 2.5, -1e9, 1e9, true}});
    CHECK(r.value("b") == 2.5);
    CHECK(r.value("a") == doctest::Approx(1.0 - 2.5 * 0.5 + 2.0 * 0.5).epsilon(1e-9));
}

TEST_CASE("least squares: failures are reported") {
    const auto x = grid(0.0, 1.0, 10);
    std::vector<double> y(x.size(), 1.0);
    const std::vector<double> s(x.size(), 1.0);

    // p0 and p1 only enter as a sum
    CHECK_THROWS_AS(wls_curve_fit([](double, const std::vector<double>& p) { return p[0] + p[1]; },
                                  x, y, s, {{"a", 0.0}, {"b", 0.0}}),
                    ComputationError);
    WlsOptions lenient;
    lenient.allow_rank_deficient = true;
    const auto r = wls_curve_fit([](double, const std::vector<double>& p) { return p[0] + p[1]; },
                                 x, y, s, {{"a", 0.0}, {"b", 0.0}}, lenient);
    CHECK(r.rank == 1);
    CHECK(r.values[0] + r.values[1] == doctest::Approx(1.0));

    CHECK_THROWS_AS(wls_curve_fit([](double, const std::vector<double>&) { return NAN; }, x, y, s,
                                  {{"a", 0.0}}),
                    ValidationError);
    CHECK_THROWS_AS(wls_curve_fit([](double t, const std::vector<double>& p) { return p[0] * t; },
                                  x, y, s, {{"a", 5.0, 0.0, 1.0}}),
                    ValidationError);

    WlsOptions capped;
    capped.max_iterations = 1;
    std::vector<double> yy;
    for (double v : x) yy.push_back(std::sin(3.0 * v) + 2.0);
    CHECK_THROWS_AS(
        wls_curve_fit([](double t, const std::vector<double>& p) { return std::sin(p[0] * t) + p[1]; },
                      x, yy, s, {{"w", 1.0}, {"c", 0.0}}, capped),
        NonConvergenceError);
}

TEST_CASE("fluctuating polarisation potential: limits") {
    for (double g : {-3.0, -0.1, 0.0, 0.4, 7.0}) {
        CHECK(fluctuating_pol_potential(g, 0.0, 2.0) == 2.0 * std::abs(g));
        // a tiny spread approaches the same limit
        CHECK(fluctuating_pol_potential(g, 1e-9, 2.0) ==
              doctest::Approx(2.0 * std::abs(g) + (g == 0.0 ? 2.0 * std::sqrt(8.0 / constants::pi) * 1e-9 : 0.0))
                  .epsilon(1e-9));
    }
    for (double s : {0.01, 1.0, 30.0}) {
        CHECK(fluctuating_pol_potential(0.0, s, 3.0) ==
              doctest::Approx(3.0 * std::sqrt(8.0 / constants::pi) * s).epsilon(1e-14));
    }
    CHECK(fluctuating_pol_potential(1.3, 0.2) == fluctuating_pol_potential(-1.3, 0.2));
    CHECK_THROWS_AS(fluctuating_pol_potential(1.0, -0.1), ValidationError);
}

TEST_CASE("fluctuating polarisation potential against Monte Carlo") {
    const std::vector<double> sigmas = {0.05, 0.3, 1.0, 2.0, 5.0};
    const std::vector<double> ratios = {-5.0, -1.5, 0.0, 0.8, 5.0};
    std::vector<double> z(sigmas.size() * ratios.size());
    std::vector<double> se(z.size());
    std::vector<double> closed(z.size());
    parallel_for(z.size(), 2, [&](std::size_t k) {
        const double s = sigmas[k / ratios.size()];
        const double g = ratios[k % ratios.size()] * s;
        const auto [mean, err] = mc_abs_mean(g, s, 1'000'000, 1000 + k);
        closed[k] = fluctuating_pol_potential(g, s);
        z[k] = (mean - closed[k]) / err;
        se[k] = err;
    });
    for (std::size_t k = 0; k < z.size(); ++k) {
        CAPTURE(k);
        CHECK(std::abs(z[k]) < 3.0);
    }
}

TEST_CASE("vector convention factor") {
    CHECK(vector_factor(VectorConvention::HalfF, 1, 1) == 0.5);
    CHECK(vector_factor(VectorConvention::F, 1, 1) == 1.0);
    CHECK(vector_factor(VectorConvention::F, -1, 1) == -1.0);
    CHECK(vector_factor(VectorConvention::HalfF, 0, 1) == 0.0);
    CHECK(std::string(to_string(VectorConvention::F)) == "m/F");
}

TEST_CASE("gamma reproduces the full Stark bracket") {
    const auto& m = pol_model();
    const double shift = m.lambda_m_nm() - m.theory_root_nm();
    for (int mf : {-1, 0, 1}) {
        HyperfineState s;
        s.m_F = mf;
        const PolarizabilityModel full(s, rb87());
        for (double A : {-0.3, -7.8e-3, 0.0, 0.2}) {
            LightField l = linear_lattice_geometry();
            l.theta0_rad = 0.5 * std::asin(A);
            l.theta_p_rad = constants::pi / 2;
            for (double nm : {789.99, 790.0186, 790.05}) {
                const double ref = full.shift_coefficient(l.at_wavelength(nm - shift), Contributions::all());
                CHECK(m.gamma(nm, mf, A) == doctest::Approx(ref).epsilon(1e-12));
            }
        }
    }
    CHECK(std::abs(m.alpha_st(m.lambda_m_nm(), 0)) < 1e-6);
    CHECK(m.dalpha_per_pm() < 0.0);
}

TEST_CASE("model parity under m_F and A0 flip") {
    const auto& m = pol_model();
    for (double nm : grid(789.98, 790.06, 17)) {
        for (double A0 : {-0.02, -7.8e-3, 0.004}) {
            CHECK(std::abs(m.depth(nm, 1, 0.6, A0, 4.78e-3) - m.depth(nm, -1, 0.6, -A0, 4.78e-3)) <
                  1e-12 * std::max(1.0, m.depth(nm, 1, 0.6, A0, 4.78e-3)));
        }
    }
}

TEST_CASE("branch minima sit on opposite sides for negative A0") {
    const auto& m = pol_model();
    const double lo = m.branch_minimum_nm(-1, -7.8e-3);
    const double hi = m.branch_minimum_nm(1, -7.8e-3);
    CHECK(lo < kLambdaM);
    CHECK(hi > kLambdaM);
    CHECK(hi - lo > 0.02);
    CHECK(std::abs(m.gamma(lo, -1, -7.8e-3)) < 1e-8);
}

TEST_CASE("polarisation fit round trip at the measured parameters") {
    const auto& m = pol_model();
    const PolarizationTruth truth;
    const auto data = synthesize_polarization_scan(m, truth, scan_grid(), {}, 42);
    const auto fit = fit_polarization(data, m);
    CHECK(std::abs(fit.A0 - truth.A0) < 3.0 * fit.A0_sigma);
    CHECK(std::abs(fit.sigma_A - truth.sigma_A) < 3.0 * fit.sigma_A_sigma);
    CHECK(std::abs(fit.slope_per_pm - truth.slope_per_pm) < 3.0 * fit.slope_sigma);
    CHECK(fit.A0_sigma > 0.0);
    CHECK(fit.dof == static_cast<int>(data.size()) - 3);
    CHECK(fit.chi2 / fit.dof < 2.0);
    CHECK(fit.lambda_m_nm == kLambdaM);
    CHECK(fit.covariance.rows() == 3);
}

TEST_CASE("polarisation fit with a free lambda_M prior") {
    const auto& m = pol_model();
    const auto data = synthesize_polarization_scan(m, {}, scan_grid(), {}, 43);
    PolarizationFitOptions opt;
    opt.lambda_m_free = true;
    opt.lambda_m_sigma_nm = 0.23e-3;
    const auto fit = fit_polarization(data, m, opt);
    CHECK(fit.lambda_m_free);
    CHECK(fit.lambda_m_sigma > 0.0);
    CHECK(fit.lambda_m_sigma <= 0.23e-3 * 1.0001);
    CHECK(std::abs(fit.lambda_m_nm - kLambdaM) < 3.0 * fit.lambda_m_sigma);
    CHECK(fit.covariance.rows() == 4);
}

TEST_CASE("polarisation fit without fluctuations") {
    const auto& m = pol_model();
    PolarizationTruth truth;
    truth.sigma_A = 0.0;
    const auto data = synthesize_polarization_scan(m, truth, scan_grid(), {}, 44);
    const auto fit = fit_polarization(data, m);
    CHECK((fit.sigma_A_at_bound || fit.sigma_A < 3.0 * fit.sigma_A_sigma));
    CHECK(std::abs(fit.A0 - truth.A0) < 3.0 * std::max(fit.A0_sigma, 1e-5));
}

TEST_CASE("polarisation fit input checks") {
    const auto& m = pol_model();
    auto data = synthesize_polarization_scan(m, {}, scan_grid(), {}, 45);
    std::vector<ScanPoint> plus_only;
    for (const auto& p : data) {
        if (p.m_F == 1) plus_only.push_back(p);
    }
    CHECK_THROWS_AS(fit_polarization(plus_only, m), ValidationError);
    data[0].sigma = 0.0;
    CHECK_THROWS_AS(fit_polarization(data, m), ValidationError);
    PolarizationFitOptions opt;
    opt.lambda_m_free = true;
    CHECK_THROWS_AS(fit_polarization(plus_only, m, opt), ValidationError);
}

TEST_CASE("the other vector convention halves A0") {
    const FluctuatingPolarizationModel mf(rb87(), kLambdaM, VectorConvention::F);
    const auto& mh = pol_model();
    const auto data = synthesize_polarization_scan(mh, {}, scan_grid(), {}, 46);
    const auto fh = fit_polarization(data, mh);
    const auto ff = fit_polarization(data, mf);
    CHECK(ff.A0 == doctest::Approx(0.5 * fh.A0).epsilon(1e-4));
    CHECK(ff.sigma_A == doctest::Approx(0.5 * fh.sigma_A).epsilon(1e-3));
    CHECK(ff.convention == VectorConvention::F);
}

TEST_CASE("magnetic projection") {
    MagneticEnvironment env;
    env.background = {0.28, 0.11, -0.39};
    CHECK(cos_theta_k(env) ==
          doctest::Approx(-0.39 / std::sqrt(0.28 * 0.28 + 0.11 * 0.11 + 0.39 * 0.39)).epsilon(1e-15));
    env.applied = {0.0, 0.0, 0.39};
    CHECK(cos_theta_k(env) == 0.0);
    env.background = {0, 0, 0};
    env.applied = {0, 0, 2.5};
    CHECK(cos_theta_k(env) == 1.0);
    env.applied = {0, 0, 0};
    CHECK_THROWS_AS(cos_theta_k(env), ComputationError);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        MagneticEnvironment e;
        e.background = {u(rng), u(rng), u(rng)};
        e.applied = {u(rng), u(rng), u(rng)};
        const double c = cos_theta_k(e);
        CHECK(std::abs(c) <= 1.0);
        const auto t = e.total();
        CHECK(t[0] == e.background[0] + e.applied[0]);
        MagneticEnvironment scaled;
        const double k = 0.1 + std::abs(u(rng));
        scaled.applied = {k * t[0], k * t[1], k * t[2]};
        CHECK(cos_theta_k(scaled) == doctest::Approx(c).epsilon(1e-13));
    }
}

TEST_CASE("background field round trip, sequential and global") {
    const VectorShiftModel vm(pol_model(), default_pol());
    const Vec3d truth = {0.28, 0.11, -0.39};
    FieldScans scans;
    scans.z = synthesize_field_scan(2, grid(-0.65, 1.35, 21), truth, vm, {}, 1);
    scans.x = synthesize_field_scan(0, grid(-1.3, 0.8, 21), truth, vm, {}, 2);
    scans.y = synthesize_field_scan(1, grid(-1.1, 0.9, 21), truth, vm, {}, 3);

    const auto seq = fit_background_field(scans, vm);
    for (int i = 0; i < 3; ++i) {
        CAPTURE(i);
        CHECK(seq.sigma[i] > 0.0);
        CHECK(std::abs(seq.B0[i] - truth[i]) < 3.0 * seq.sigma[i]);
    }
    CHECK(seq.y_sign_ambiguous);
    REQUIRE(seq.y_validation_chi2.has_value());
    CHECK(*seq.y_validation_chi2 / seq.dof_y < 2.0);
    CHECK(*seq.y_validation_chi2_flipped > *seq.y_validation_chi2);
    CHECK(seq.transverse_from_z ==
          doctest::Approx(std::hypot(truth[0], truth[1])).epsilon(3.0 * seq.transverse_from_z_sigma / 0.3));

    const auto glob = fit_background_field(scans, vm, FieldFitMode::Global);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(glob.B0[i] - truth[i]) < 3.0 * glob.sigma[i]);
    CHECK(glob.mode == FieldFitMode::Global);
}

TEST_CASE("z-scan minimum and x-scan maximum mark the background components") {
    const VectorShiftModel vm(pol_model(), default_pol());
    const Vec3d b0 = {0.28, 0.11, -0.39};
    MagneticEnvironment env;
    env.background = b0;
    double best = 1e9, at = 0.0;
    for (double bz = -1.0; bz <= 1.0; bz += 1e-4) {
        env.applied = {0.0, 0.0, bz};
        if (vm.depth(env) < best) {
            best = vm.depth(env);
            at = bz;
        }
    }
    // the tensor offset moves the minimum by well under the fit error of B0z
    CHECK(std::abs(at - 0.39) < 0.003);
    double top = -1.0;
    for (double bx = -1.0; bx <= 1.0; bx += 1e-4) {
        env.applied = {bx, 0.0, 0.0};
        if (vm.depth(env) > top) {
            top = vm.depth(env);
            at = bx;
        }
    }
    CHECK(at == doctest::Approx(-0.28).epsilon(1e-3));
}

TEST_CASE("flat field scans are rejected") {
    const VectorShiftModel vm(pol_model(), default_pol());
    FieldScans scans;
    for (double b : grid(-1, 1, 11)) scans.z.push_back({b, 5.0, 1.0, 1, 1});
    scans.x = scans.z;
    CHECK_THROWS_AS(fit_background_field(scans, vm), ComputationError);
    scans.z.resize(2);
    CHECK_THROWS_AS(fit_background_field(scans, vm), ValidationError);
    CHECK_THROWS_AS(VectorShiftModel(pol_model(), default_pol(), 0), ValidationError);
}

TEST_CASE("polarisation fit pulls are calibrated") {
    const auto& m = pol_model();
    const PolarizationTruth truth;
    const int n = 500;
    std::vector<double> pa(n), ps(n);
    parallel_for(n, 2, [&](std::size_t k) {
        const auto data = synthesize_polarization_scan(m, truth, scan_grid(), {}, 5000 + k);
        const auto fit = fit_polarization(data, m);
        pa[k] = (fit.A0 - truth.A0) / fit.A0_sigma;
        ps[k] = (fit.sigma_A - truth.sigma_A) / fit.sigma_A_sigma;
    });
    for (const auto* pulls : {&pa, &ps}) {
        double mean = 0.0;
        for (double v : *pulls) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : *pulls) var += (v - mean) * (v - mean);
        const double width = std::sqrt(var / (n - 1));
        CAPTURE(mean);
        CAPTURE(width);
        CHECK(std::abs(mean) < 0.1);
        CHECK(width >= 0.8);
        CHECK(width <= 1.2);
    }
}

TEST_CASE("background field coverage over seeds") {
    const VectorShiftModel vm(pol_model(), default_pol());
    const Vec3d truth = {0.28, 0.11, -0.39};
    const int n = 60;
    std::vector<int> inside(n, 0);
    parallel_for(n, 2, [&](std::size_t k) {
        FieldScans scans;
        scans.z = synthesize_field_scan(2, grid(-0.65, 1.35, 21), truth, vm, {}, 100 + 2 * k);
        scans.x = synthesize_field_scan(0, grid(-1.3, 0.8, 21), truth, vm, {}, 101 + 2 * k);
        const auto fit = fit_background_field(scans, vm);
        int ok = 1;
        for (int i = 0; i < 3; ++i) ok &= std::abs(fit.B0[i] - truth[i]) < 3.0 * fit.sigma[i];
        inside[k] = ok;
    });
    int total = 0;
    for (int v : inside) total += v;
    CHECK(total >= n - 3);
}

TEST_CASE("tune-out line fit recovers a noiseless V") {
    std::vector<ScanPoint> pts;
    for (double nm : grid(790.000, 790.040, 17)) {
        ScanPoint p;
        p.control = nm;
        p.value = 0.45 * std::abs(nm - 790.01858) * 1e3;
        p.sigma = 0.1;
        pts.push_back(p);
    }
    const auto f = fit_tuneout_line(pts);
    CHECK(f.lambda_m_nm == doctest::Approx(790.01858).epsilon(1e-13));
    CHECK(f.slope_per_pm == doctest::Approx(0.45).epsilon(1e-9));
    CHECK(f.chi2 < 1e-16);
    CHECK(f.dof == 15);
    CHECK(f.lambda_m_sigma_nm > 0.0);

    CHECK_THROWS_AS(fit_tuneout_line({pts[0], pts[1]}), ValidationError);
    auto flat = pts;
    for (auto& p : flat) p.value = 0.0;
    CHECK_THROWS_AS(fit_tuneout_line(flat), ComputationError);
    auto one_side = pts;
    for (auto& p : one_side) p.value = 0.45 * (p.control - 789.99) * 1e3;
    CHECK_THROWS_WITH_AS(fit_tuneout_line(one_side), doctest::Contains("not bracketed"), ComputationError);
}

TEST_CASE("tune-out line pulls are calibrated") {
    const double truth = 790.01858;
    const auto g = grid(truth - 0.02, truth + 0.02, 20);
    const int replicas = 400;
    std::vector<double> pulls(replicas);
    std::vector<double> slope_pulls(replicas);
    parallel_for(replicas, 2, [&](std::size_t r) {
        std::mt19937_64 rng(900 + r);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<ScanPoint> pts;
        for (double nm : g) {
            for (int s = 0; s < 5; ++s) {
                ScanPoint p;
                p.control = nm;
                const double v = 0.5 * std::abs(nm - truth) * 1e3;
                p.sigma = 0.1 + 0.01 * v;
                p.value = v + p.sigma * normal(rng);
                pts.push_back(p);
            }
        }
        const auto f = fit_tuneout_line(pts);
        pulls[r] = (f.lambda_m_nm - truth) / f.lambda_m_sigma_nm;
        slope_pulls[r] = (f.slope_per_pm - 0.5) / f.slope_sigma;
    });
    for (const auto* v : {&pulls, &slope_pulls}) {
        double m = 0.0;
        double q = 0.0;
        for (double p : *v) {
            m += p;
            q += p * p;
        }
        m /= replicas;
        const double sd = std::sqrt(q / replicas - m * m);
        CHECK(std::abs(m) < 0.15);
        CHECK(sd > 0.85);
        CHECK(sd < 1.15);
    }
}

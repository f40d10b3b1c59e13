#include "tuneout/fit_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/tuneout_solver.hpp"

namespace tuneout {

double fluctuating_pol_potential(double gamma, double sigma, double prefactor) {
    if (!(sigma >= 0.0)) throw ValidationError("polarisation spread must be >= 0");
    if (sigma == 0.0) return prefactor * std::abs(gamma);
    const double w = std::sqrt(8.0 * sigma * sigma);
    return prefactor * (w / std::sqrt(constants::pi) * std::exp(-gamma * gamma / (w * w)) +
                        gamma * std::erf(gamma / w));
}

double vector_factor(VectorConvention c, int m_F, HalfInt F) {
    const double f = F.value();
    if (!(f > 0.0)) return 0.0;
    return c == VectorConvention::HalfF ? m_F / (2.0 * f) : m_F / f;
}

const char* to_string(VectorConvention c) {
    return c == VectorConvention::HalfF ? "m/(2F)" : "m/F";
}

void ScanPoint::validate() const {
    if (!std::isfinite(control) || !std::isfinite(value)) {
        throw ValidationError("scan point: non-finite control or value");
    }
    if (!(sigma > 0.0)) throw ValidationError("scan point: uncertainty must be > 0");
    if (shots < 1) throw ValidationError("scan point: shot count must be >= 1");
}

TuneoutLineFit fit_tuneout_line(const std::vector<ScanPoint>& points, const WlsOptions& solver) {
    if (points.size() < 3) throw ValidationError("tune-out line fit needs at least 3 points");
    for (const auto& p : points) p.validate();
    double lo = points.front().control;
    double hi = lo;
    for (const auto& p : points) {
        lo = std::min(lo, p.control);
        hi = std::max(hi, p.control);
    }
    if (!(hi > lo)) throw ValidationError("tune-out line fit needs more than one wavelength");
    // Offsets in pm from the scan centre keep both parameters of order one.
    const double centre = 0.5 * (lo + hi);
    std::vector<double> u;
    for (const auto& p : points) u.push_back((p.control - centre) * 1e3);

    const auto profile = [&](double um) {
        double swy = 0.0;
        double sww = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double d = std::abs(u[i] - um);
            const double w = 1.0 / (points[i].sigma * points[i].sigma);
            swy += w * d * points[i].value;
            sww += w * d * d;
        }
        const double slope = sww > 0.0 ? std::max(swy / sww, 0.0) : 0.0;
        double chi2 = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double r = (points[i].value - slope * std::abs(u[i] - um)) / points[i].sigma;
            chi2 += r * r;
        }
        return std::pair{chi2, slope};
    };
    std::vector<double> starts = u;
    std::sort(starts.begin(), starts.end());
    starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
    const double u_lo = starts.front();
    const double u_hi = starts.back();
    const std::size_t distinct = starts.size();
    for (std::size_t i = 0; i + 1 < distinct; ++i) starts.push_back(0.5 * (starts[i] + starts[i + 1]));
    double best_u = starts.front();
    double best_chi2 = std::numeric_limits<double>::infinity();
    for (double c : starts) {
        const double chi2 = profile(c).first;
        if (chi2 < best_chi2) {
            best_chi2 = chi2;
            best_u = c;
        }
    }
    const double slope0 = profile(best_u).second;
    if (!(slope0 > 0.0)) throw ComputationError("tune-out line fit: depths show no slope");

    WlsProblem prob;
    const double span = (hi - lo) * 1e3;
    prob.parameters = {{"lambda_m_pm", best_u, -2.0 * span, 2.0 * span, false, 1.0},
                       {"slope", slope0, 0.0, std::numeric_limits<double>::infinity(), false, slope0}};
    prob.residual_count = points.size();
    prob.jacobian = [&](const std::vector<double>& p, std::vector<double>& r, Eigen::MatrixXd& J) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double d = u[i] - p[0];
            const double sg = points[i].sigma;
            r[i] = (points[i].value - p[1] * std::abs(d)) / sg;
            const auto row = static_cast<Eigen::Index>(i);
            J(row, 0) = p[1] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / sg;
            J(row, 1) = -std::abs(d) / sg;
        }
    };
    prob.residuals = [&](const std::vector<double>& p, std::vector<double>& r) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            r[i] = (points[i].value - p[1] * std::abs(u[i] - p[0])) / points[i].sigma;
        }
    };
    const auto fit = wls_fit(prob, solver);

    if (!(fit.values[0] > u_lo && fit.values[0] < u_hi)) {
        std::ostringstream msg;
        msg << "tune-out line fit: the zero at " << centre + fit.values[0] * 1e-3
            << " nm is not bracketed by the scan " << lo << " .. " << hi << " nm";
        throw ComputationError(msg.str());
    }

    TuneoutLineFit out;
    out.lambda_m_nm = centre + fit.values[0] * 1e-3;
    out.slope_per_pm = fit.values[1];
    out.covariance(0, 0) = fit.covariance(0, 0) * 1e-6;
    out.covariance(0, 1) = out.covariance(1, 0) = fit.covariance(0, 1) * 1e-3;
    out.covariance(1, 1) = fit.covariance(1, 1);
    out.lambda_m_sigma_nm = std::sqrt(out.covariance(0, 0));
    out.slope_sigma = std::sqrt(out.covariance(1, 1));
    out.chi2 = fit.chi2;
    out.dof = fit.dof;
    out.points = static_cast<int>(points.size());
    return out;
}

namespace {

HyperfineState f1(int m) {
    HyperfineState s;
    s.F = 1;
    s.m_F = m;
    return s;
}

}  // namespace

FluctuatingPolarizationModel::FluctuatingPolarizationModel(const SpeciesData& data,
                                                           double lambda_m_nm,
                                                           VectorConvention convention)
    : F_(1), lambda_m_nm_(lambda_m_nm), convention_(convention) {
    if (!(lambda_m_nm > kWindowLoNm && lambda_m_nm < kWindowHiNm)) {
        throw ValidationError("lambda_M must lie between the D lines");
    }
    for (int m = -1; m <= 1; ++m) model_.emplace_back(f1(m), data);
    const auto root = find_tuneout(model_[1], linear_lattice_geometry(), data.mass_kg.value,
                                   Contributions::all());
    theory_root_nm_ = root.wavelength_nm;
    shift_nm_ = lambda_m_nm_ - theory_root_nm_;
    dalpha_per_pm_ = root.slope_au_per_pm;
}

double FluctuatingPolarizationModel::alpha_st(double nm, int m) const {
    if (m < -1 || m > 1) throw ValidationError("F = 1 sublevel must be -1, 0 or +1");
    Contributions c = Contributions::all();
    c.vector = false;
    return model_[static_cast<std::size_t>(m + 1)].shift_coefficient(
        linear_lattice_geometry().at_wavelength(nm - shift_nm_), c);
}

double FluctuatingPolarizationModel::alpha_v(double nm) const {
    return model_[1].d_lines(nm - shift_nm_).vector;
}

double FluctuatingPolarizationModel::gamma(double nm, int m, double A0, double cos_theta_k) const {
    return alpha_st(nm, m) + A0 * cos_theta_k * vector_factor(convention_, m, F_) * alpha_v(nm);
}

double FluctuatingPolarizationModel::depth(double nm, int m, double slope_per_pm, double A0,
                                           double sigma_A, double cos_theta_k) const {
    // V0 = -(E0^2/4) alpha, so the E_r per a.u. prefactor follows from the slope.
    const double prefactor = -slope_per_pm / dalpha_per_pm_;
    const double kv = vector_factor(convention_, m, F_) * alpha_v(nm) * cos_theta_k;
    // The spread parameter is half the standard deviation of gamma.
    const double spread = 0.5 * std::abs(sigma_A * kv);
    return fluctuating_pol_potential(alpha_st(nm, m) + A0 * kv, spread, prefactor);
}

double FluctuatingPolarizationModel::branch_minimum_nm(int m, double A0) const {
    double x = lambda_m_nm_;
    for (int i = 0; i < 50; ++i) {
        const double h = 1e-5;
        const double g = gamma(x, m, A0);
        const double dg = (gamma(x + h, m, A0) - gamma(x - h, m, A0)) / (2.0 * h);
        const double step = g / dg;
        x -= step;
        if (std::abs(step) < 1e-12) break;
    }
    return x;
}

PolarizationFit fit_polarization(const std::vector<ScanPoint>& points,
                                 const FluctuatingPolarizationModel& model,
                                 const PolarizationFitOptions& options) {
    bool plus = false;
    bool minus = false;
    for (const auto& p : points) {
        p.validate();
        if (p.m_F == 1) plus = true;
        else if (p.m_F == -1) minus = true;
        else throw ValidationError("polarisation fit takes m_F = +1 and -1 points only");
    }
    if (!plus || !minus) {
        throw ValidationError("polarisation fit needs both m_F = +1 and m_F = -1 branches");
    }
    if (options.lambda_m_free && !(options.lambda_m_sigma_nm > 0.0)) {
        throw ValidationError("a free lambda_M needs its uncertainty as a prior width");
    }

    // Start: A0 from the separation of the two branch minima, slope from the
    // largest lever arm, sigma_A from the floor of the curves.
    const auto lowest = [&](int m) {
        const ScanPoint* best = nullptr;
        for (const auto& p : points) {
            if (p.m_F == m && (!best || p.value < best->value)) best = &p;
        }
        return *best;
    };
    const double sep_nm = lowest(1).control - lowest(-1).control;
    const double kv1 = vector_factor(model.convention(), 1, 1) * model.alpha_v(model.lambda_m_nm());
    // gamma = 0 at lambda - lambda_M = -A0 k alpha_v / alpha'
    const double dalpha_nm = model.dalpha_per_pm() * 1e3;
    double a0_start = -0.5 * sep_nm * dalpha_nm / kv1;
    a0_start = std::clamp(a0_start, -0.5, 0.5);
    double slope_start = 0.0;
    for (const auto& p : points) {
        const double dx = std::abs(p.control - model.branch_minimum_nm(p.m_F, a0_start)) * 1e3;
        if (dx > 1.0) slope_start = std::max(slope_start, p.value / dx);
    }
    if (!(slope_start > 0.0)) slope_start = 1.0;
    const double floor = 0.5 * (lowest(1).value + lowest(-1).value);
    // floor ~ P sqrt(2/pi) sigma_A |k alpha_v| with P = slope / |alpha'|
    double sa_start =
        std::max(floor, 0.0) / (slope_start / std::abs(model.dalpha_per_pm())) /
        std::sqrt(2.0 / constants::pi) / std::abs(kv1);
    sa_start = std::clamp(sa_start, 1e-5, 0.5);

    const std::size_t np = points.size() + (options.lambda_m_free ? 1 : 0);
    std::vector<FitParameter> params = {
        {"A0", a0_start, -1.0, 1.0, false, 1e-3},
        {"sigma_A", sa_start, 0.0, 1.0, false, 1e-3},
        {"slope", slope_start, 1e-12, std::numeric_limits<double>::infinity(), false, 0.0},
        {"lambda_m", model.lambda_m_nm(), model.lambda_m_nm() - 1.0, model.lambda_m_nm() + 1.0,
         !options.lambda_m_free, 1e-4},
    };

    const auto run = [&](const std::vector<FitParameter>& ps) {
        WlsProblem prob;
        prob.parameters = ps;
        prob.residual_count = np;
        prob.residuals = [&](const std::vector<double>& p, std::vector<double>& r) {
            const double shift = p[3] - model.lambda_m_nm();
            for (std::size_t i = 0; i < points.size(); ++i) {
                const auto& pt = points[i];
                const double v = model.depth(pt.control - shift, pt.m_F, p[2], p[0], p[1]);
                r[i] = (pt.value - v) / pt.sigma;
            }
            if (options.lambda_m_free) {
                r[points.size()] = (p[3] - model.lambda_m_nm()) / options.lambda_m_sigma_nm;
            }
        };
        return wls_fit(prob, options.solver);
    };

    // A second start from the other side of sigma_A guards against the flat
    // direction near sigma_A = 0.
    WlsResult best;
    bool have = false;
    std::string last_error;
    for (double sa : {sa_start, std::max(4.0 * sa_start, 5e-3)}) {
        params[1].initial = sa;
        try {
            const auto r = run(params);
            if (!have || r.chi2 < best.chi2) {
                best = r;
                have = true;
            }
        } catch (const ComputationError& e) {
            last_error = e.what();
        }
    }
    if (!have) throw NonConvergenceError("polarisation fit failed: " + last_error);

    PolarizationFit out;
    out.A0 = best.values[0];
    out.sigma_A = best.values[1];
    out.slope_per_pm = best.values[2];
    out.lambda_m_nm = best.values[3];
    out.lambda_m_free = options.lambda_m_free;
    out.convention = model.convention();
    const Eigen::Index k = options.lambda_m_free ? 4 : 3;
    out.covariance = best.covariance.topLeftCorner(k, k);
    out.A0_sigma = best.sigma[0];
    out.sigma_A_sigma = best.sigma[1];
    out.slope_sigma = best.sigma[2];
    out.lambda_m_sigma = options.lambda_m_free ? best.sigma[3] : 0.0;
    out.chi2 = best.chi2;
    out.dof = best.dof;
    out.sigma_A_at_bound = best.at_bound[1];
    out.iterations = best.iterations;
    return out;
}

std::vector<ScanPoint> synthesize_polarization_scan(const FluctuatingPolarizationModel& model,
                                                    const PolarizationTruth& truth,
                                                    const std::vector<double>& grid_nm,
                                                    const ScanNoise& noise, std::uint64_t seed) {
    if (!(noise.relative >= 0.0) || !(noise.floor > 0.0)) {
        throw ValidationError("scan noise needs relative >= 0 and floor > 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<ScanPoint> out;
    for (int m : {-1, 1}) {
        for (double nm : grid_nm) {
            ScanPoint p;
            p.control = nm;
            p.m_F = m;
            const double v = model.depth(nm, m, truth.slope_per_pm, truth.A0, truth.sigma_A);
            p.sigma = noise.relative * v + noise.floor;
            p.value = v + p.sigma * normal(rng);
            out.push_back(p);
        }
    }
    return out;
}

Vec3d MagneticEnvironment::total() const {
    return {background[0] + applied[0], background[1] + applied[1], background[2] + applied[2]};
}

double cos_theta_k(const MagneticEnvironment& env) {
    const auto b = env.total();
    for (double v : b) {
        if (!std::isfinite(v)) throw ValidationError("magnetic field must be finite");
    }
    const double norm = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    if (!(norm > 0.0)) {
        throw ComputationError("total magnetic field vanishes; the projection is undefined");
    }
    return std::clamp(b[2] / norm, -1.0, 1.0);
}

VectorShiftModel::VectorShiftModel(const FluctuatingPolarizationModel& model,
                                   const PolarizationFit& pol, int m_F)
    : model_(model), pol_(pol), m_F_(m_F) {
    if (m_F != 1 && m_F != -1) throw ValidationError("vector shift model needs m_F = +-1");
}

double VectorShiftModel::depth(double cos_theta) const {
    return model_.depth(model_.lambda_m_nm(), m_F_, pol_.slope_per_pm, pol_.A0, pol_.sigma_A,
                        cos_theta);
}

namespace {

double field_depth(const VectorShiftModel& model, int axis, double applied, const Vec3d& b0) {
    MagneticEnvironment env;
    env.background = b0;
    env.applied[static_cast<std::size_t>(axis)] = applied;
    return model.depth(env);
}

void check_scan(const std::vector<ScanPoint>& scan, const char* name) {
    if (scan.size() < 3) {
        throw ValidationError(std::string("background-field fit needs a ") + name +
                              " scan with at least 3 points");
    }
    double lo = scan.front().value;
    double hi = lo;
    double noise = 0.0;
    for (const auto& p : scan) {
        p.validate();
        lo = std::min(lo, p.value);
        hi = std::max(hi, p.value);
        noise = std::max(noise, p.sigma);
    }
    if (hi - lo <= noise) {
        throw ComputationError(std::string("the ") + name +
                               " scan is flat within its uncertainties; the field is not "
                               "identifiable from it");
    }
}

double scan_chi2(const VectorShiftModel& model, int axis, const std::vector<ScanPoint>& scan,
                 const Vec3d& b0) {
    double c = 0.0;
    for (const auto& p : scan) {
        const double r = (p.value - field_depth(model, axis, p.control, b0)) / p.sigma;
        c += r * r;
    }
    return c;
}

// Starting value for the component along `axis`: the applied field at the
// extremum of the scan, sign flipped.
double extremum_start(const std::vector<ScanPoint>& scan, bool minimum) {
    const ScanPoint* best = &scan.front();
    for (const auto& p : scan) {
        if (minimum ? p.value < best->value : p.value > best->value) best = &p;
    }
    return -best->control;
}

// Lower and upper distances to the Delta chi2 = 1 profile interval of
// parameter j. A bound that is hit before the interval closes ends that side.
std::pair<double, double> profile_interval(const WlsProblem& problem, const WlsResult& best, std::size_t j,
                         WlsOptions solver) {
    solver.allow_rank_deficient = true;
    solver.throw_on_failure = false;
    const auto& fp = problem.parameters[j];
    const auto chi2_at = [&](double v) {
        WlsProblem q = problem;
        for (std::size_t k = 0; k < q.parameters.size(); ++k) q.parameters[k].initial = best.values[k];
        q.parameters[j].initial = v;
        q.parameters[j].fixed = true;
        return wls_fit(q, solver).chi2 - best.chi2;
    };
    const double start = best.sigma[j] > 0.0 ? best.sigma[j]
                                              : std::max(1e-6, 1e-3 * std::abs(best.values[j]));
    std::pair<double, double> out{0.0, 0.0};
    for (double dir : {-1.0, 1.0}) {
        const double limit = dir > 0 ? fp.upper - best.values[j] : best.values[j] - fp.lower;
        double lo = 0.0;
        double hi = std::min(start, limit);
        bool closed = false;
        for (int k = 0; k < 40; ++k) {
            if (chi2_at(best.values[j] + dir * hi) >= 1.0) {
                closed = true;
                break;
            }
            lo = hi;
            if (hi >= limit) break;
            hi = std::min(2.0 * hi, limit);
        }
        if (closed) {
            for (int k = 0; k < 30; ++k) {
                const double mid = 0.5 * (lo + hi);
                (chi2_at(best.values[j] + dir * mid) >= 1.0 ? hi : lo) = mid;
            }
        }
        (dir < 0 ? out.first : out.second) = hi;
    }
    return out;
}

// Widen the curvature covariance where the profile interval is larger, which
// happens when a scan point sits on the kink of |V0| at cos(theta_k) = 0.
Eigen::MatrixXd profiled_covariance(const WlsProblem& problem, const WlsResult& fit,
                                    const WlsOptions& solver) {
    Eigen::MatrixXd cov = fit.covariance;
    const auto n = cov.rows();
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (problem.parameters[j].fixed) continue;
        const auto [down, up] = profile_interval(problem, fit, static_cast<std::size_t>(j), solver);
        const double w = 0.5 * (down + up);
        const double c = fit.sigma[j];
        if (c > 0.0 && w > c) {
            scale(j) = w / c;
        } else if (c == 0.0) {
            cov(j, j) = w * w;
        }
    }
    return scale.asDiagonal() * cov * scale.asDiagonal();
}

}  // namespace

BackgroundFieldFit fit_background_field(const FieldScans& scans, const VectorShiftModel& model,
                                        FieldFitMode mode, const WlsOptions& solver) {
    check_scan(scans.z, "z");
    check_scan(scans.x, "x");
    for (const auto& p : scans.y) p.validate();

    BackgroundFieldFit out;
    out.mode = mode;
    const double inf = std::numeric_limits<double>::infinity();
    const double bz0 = extremum_start(scans.z, true);
    const double bx0 = extremum_start(scans.x, false);

    if (mode == FieldFitMode::Sequential) {
        // z scan: B0z and the transverse magnitude.
        WlsProblem pz;
        pz.parameters = {{"B0z", bz0, -inf, inf, false, 0.1}, {"B0t", 0.3, 0.0, inf, false, 0.1}};
        pz.residual_count = scans.z.size();
        pz.residuals = [&](const std::vector<double>& p, std::vector<double>& r) {
            const Vec3d b0{p[1], 0.0, p[0]};
            for (std::size_t i = 0; i < scans.z.size(); ++i) {
                const auto& s = scans.z[i];
                r[i] = (s.value - field_depth(model, 2, s.control, b0)) / s.sigma;
            }
        };
        const auto fz = wls_fit(pz, solver);
        const Eigen::MatrixXd cov_z = profiled_covariance(pz, fz, solver);
        out.transverse_from_z = fz.values[1];
        out.transverse_from_z_sigma = std::sqrt(cov_z(1, 1));
        out.chi2_z = fz.chi2;
        out.dof_z = fz.dof;

        // x scan with B0z held: B0x and B0y. B0y enters only squared, so the fit
        // works with B0y^2 >= 0.
        const double bt_sigma = out.transverse_from_z_sigma;
        WlsOptions x_solver = solver;
        x_solver.allow_rank_deficient = true;
        const auto x_problem = [&](double bz) {
            WlsProblem px;
            const double bt = std::max(fz.values[1], 0.05);
            px.parameters = {{"B0x", bx0, -inf, inf, false, 0.1},
                             {"B0y^2", std::max(bt * bt - bx0 * bx0, 0.0025), 0.0, inf, false,
                              0.01}};
            // The transverse magnitude from the z scan enters as one more residual.
            px.residual_count = scans.x.size() + (bt_sigma > 0.0 ? 1 : 0);
            px.residuals = [&, bz](const std::vector<double>& p, std::vector<double>& r) {
                const Vec3d b0{p[0], std::sqrt(p[1]), bz};
                for (std::size_t i = 0; i < scans.x.size(); ++i) {
                    const auto& s = scans.x[i];
                    r[i] = (s.value - field_depth(model, 0, s.control, b0)) / s.sigma;
                }
                if (bt_sigma > 0.0) {
                    r.back() = (fz.values[1] - std::sqrt(p[0] * p[0] + p[1])) / bt_sigma;
                }
            };
            return px;
        };
        const auto fit_x = [&](double bz) { return wls_fit(x_problem(bz), x_solver); };
        const double bz = fz.values[0];
        const auto fx = fit_x(bz);
        out.chi2_x = fx.chi2;
        out.dof_x = fx.dof;
        const double by = std::sqrt(fx.values[1]);
        out.B0 = {fx.values[0], by, bz};

        // Carry the uncertainty of the held B0z into B0x and B0y.
        const double sz = std::sqrt(cov_z(0, 0));
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        cov(2, 2) = sz * sz;
        {
            const auto px = x_problem(bz);
            const Eigen::MatrixXd cx = profiled_covariance(px, fx, x_solver);
            const auto [down, up] = profile_interval(px, fx, 1, x_solver);
            // The larger side, since the interval is lopsided near B0y = 0.
            const double sy = std::max(std::sqrt(fx.values[1] + up) - by,
                                       by - std::sqrt(std::max(fx.values[1] - down, 0.0)));
            cov(0, 0) = cx(0, 0);
            cov(1, 1) = sy * sy;
            if (cx(1, 1) > 0.0) cov(0, 1) = cov(1, 0) = cx(0, 1) / std::sqrt(cx(1, 1)) * sy;
        }
        if (sz > 0.0) {
            const auto up = fit_x(bz + sz);
            const auto dn = fit_x(bz - sz);
            Eigen::Vector3d d;
            d << 0.5 * (up.values[0] - dn.values[0]),
                0.5 * (std::sqrt(up.values[1]) - std::sqrt(dn.values[1])), sz;
            Eigen::Matrix3d extra = d * d.transpose();
            extra(2, 2) = 0.0;
            cov += extra;
        }
        out.covariance = cov;
    } else {
        WlsProblem pg;
        pg.parameters = {{"B0x", bx0, -inf, inf, false, 0.1},
                         {"B0y", 0.1, scans.y.empty() ? 0.0 : -inf, inf, false, 0.1},
                         {"B0z", bz0, -inf, inf, false, 0.1}};
        pg.residual_count = scans.z.size() + scans.x.size() + scans.y.size();
        pg.residuals = [&](const std::vector<double>& p, std::vector<double>& r) {
            const Vec3d b0{p[0], p[1], p[2]};
            std::size_t i = 0;
            for (int axis : {2, 0, 1}) {
                const auto& scan = axis == 2 ? scans.z : axis == 0 ? scans.x : scans.y;
                for (const auto& s : scan) {
                    r[i++] = (s.value - field_depth(model, axis, s.control, b0)) / s.sigma;
                }
            }
        };
        WlsOptions g_solver = solver;
        g_solver.allow_rank_deficient = scans.y.empty();
        const auto fg = wls_fit(pg, g_solver);
        out.B0 = {fg.values[0], fg.values[1], fg.values[2]};
        out.covariance = profiled_covariance(pg, fg, g_solver);
        out.chi2_z = scan_chi2(model, 2, scans.z, out.B0);
        out.dof_z = static_cast<int>(scans.z.size());
        out.chi2_x = scan_chi2(model, 0, scans.x, out.B0);
        out.dof_x = static_cast<int>(scans.x.size());
        out.transverse_from_z = std::hypot(out.B0[0], out.B0[1]);
        out.y_sign_ambiguous = scans.y.empty();
    }
    for (int i = 0; i < 3; ++i) out.sigma[i] = std::sqrt(std::max(out.covariance(i, i), 0.0));

    if (!scans.y.empty()) {
        out.y_validation_chi2 = scan_chi2(model, 1, scans.y, out.B0);
        Vec3d flipped = out.B0;
        flipped[1] = -flipped[1];
        out.y_validation_chi2_flipped = scan_chi2(model, 1, scans.y, flipped);
        out.dof_y = static_cast<int>(scans.y.size());
    }
    return out;
}

std::vector<ScanPoint> synthesize_field_scan(int axis, const std::vector<double>& applied_G,
                                             const Vec3d& background_G,
                                             const VectorShiftModel& model,
                                             const ScanNoise& noise, std::uint64_t seed) {
    if (axis < 0 || axis > 2) throw ValidationError("field axis must be 0 (x), 1 (y) or 2 (z)");
    if (!(noise.relative >= 0.0) || !(noise.floor > 0.0)) {
        throw ValidationError("scan noise needs relative >= 0 and floor > 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<ScanPoint> out;
    for (double b : applied_G) {
        ScanPoint p;
        p.control = b;
        p.m_F = model.m_F();
        const double v = field_depth(model, axis, b, background_G);
        p.sigma = noise.relative * v + noise.floor;
        p.value = v + p.sigma * normal(rng);
        out.push_back(p);
    }
    return out;
}

}  // namespace tuneout

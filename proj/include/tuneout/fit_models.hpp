#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tuneout/polarizability.hpp"

namespace tuneout {

// ---------------------------------------------------------------------------
// Weighted nonlinear least squares

struct FitParameter {
    std::string name;
    double initial = 0.0;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    bool fixed = false;
    double scale = 0.0;  // typical magnitude for the difference step; 0 picks one
};

// Residuals are already weighted, r_i = (y_i - f_i) / sigma_i.
using ResidualFn = std::function<void(const std::vector<double>& p, std::vector<double>& r)>;
// Residuals and their derivatives dr_i/dp_j for all parameters (fixed ones included).
using JacobianFn =
    std::function<void(const std::vector<double>& p, std::vector<double>& r, Eigen::MatrixXd& J)>;

struct WlsProblem {
    std::vector<FitParameter> parameters;
    std::size_t residual_count = 0;
    ResidualFn residuals;
    JacobianFn jacobian;  // optional; numeric central differences otherwise
};

struct WlsOptions {
    int max_iterations = 200;
    double relative_step = 1e-6;
    double parameter_tolerance = 1e-10;
    // Also stop once an undamped step lowers chi2 by less than this fraction.
    double chi2_tolerance = 1e-10;
    bool scale_covariance = false;     // multiply by chi2/dof
    bool allow_rank_deficient = false;  // pseudo-inverse instead of an error
    bool throw_on_failure = true;
};

struct WlsIteration {
    int iteration = 0;
    double chi2 = 0.0;
    double lambda = 0.0;
    double step = 0.0;  // max relative parameter change
    bool accepted = false;
};

struct WlsResult {
    std::vector<std::string> names;
    std::vector<double> values;
    Eigen::MatrixXd covariance;
    std::vector<double> sigma;
    std::vector<bool> at_bound;
    double chi2 = 0.0;
    int dof = 0;
    int iterations = 0;
    int rank = 0;
    bool converged = false;
    std::string termination;
    std::vector<WlsIteration> log;

    std::size_t index(const std::string& name) const;
    double value(const std::string& name) const { return values[index(name)]; }
    double error(const std::string& name) const { return sigma[index(name)]; }
};

// Bounded Levenberg-Marquardt. Throws ValidationError for non-finite residuals
// at the start, NonConvergenceError at the iteration cap and ComputationError
// for a singular Jacobian unless the options say otherwise.
WlsResult wls_fit(const WlsProblem& problem, const WlsOptions& options = {});

// y = f(x, p) with per-point sigma.
WlsResult wls_curve_fit(const std::function<double(double, const std::vector<double>&)>& f,
                        const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& sigma, std::vector<FitParameter> parameters,
                        const WlsOptions& options = {});

// ---------------------------------------------------------------------------
// Fluctuating circular polarisation

// E|g| for g ~ Normal(gamma, (2 sigma)^2), times `prefactor`:
//   prefactor [sqrt(8 sigma^2/pi) exp(-gamma^2/(8 sigma^2)) + gamma erf(gamma/sqrt(8 sigma^2))].
double fluctuating_pol_potential(double gamma, double sigma, double prefactor = 1.0);

// Vector weight multiplying A alpha_v: m/(2F) as in the Stark shift itself, or m/F.
enum class VectorConvention { HalfF, F };
double vector_factor(VectorConvention c, int m_F, HalfInt F);
const char* to_string(VectorConvention c);

struct ScanPoint {
    double control = 0.0;  // wavelength (nm) or applied field component (G)
    double value = 0.0;    // measured |V0|, E_r
    double sigma = 0.0;
    int m_F = 0;
    int shots = 1;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Tune-out line

struct TuneoutLineFit {
    double lambda_m_nm = 0.0;
    double lambda_m_sigma_nm = 0.0;
    double slope_per_pm = 0.0;  // |dV0/dlambda|, E_r per pm
    double slope_sigma = 0.0;
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // lambda_M (nm), slope
    double chi2 = 0.0;
    int dof = 0;
    int points = 0;
};

// |V0| = s |lambda - lambda_M| through measured depths with per-point sigma.
// Diffraction only measures |V0|, so the sign of the slope is not fitted.
TuneoutLineFit fit_tuneout_line(const std::vector<ScanPoint>& points, const WlsOptions& solver = {});

// Lattice potential of the F = 1 sublevels near the tune-out wavelength in the
// pi-light geometry with k along the quantisation axis, with the theory curve
// moved so that its m_F = 0 zero sits at the measured lambda_M.
class FluctuatingPolarizationModel {
public:
    FluctuatingPolarizationModel(const SpeciesData& data, double lambda_m_nm,
                                 VectorConvention convention = VectorConvention::HalfF);

    double lambda_m_nm() const { return lambda_m_nm_; }
    double theory_root_nm() const { return theory_root_nm_; }
    VectorConvention convention() const { return convention_; }
    // d alpha / d lambda of the m_F = 0 bracket at the root, a.u. per pm (< 0).
    double dalpha_per_pm() const { return dalpha_per_pm_; }

    // Scalar plus tensor bracket for sublevel m at lambda, a.u.
    double alpha_st(double nm, int m) const;
    double alpha_v(double nm) const;
    // gamma = alpha_st + A0 k(m) alpha_v, a.u.
    double gamma(double nm, int m, double A0, double cos_theta_k = 1.0) const;

    // |V0| in E_r for sublevel m, given the slope dV0/dlambda of the m_F = 0
    // branch (E_r per pm) that fixes the intensity.
    double depth(double nm, int m, double slope_per_pm, double A0, double sigma_A,
                 double cos_theta_k = 1.0) const;

    // Minimum of the m branch without fluctuations, nm.
    double branch_minimum_nm(int m, double A0) const;

private:
    std::vector<PolarizabilityModel> model_;  // m = -1, 0, +1
    HalfInt F_;
    double lambda_m_nm_;
    double theory_root_nm_;
    double shift_nm_;
    double dalpha_per_pm_;
    VectorConvention convention_;
};

struct PolarizationFit {
    double A0 = 0.0;
    double sigma_A = 0.0;
    double slope_per_pm = 0.0;
    double lambda_m_nm = 0.0;
    bool lambda_m_free = false;
    VectorConvention convention = VectorConvention::HalfF;
    Eigen::MatrixXd covariance;  // A0, sigma_A, slope (, lambda_m)
    double A0_sigma = 0.0;
    double sigma_A_sigma = 0.0;
    double slope_sigma = 0.0;
    double lambda_m_sigma = 0.0;
    double chi2 = 0.0;
    int dof = 0;
    bool sigma_A_at_bound = false;
    int iterations = 0;
};

struct PolarizationFitOptions {
    double lambda_m_sigma_nm = 0.0;  // prior width when lambda_M is free
    bool lambda_m_free = false;
    WlsOptions solver;
};

// One joint fit of both m_F = +-1 branches with slope, A0 and sigma_A free.
PolarizationFit fit_polarization(const std::vector<ScanPoint>& points,
                                 const FluctuatingPolarizationModel& model,
                                 const PolarizationFitOptions& options = {});

struct PolarizationTruth {
    double A0 = -7.80e-3;
    double sigma_A = 4.78e-3;
    double slope_per_pm = 0.6;
};

struct ScanNoise {
    double relative = 0.05;
    double floor = 0.3;  // E_r
};

std::vector<ScanPoint> synthesize_polarization_scan(const FluctuatingPolarizationModel& model,
                                                    const PolarizationTruth& truth,
                                                    const std::vector<double>& grid_nm,
                                                    const ScanNoise& noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Magnetic projection

using Vec3d = std::array<double, 3>;

struct MagneticEnvironment {
    Vec3d applied{0.0, 0.0, 0.0};     // G
    Vec3d background{0.0, 0.0, 0.0};  // G

    Vec3d total() const;
};

// B_z,t / |B_t| with k along z. Throws ComputationError for a vanishing field.
double cos_theta_k(const MagneticEnvironment& env);

// |V0| of m_F = +1 at lambda_M as a function of the field direction.
class VectorShiftModel {
public:
    VectorShiftModel(const FluctuatingPolarizationModel& model, const PolarizationFit& pol,
                     int m_F = 1);
    double depth(double cos_theta) const;
    double depth(const MagneticEnvironment& env) const { return depth(cos_theta_k(env)); }
    int m_F() const { return m_F_; }

private:
    FluctuatingPolarizationModel model_;
    PolarizationFit pol_;
    int m_F_;
};

enum class FieldFitMode { Sequential, Global };

struct BackgroundFieldFit {
    Vec3d B0{0.0, 0.0, 0.0};
    Vec3d sigma{0.0, 0.0, 0.0};
    Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
    FieldFitMode mode = FieldFitMode::Sequential;
    double transverse_from_z = 0.0;  // sqrt(B0x^2 + B0y^2) seen by the z scan
    double transverse_from_z_sigma = 0.0;
    double chi2_z = 0.0;
    int dof_z = 0;
    double chi2_x = 0.0;
    int dof_x = 0;
    // The x scan only sees B0y^2; B0y is reported >= 0 and the y scan, when
    // present, is evaluated for both signs without being fitted.
    bool y_sign_ambiguous = true;
    std::optional<double> y_validation_chi2;
    std::optional<double> y_validation_chi2_flipped;
    int dof_y = 0;
};

struct FieldScans {
    std::vector<ScanPoint> z;  // control: applied B_z
    std::vector<ScanPoint> x;  // control: applied B_x
    std::vector<ScanPoint> y;  // control: applied B_y, validation only
};

BackgroundFieldFit fit_background_field(const FieldScans& scans, const VectorShiftModel& model,
                                        FieldFitMode mode = FieldFitMode::Sequential,
                                        const WlsOptions& solver = {});

std::vector<ScanPoint> synthesize_field_scan(int axis, const std::vector<double>& applied_G,
                                             const Vec3d& background_G,
                                             const VectorShiftModel& model,
                                             const ScanNoise& noise, std::uint64_t seed);

}  // namespace tuneout

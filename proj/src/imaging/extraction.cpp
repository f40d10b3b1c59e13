#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/imaging.hpp"

namespace tuneout {

std::vector<double> vertical_profile(const ODImage& od, const Rect& band) {
    band.validate(od.width, od.height, "band");
    std::vector<double> out(static_cast<std::size_t>(band.width));
    for (int x = band.x0; x < band.x0 + band.width; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int y = band.y0; y < band.y0 + band.height; ++y) {
            if (!od.is_valid(x, y)) continue;
            sum += od.at(x, y);
            ++n;
        }
        out[static_cast<std::size_t>(x - band.x0)] =
            2 * n >= band.height ? sum * band.height / n : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;
// BEC area over its standard error that some order must exceed in a populated band.
constexpr double kMinBecSignificance = 5.0;

// Parameter layout of one band: baseline, centre of order 0, spacing, thermal
// width ratio, then per order the BEC area and the thermal area, then widths.
// Thermal widths follow the shared BEC width, never an order's own one.
struct BandModel {
    std::vector<int> orders;
    std::vector<double> x;       // column positions with data
    std::vector<double> y;       // binned OD
    std::vector<int> width_of;   // parameter index of each order's BEC width
    std::size_t first_width = 0;

    static constexpr std::size_t kBase = 0, kCentre = 1, kSpacing = 2, kRatio = 3, kOrders = 4;
    std::size_t area(std::size_t j) const { return kOrders + 2 * j; }
    std::size_t thermal(std::size_t j) const { return kOrders + 2 * j + 1; }

    void evaluate(const std::vector<double>& p, std::vector<double>& r, Eigen::MatrixXd* J) const {
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = y[i] - p[kBase];
        if (J) J->col(kBase).setConstant(-1.0);
        const double rho = p[kRatio];
        for (std::size_t j = 0; j < orders.size(); ++j) {
            const double mu = p[kCentre] + orders[j] * p[kSpacing];
            const double w = p[static_cast<std::size_t>(width_of[j])];
            const double ws = p[first_width];
            const double wt = rho * ws;
            const double a = p[area(j)];
            const double t = p[thermal(j)];
            const double reach = 8.0 * std::max(w, wt);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = x[i] - mu;
                if (std::abs(d) > reach) continue;
                const double ub = d / w;
                const double ut = d / wt;
                const double gb = kInvSqrt2Pi / w * std::exp(-0.5 * ub * ub);
                const double gt = kInvSqrt2Pi / wt * std::exp(-0.5 * ut * ut);
                r[i] -= a * gb + t * gt;
                if (!J) continue;
                const auto row = static_cast<Eigen::Index>(i);
                const double dmu = a * gb * ub / w + t * gt * ut / wt;
                (*J)(row, kCentre) -= dmu;
                (*J)(row, kSpacing) -= orders[j] * dmu;
                (*J)(row, static_cast<Eigen::Index>(area(j))) = -gb;
                (*J)(row, static_cast<Eigen::Index>(thermal(j))) = -gt;
                (*J)(row, width_of[j]) -= a * gb * (ub * ub - 1.0) / w;
                (*J)(row, static_cast<Eigen::Index>(first_width)) -= t * gt * (ut * ut - 1.0) / ws;
                (*J)(row, kRatio) -= t * gt * (ut * ut - 1.0) / rho;
            }
        }
    }
};

BandFit fit_band(const std::vector<double>& profile, int x0, int m_F, const ShotLayout& layout,
                 int n_max, const ExtractionOptions& opt) {
    BandModel model;
    for (std::size_t i = 0; i < profile.size(); ++i) {
        if (std::isfinite(profile[i])) {
            model.x.push_back(x0 + static_cast<double>(i));
            model.y.push_back(profile[i]);
        }
    }
    for (int n = -n_max; n <= n_max; ++n) model.orders.push_back(n);
    const std::size_t no = model.orders.size();
    const double inf = std::numeric_limits<double>::infinity();
    const double spacing = layout.order_spacing_px;

    // Starting areas from the profile maximum near each nominal centre.
    const double w0 = 0.1 * spacing;
    std::vector<double> peak(no, 0.0);
    for (std::size_t j = 0; j < no; ++j) {
        const double mu = layout.center_x + model.orders[j] * spacing;
        for (std::size_t i = 0; i < model.x.size(); ++i) {
            if (std::abs(model.x[i] - mu) <= 2.0 * w0) peak[j] = std::max(peak[j], model.y[i]);
        }
    }

    const auto build = [&](const std::vector<double>* from, const std::vector<bool>& own_width,
                           bool free_spacing) {
        WlsProblem prob;
        auto& ps = prob.parameters;
        const auto val = [&](std::size_t k, double dflt) { return from ? (*from)[k] : dflt; };
        ps.push_back({"baseline", val(0, 0.0), -inf, inf, false, 1.0});
        ps.push_back({"centre", val(1, layout.center_x), layout.center_x - 0.5 * spacing,
                      layout.center_x + 0.5 * spacing, false, 1.0});
        ps.push_back({"spacing", val(2, spacing), 0.8 * spacing, 1.2 * spacing, !free_spacing, 1.0});
        ps.push_back({"thermal_ratio",
                      std::max(val(3, opt.initial_thermal_ratio), opt.min_thermal_ratio),
                      opt.min_thermal_ratio, 50.0, from == nullptr, 1.0});
        for (std::size_t j = 0; j < no; ++j) {
            const std::string n = std::to_string(model.orders[j]);
            const double a0 = std::max(peak[j], 0.0) * w0 / kInvSqrt2Pi;
            ps.push_back({"bec_area[" + n + "]", std::max(val(4 + 2 * j, 0.85 * a0), 0.0), 0.0, inf,
                          false, 1.0});
            ps.push_back({"thermal_area[" + n + "]", std::max(val(5 + 2 * j, 0.15 * a0), 0.0), 0.0,
                          inf, false, 1.0});
        }
        model.first_width = ps.size();
        const double shared = from ? (*from)[4 + 2 * no] : w0;
        ps.push_back({"bec_width", shared, 0.3, 0.4 * spacing, false, 1.0});
        model.width_of.assign(no, static_cast<int>(model.first_width));
        for (std::size_t j = 0; j < no; ++j) {
            if (!own_width[j]) continue;
            model.width_of[j] = static_cast<int>(ps.size());
            ps.push_back({"bec_width[" + std::to_string(model.orders[j]) + "]", shared, 0.3,
                          0.4 * spacing, false, 1.0});
        }
        // the shared width is unused when every order has its own
        bool any_shared = false;
        for (std::size_t j = 0; j < no; ++j) any_shared |= !own_width[j];
        // After the first stage the shared width only carries the minor orders,
        // whose peaks are too faint to pin it; it stays at the stage-one value.
        if (!any_shared || from) ps[model.first_width].fixed = true;
        prob.residual_count = model.x.size();
        prob.jacobian = [&model](const std::vector<double>& p, std::vector<double>& r,
                                 Eigen::MatrixXd& J) { model.evaluate(p, r, &J); };
        prob.residuals = [&model](const std::vector<double>& p, std::vector<double>& r) {
            model.evaluate(p, r, nullptr);
        };
        return prob;
    };

    WlsOptions solver = opt.solver;
    solver.scale_covariance = true;
    solver.allow_rank_deficient = true;

    // Stage one holds the thermal ratio at its start and the spacing at its
    // nominal value; the spacing is freed only when two orders are strong
    // enough to fix it.
    const std::vector<bool> none(no, false);
    auto prob = build(nullptr, none, false);
    auto fit = wls_fit(prob, solver);

    double total = 0.0;
    for (std::size_t j = 0; j < no; ++j) total += fit.values[model.area(j)];
    if (!(total > 0.0)) {
        throw ComputationError("band m_F = " + std::to_string(m_F) + " shows no BEC signal");
    }
    std::vector<bool> own(no, false);
    int significant = 0;
    for (std::size_t j = 0; j < no; ++j) {
        const double a = fit.values[model.area(j)];
        own[j] = a / total > opt.free_width_fraction;
        const auto i = static_cast<Eigen::Index>(model.area(j));
        if (a > kMinBecSignificance * std::sqrt(std::max(fit.covariance(i, i), 0.0))) ++significant;
    }
    const auto stage1 = fit.values;
    prob = build(&stage1, own, significant >= 2);
    fit = wls_fit(prob, solver);

    BandFit out;
    out.m_F = m_F;
    out.fitted = true;
    out.spacing_px = fit.values[BandModel::kSpacing];
    out.center_px = fit.values[BandModel::kCentre];
    out.parameter_names = fit.names;
    out.covariance = fit.covariance;
    out.chi2 = fit.chi2;
    out.dof = fit.dof;
    out.noise = fit.dof > 0 ? std::sqrt(fit.chi2 / fit.dof) : 0.0;
    const double rho = fit.values[BandModel::kRatio];

    double thermal_total = 0.0;
    total = 0.0;
    for (std::size_t j = 0; j < no; ++j) {
        OrderPeak pk;
        pk.order = model.orders[j];
        pk.center_px = out.center_px + pk.order * out.spacing_px;
        pk.bec_width_px = fit.values[static_cast<std::size_t>(model.width_of[j])];
        pk.thermal_width_px = rho * fit.values[model.first_width];
        pk.bec_area = fit.values[model.area(j)];
        pk.thermal_area = fit.values[model.thermal(j)];
        pk.widths_free = own[j];
        total += pk.bec_area;
        thermal_total += pk.thermal_area;
        out.peaks.push_back(pk);
    }
    if (!(total > 0.0)) {
        throw ComputationError("band m_F = " + std::to_string(m_F) + " shows no BEC signal");
    }
    // The split is reported as unidentifiable when the thermal part vanished
    // or the ratio sits on its bound, or the Jacobian lost rank.
    out.thermal_split_identifiable =
        thermal_total > 0.0 && !fit.at_bound[BandModel::kRatio] &&
        fit.rank == static_cast<int>(std::count(fit.at_bound.begin(), fit.at_bound.end(), false)) -
                        static_cast<int>(std::count_if(prob.parameters.begin(), prob.parameters.end(),
                                                       [](const FitParameter& f) { return f.fixed; }));

    // P_N = a_N / sum a with the area covariance; orders pinned at zero get
    // the single-peak uncertainty of their area.
    const Eigen::Index k = static_cast<Eigen::Index>(no);
    Eigen::MatrixXd cov(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) {
            cov(a, b) = fit.covariance(static_cast<Eigen::Index>(model.area(static_cast<std::size_t>(a))),
                                       static_cast<Eigen::Index>(model.area(static_cast<std::size_t>(b))));
        }
        if (cov(a, a) <= 0.0) {
            const double w = out.peaks[static_cast<std::size_t>(a)].bec_width_px;
            cov(a, a) = out.noise * out.noise * 2.0 * std::sqrt(constants::pi) * w;
        }
    }
    // A band counts as populated once one order stands clear of its own error.
    bool populated = false;
    for (Eigen::Index a = 0; a < k; ++a) {
        if (out.peaks[static_cast<std::size_t>(a)].bec_area > kMinBecSignificance * std::sqrt(cov(a, a))) {
            populated = true;
        }
    }
    if (!populated) {
        throw ComputationError("band m_F = " + std::to_string(m_F) + " shows no significant BEC signal");
    }
    Eigen::MatrixXd jac(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        const double pa = out.peaks[static_cast<std::size_t>(a)].bec_area / total;
        for (Eigen::Index b = 0; b < k; ++b) jac(a, b) = ((a == b ? 1.0 : 0.0) - pa) / total;
    }
    const Eigen::MatrixXd pc = jac * cov * jac.transpose();
    for (Eigen::Index a = 0; a < k; ++a) {
        const int n = model.orders[static_cast<std::size_t>(a)];
        out.populations.p[n] = out.peaks[static_cast<std::size_t>(a)].bec_area / total;
        out.populations.sigma[n] = std::sqrt(std::max(pc(a, a), 0.0));
        for (Eigen::Index b = a; b < k; ++b) {
            out.populations.covariance[{n, model.orders[static_cast<std::size_t>(b)]}] = pc(a, b);
        }
    }
    return out;
}

}  // namespace

PeakFitResult extract_populations(const ODImage& od, const ShotLayout& layout,
                                  const ExtractionOptions& options) {
    layout.validate();
    if (od.width != layout.width || od.height != layout.height) {
        throw ValidationError("OD image does not match the layout dimensions");
    }
    const int n_max = options.n_max < 0 ? layout.n_max : options.n_max;
    if (layout.center_x - n_max * layout.order_spacing_px < 0.0 ||
        layout.center_x + n_max * layout.order_spacing_px > layout.width - 1) {
        throw ValidationError("requested orders leave the frame");
    }
    if (!(options.min_thermal_ratio > 1.0) ||
        !(options.initial_thermal_ratio >= options.min_thermal_ratio)) {
        throw ValidationError("thermal ratio bound must exceed 1 and the start must respect it");
    }
    PeakFitResult out;
    for (int b = 0; b < 3; ++b) {
        out.bands[static_cast<std::size_t>(b)].m_F = b - 1;
        if (!options.bands[static_cast<std::size_t>(b)]) continue;
        const Rect band = layout.band(b);
        const auto profile = vertical_profile(od, band);
        try {
            out.bands[static_cast<std::size_t>(b)] = fit_band(profile, band.x0, b - 1, layout, n_max, options);
        } catch (const NonConvergenceError& e) {
            throw NonConvergenceError("peak fit of band m_F = " + std::to_string(b - 1) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace tuneout

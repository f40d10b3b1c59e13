#include <algorithm>
#include <cmath>
#include <sstream>

#include "tuneout/errors.hpp"
#include "tuneout/fit_models.hpp"

namespace tuneout {

std::size_t WlsResult::index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("no fit parameter named '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

namespace {

struct Evaluator {
    const WlsProblem& problem;
    const WlsOptions& options;
    std::vector<double> steps;

    double chi2(const std::vector<double>& p, std::vector<double>& r) const {
        r.assign(problem.residual_count, 0.0);
        problem.residuals(p, r);
        double s = 0.0;
        for (double v : r) s += v * v;
        return s;
    }

    void jacobian(const std::vector<double>& p, std::vector<double>& r, Eigen::MatrixXd& J) {
        const auto n = problem.parameters.size();
        const auto m = problem.residual_count;
        if (problem.jacobian) {
            r.assign(m, 0.0);
            J.setZero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
            problem.jacobian(p, r, J);
            return;
        }
        chi2(p, r);
        J.setZero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        std::vector<double> q = p;
        std::vector<double> rp;
        std::vector<double> rm;
        for (std::size_t j = 0; j < n; ++j) {
            const auto& fp = problem.parameters[j];
            if (fp.fixed) continue;
            const double h = options.relative_step * std::max(std::abs(p[j]), steps[j]);
            const bool up_ok = p[j] + h <= fp.upper;
            const bool dn_ok = p[j] - h >= fp.lower;
            if (up_ok && dn_ok) {
                q[j] = p[j] + h;
                chi2(q, rp);
                q[j] = p[j] - h;
                chi2(q, rm);
                for (std::size_t i = 0; i < m; ++i) J(i, j) = (rp[i] - rm[i]) / (2.0 * h);
            } else if (up_ok) {
                q[j] = p[j] + h;
                chi2(q, rp);
                for (std::size_t i = 0; i < m; ++i) J(i, j) = (rp[i] - r[i]) / h;
            } else {
                q[j] = p[j] - h;
                chi2(q, rm);
                for (std::size_t i = 0; i < m; ++i) J(i, j) = (r[i] - rm[i]) / h;
            }
            q[j] = p[j];
        }
    }
};

}  // namespace

WlsResult wls_fit(const WlsProblem& problem, const WlsOptions& options) {
    const std::size_t n = problem.parameters.size();
    const std::size_t m = problem.residual_count;
    if (n == 0) throw ValidationError("least squares: no parameters");
    if (!problem.residuals && !problem.jacobian) {
        throw ValidationError("least squares: no residual function");
    }
    if (options.max_iterations < 1) throw ValidationError("least squares: iteration cap < 1");

    WlsProblem local = problem;
    if (!local.residuals) {
        local.residuals = [&problem, n, m](const std::vector<double>& p, std::vector<double>& r) {
            Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m),
                                                      static_cast<Eigen::Index>(n));
            problem.jacobian(p, r, J);
        };
    }

    WlsResult out;
    std::vector<double> p(n);
    std::vector<std::size_t> free;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& fp = problem.parameters[j];
        out.names.push_back(fp.name);
        if (!(fp.lower <= fp.upper)) {
            throw ValidationError("least squares: bounds of '" + fp.name + "' are inverted");
        }
        if (!std::isfinite(fp.initial) || fp.initial < fp.lower || fp.initial > fp.upper) {
            throw ValidationError("least squares: initial value of '" + fp.name +
                                  "' is outside its bounds");
        }
        p[j] = fp.initial;
        if (!fp.fixed && fp.lower < fp.upper) free.push_back(j);
    }
    if (m < free.size()) {
        throw ValidationError("least squares: fewer residuals than free parameters");
    }

    Evaluator ev{local, options, {}};
    ev.steps.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& fp = problem.parameters[j];
        ev.steps[j] = fp.scale > 0.0 ? fp.scale : std::max(std::abs(fp.initial), 1e-8);
    }

    std::vector<double> r;
    double chi2 = ev.chi2(p, r);
    for (double v : r) {
        if (!std::isfinite(v)) throw ValidationError("least squares: non-finite residual at start");
    }

    Eigen::MatrixXd J;
    double lambda = 1e-3;
    bool converged = false;
    int it = 0;
    for (; it < options.max_iterations && !converged; ++it) {
        ev.jacobian(p, r, J);
        const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(m));
        const Eigen::VectorXd grad = J.transpose() * rv;  // d(chi2)/dp / 2

        // Parameters pinned at a bound with the descent direction pointing out.
        std::vector<std::size_t> active;
        for (std::size_t j : free) {
            const auto& fp = problem.parameters[j];
            const bool at_lo = p[j] <= fp.lower && grad(static_cast<Eigen::Index>(j)) > 0.0;
            const bool at_hi = p[j] >= fp.upper && grad(static_cast<Eigen::Index>(j)) < 0.0;
            if (!at_lo && !at_hi) active.push_back(j);
        }
        if (active.empty()) {
            converged = true;
            out.termination = "all free parameters at bounds";
            break;
        }
        const auto k = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd H(k, k);
        Eigen::VectorXd g(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            g(a) = grad(static_cast<Eigen::Index>(active[a]));
            for (Eigen::Index b = 0; b < k; ++b) {
                H(a, b) = J.col(static_cast<Eigen::Index>(active[a]))
                              .dot(J.col(static_cast<Eigen::Index>(active[b])));
            }
        }
        const double diag_max = H.diagonal().maxCoeff();
        if (!(diag_max > 0.0)) {
            converged = true;
            out.termination = "zero Jacobian";
            break;
        }

        bool accepted = false;
        double max_rel = 0.0;
        for (int tries = 0; tries < 60; ++tries) {
            Eigen::MatrixXd A = H;
            for (Eigen::Index a = 0; a < k; ++a) {
                A(a, a) += lambda * std::max(H(a, a), 1e-12 * diag_max);
            }
            const Eigen::VectorXd delta = A.ldlt().solve(-g);
            std::vector<double> q = p;
            max_rel = 0.0;
            for (Eigen::Index a = 0; a < k; ++a) {
                const std::size_t j = active[a];
                const auto& fp = problem.parameters[j];
                q[j] = std::clamp(p[j] + delta(a), fp.lower, fp.upper);
                max_rel = std::max(max_rel, std::abs(q[j] - p[j]) /
                                                std::max(std::abs(p[j]), ev.steps[j]));
            }
            std::vector<double> rq;
            const double cq = ev.chi2(q, rq);
            WlsIteration rec{it + 1, cq, lambda, max_rel, false};
            if (std::isfinite(cq) && cq <= chi2) {
                rec.accepted = true;
                out.log.push_back(rec);
                p = q;
                r = rq;
                const double drop = chi2 - cq;
                chi2 = cq;
                lambda = std::max(lambda * 0.2, 1e-15);
                accepted = true;
                if (max_rel <= options.parameter_tolerance || chi2 == 0.0 ||
                    drop <= 1e-14 * chi2 ||
                    (drop <= options.chi2_tolerance * chi2 && lambda <= 1e-2)) {
                    converged = true;
                    out.termination = max_rel <= options.parameter_tolerance ? "parameter change below tolerance"
                                                                      : "chi2 change below tolerance";
                }
                break;
            }
            out.log.push_back(rec);
            lambda *= 8.0;
            if (lambda > 1e20) break;
        }
        if (!accepted) {
            // No downhill step at any damping: a minimum to working precision.
            converged = true;
            out.termination = "no further decrease";
        }
    }
    out.iterations = it;
    out.converged = converged;
    if (!converged) {
        out.termination = "iteration cap reached";
        if (options.throw_on_failure) {
            std::ostringstream msg;
            msg << "least squares did not converge in " << options.max_iterations
                << " iterations (chi2 " << chi2 << ", last step " << out.log.back().step
                << ") at";
            for (std::size_t j = 0; j < n; ++j) msg << ' ' << out.names[j] << '=' << p[j];
            throw NonConvergenceError(msg.str());
        }
    }

    // Covariance from the Jacobian at the optimum, over the parameters not pinned
    // at a bound.
    ev.jacobian(p, r, J);
    out.values = p;
    out.chi2 = chi2;
    out.at_bound.assign(n, false);
    std::vector<std::size_t> interior;
    for (std::size_t j : free) {
        const auto& fp = problem.parameters[j];
        if (p[j] <= fp.lower || p[j] >= fp.upper) {
            out.at_bound[j] = true;
        } else {
            interior.push_back(j);
        }
    }
    out.dof = static_cast<int>(m) - static_cast<int>(free.size());
    out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    out.sigma.assign(n, 0.0);
    const auto k = static_cast<Eigen::Index>(interior.size());
    if (k > 0) {
        Eigen::MatrixXd Jk(J.rows(), k);
        for (Eigen::Index a = 0; a < k; ++a) Jk.col(a) = J.col(static_cast<Eigen::Index>(interior[a]));
        // Scale columns so the rank test does not depend on parameter units.
        Eigen::VectorXd s(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            const double nrm = Jk.col(a).norm();
            s(a) = nrm > 0.0 ? 1.0 / nrm : 1.0;
        }
        const Eigen::MatrixXd Js = Jk * s.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Js.transpose() * Js);
        const Eigen::VectorXd ev_vals = eig.eigenvalues();
        const double cutoff = std::max(ev_vals.maxCoeff(), 0.0) * 1e-14 * static_cast<double>(k);
        Eigen::VectorXd inv(k);
        int rank = 0;
        for (Eigen::Index a = 0; a < k; ++a) {
            if (ev_vals(a) > cutoff) {
                inv(a) = 1.0 / ev_vals(a);
                ++rank;
            } else {
                inv(a) = 0.0;
            }
        }
        out.rank = rank;
        if (rank < k && !options.allow_rank_deficient) {
            std::ostringstream msg;
            msg << "least squares: singular Jacobian (rank " << rank << " of " << k << ")";
            const Eigen::VectorXd weakest = eig.eigenvectors().col(0);
            msg << "; weakest direction mixes";
            for (Eigen::Index a = 0; a < k; ++a) {
                if (std::abs(weakest(a)) > 0.1) msg << " " << out.names[interior[a]];
            }
            if (options.throw_on_failure) throw ComputationError(msg.str());
            out.termination += "; " + msg.str();
        }
        const Eigen::MatrixXd cs =
            s.asDiagonal() * (eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose()) *
            s.asDiagonal();
        double factor = 1.0;
        if (options.scale_covariance && out.dof > 0) factor = chi2 / out.dof;
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = 0; b < k; ++b) {
                out.covariance(static_cast<Eigen::Index>(interior[a]),
                               static_cast<Eigen::Index>(interior[b])) = factor * cs(a, b);
            }
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        out.sigma[j] = std::sqrt(std::max(0.0, out.covariance(static_cast<Eigen::Index>(j),
                                                              static_cast<Eigen::Index>(j))));
    }
    return out;
}

WlsResult wls_curve_fit(const std::function<double(double, const std::vector<double>&)>& f,
                        const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& sigma, std::vector<FitParameter> parameters,
                        const WlsOptions& options) {
    if (x.size() != y.size() || x.size() != sigma.size()) {
        throw ValidationError("curve fit: x, y and sigma sizes differ");
    }
    for (double s : sigma) {
        if (!(s > 0.0)) throw ValidationError("curve fit: every sigma must be > 0");
    }
    WlsProblem prob;
    prob.parameters = std::move(parameters);
    prob.residual_count = x.size();
    prob.residuals = [&](const std::vector<double>& p, std::vector<double>& r) {
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = (y[i] - f(x[i], p)) / sigma[i];
    };
    return wls_fit(prob, options);
}

}  // namespace tuneout

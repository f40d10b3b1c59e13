#include <cmath>
#include <sstream>

#include "tuneout/errors.hpp"
#include "tuneout/imaging.hpp"

namespace tuneout {

ReferenceBasis::ReferenceBasis(const std::vector<Frame>& frames, const Rect& mask,
                               double rank_tolerance)
    : mask_(mask), tolerance_(rank_tolerance) {
    if (frames.empty()) throw ValidationError("reference basis needs at least one frame");
    if (!(rank_tolerance > 0.0 && rank_tolerance < 1.0)) {
        throw ValidationError("rank tolerance must lie in (0, 1)");
    }
    width_ = frames.front().width;
    height_ = frames.front().height;
    for (const auto& f : frames) {
        f.validate();
        if (f.width != width_ || f.height != height_) {
            std::ostringstream msg;
            msg << "reference frame '" << f.shot_id << "' is " << f.width << "x" << f.height
                << ", basis is " << width_ << "x" << height_;
            throw ValidationError(msg.str());
        }
    }
    mask_.validate(width_, height_, "mask");
    index_pixels();
    const auto npix = static_cast<Eigen::Index>(order_.size());
    data_.resize(npix, static_cast<Eigen::Index>(frames.size()));
    for (std::size_t k = 0; k < frames.size(); ++k) {
        double* col = data_.col(static_cast<Eigen::Index>(k)).data();
        const auto& px = frames[k].pixels;
        for (Eigen::Index i = 0; i < npix; ++i) col[i] = px[order_[i]];
    }
    decompose();
}

void ReferenceBasis::index_pixels() {
    order_.clear();
    order_.reserve(static_cast<std::size_t>(width_) * height_);
    for (int y = mask_.y0; y < mask_.y0 + mask_.height; ++y) {
        for (int x = mask_.x0; x < mask_.x0 + mask_.width; ++x) {
            order_.push_back(static_cast<std::uint32_t>(y * width_ + x));
        }
    }
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            if (!mask_.contains(x, y)) order_.push_back(static_cast<std::uint32_t>(y * width_ + x));
        }
    }
}

void ReferenceBasis::decompose() {
    const auto k = data_.cols();
    const auto nm = static_cast<Eigen::Index>(mask_.area());
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(data_.topRows(nm).transpose());
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
        throw ComputationError("eigendecomposition of the reference Gram matrix failed");
    }
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const Eigen::MatrixXd& vec = eig.eigenvectors();
    const double top = lam.maxCoeff();
    if (!(top > 0.0)) throw ComputationError("reference frames vanish on the mask");

    report_ = BasisReport{};
    report_.frames = static_cast<int>(k);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(k);
    double smallest = top;
    std::vector<bool> dependent(static_cast<std::size_t>(k), false);
    for (Eigen::Index a = 0; a < k; ++a) {
        if (lam(a) > tolerance_ * top) {
            inv(a) = 1.0 / lam(a);
            smallest = std::min(smallest, lam(a));
            ++report_.rank;
        } else {
            for (Eigen::Index j = 0; j < k; ++j) {
                if (std::abs(vec(j, a)) > 0.1) dependent[static_cast<std::size_t>(j)] = true;
            }
        }
    }
    report_.condition = top / smallest;
    for (Eigen::Index j = 0; j < k; ++j) {
        if (dependent[static_cast<std::size_t>(j)]) report_.dependent.push_back(static_cast<int>(j));
    }
    pinv_ = vec * inv.asDiagonal() * vec.transpose();
}

ReferenceBasis::Composition ReferenceBasis::compose(const Frame& signal) const {
    if (signal.width != width_ || signal.height != height_) {
        throw ValidationError("signal frame does not match the reference basis dimensions");
    }
    if (signal.pixels.size() != order_.size()) throw ValidationError("signal frame is malformed");
    const auto nm = static_cast<Eigen::Index>(mask_.area());
    Eigen::VectorXd s(nm);
    for (Eigen::Index i = 0; i < nm; ++i) s(i) = signal.pixels[order_[i]];
    const Eigen::VectorXd b = data_.topRows(nm).transpose() * s;
    const Eigen::VectorXd c = pinv_ * b;
    const Eigen::VectorXd r = data_ * c;

    Composition out;
    out.r_best.width = width_;
    out.r_best.height = height_;
    out.r_best.pixels.resize(order_.size());
    out.r_best.shot_id = signal.shot_id + ":r_best";
    out.r_best.role = FrameRole::Reference;
    for (std::size_t i = 0; i < order_.size(); ++i) out.r_best.pixels[order_[i]] = r(static_cast<Eigen::Index>(i));
    out.coefficients.assign(c.data(), c.data() + c.size());
    out.masked_residual_norm = (s - r.head(nm)).norm();
    return out;
}

ReferenceBasis ReferenceBasis::with_frame(const Frame& frame) const {
    frame.validate();
    if (frame.width != width_ || frame.height != height_) {
        throw ValidationError("new reference frame does not match the basis dimensions");
    }
    ReferenceBasis next;
    next.width_ = width_;
    next.height_ = height_;
    next.mask_ = mask_;
    next.tolerance_ = tolerance_;
    next.version_ = version_ + 1;
    next.order_ = order_;
    next.data_.resize(data_.rows(), data_.cols() + 1);
    next.data_.leftCols(data_.cols()) = data_;
    for (Eigen::Index i = 0; i < data_.rows(); ++i) next.data_(i, data_.cols()) = frame.pixels[order_[i]];
    next.decompose();
    return next;
}

std::vector<double> ReferenceBasis::masked_frame(int k) const {
    if (k < 0 || k >= size()) throw ValidationError("reference frame index out of range");
    const auto nm = static_cast<Eigen::Index>(mask_.area());
    const auto col = data_.col(k).head(nm);
    return {col.data(), col.data() + nm};
}

std::vector<double> ReferenceBasis::masked_pixels(const Frame& f) const {
    if (f.width != width_ || f.height != height_) {
        throw ValidationError("frame does not match the basis dimensions");
    }
    std::vector<double> out(mask_.area());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.pixels[order_[i]];
    return out;
}

}  // namespace tuneout

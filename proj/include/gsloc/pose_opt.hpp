#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <type_traits>
#include <vector>

#include "gsloc/grad.hpp"
#include "gsloc/loss.hpp"
#include "gsloc/renderer.hpp"

namespace gsloc {

struct OptimConfig {
    double lr_q = 5e-4;
    double lr_t = 1e-3;
    double weight_decay = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int min_iters = 100;
    int patience = 20;
    int max_iters = 500;

    void validate() const {
        if (!(lr_q > 0 && lr_t > 0 && weight_decay >= 0 && adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 &&
              adam_beta2 < 1 && adam_eps > 0 && min_iters > 0 && patience > 0 && max_iters > 0)) {
            throw Error(ErrorKind::InvalidArgument, "optimizer settings out of range");
        }
        if (min_iters > max_iters) throw Error(ErrorKind::InvalidArgument, "min_iters exceeds max_iters");
    }
};

/// Adam moments over the ambient (qw, qx, qy, qz, tx, ty, tz) vector.
template <typename S>
struct AdamState {
    Eigen::Matrix<S, 7, 1> m = Eigen::Matrix<S, 7, 1>::Zero();
    Eigen::Matrix<S, 7, 1> v = Eigen::Matrix<S, 7, 1>::Zero();
    int step = 0;
};

template <typename S>
Eigen::Matrix<S, 7, 1> pose_params(const Pose<S>& p) {
    Eigen::Matrix<S, 7, 1> x;
    x << p.rotation.coeffs(), p.translation;
    return x;
}

/// One Adam step with two parameter groups. Weight decay is added to the
/// gradient (L2 style). The quaternion is renormalized afterwards; moments are
/// kept as-is, since resetting them on projection destabilizes the iteration.
template <typename S>
Pose<S> adam_step(const Pose<S>& pose, const PoseGradient<S>& grad, AdamState<S>& state, const OptimConfig& cfg) {
    if (!grad.all_finite()) throw Error(ErrorKind::Numeric, "non-finite gradient passed to adam_step");
    Eigen::Matrix<S, 7, 1> x = pose_params(pose);
    const Eigen::Matrix<S, 7, 1> g = grad.stacked() + S(cfg.weight_decay) * x;
    const S b1 = S(cfg.adam_beta1), b2 = S(cfg.adam_beta2);
    ++state.step;
    state.m = b1 * state.m + (S(1) - b1) * g;
    state.v = b2 * state.v + (S(1) - b2) * g.cwiseProduct(g);
    const S bc1 = S(1) - S(std::pow(cfg.adam_beta1, state.step));
    const S bc2 = S(1) - S(std::pow(cfg.adam_beta2, state.step));
    for (int i = 0; i < 7; ++i) {
        const S lr = S(i < 4 ? cfg.lr_q : cfg.lr_t);
        const S m_hat = state.m[i] / bc1;
        const S v_hat = state.v[i] / bc2;
        x[i] -= lr * m_hat / (std::sqrt(v_hat) + S(cfg.adam_eps));
    }
    Pose<S> out;
    out.rotation = quat_normalize(Quaternion<S>::from_coeffs(x.template head<4>()));
    out.translation = x.template tail<3>();
    return out;
}

template <typename S>
struct PoseEstimate {
    Pose<S> pose;
    LossBreakdown<S> final_loss;
    int iterations_run = 0;
    std::vector<S> loss_history;
    bool converged = false;  // early stop fired (as opposed to hitting max_iters)
    bool failed = false;     // sequence sentinel: frame could not be localized
    std::string failure;
};

/// Called once per iteration with (iteration, loss breakdown).
template <typename S>
using IterationObserver = std::function<void(int, const LossBreakdown<S>&)>;

/// Gradient-based pose search: render, score, backpropagate, step. Returns the
/// pose with the lowest total loss seen.
template <typename S>
PoseEstimate<S> localize(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k, const DepthImage<S>& observed,
                         const Pose<S>& init, const OptimConfig& cfg, const LossWeights& weights,
                         const RenderConfig& render_cfg = {},
                         const std::type_identity_t<IterationObserver<S>>& observer = {}) {
    cfg.validate();
    weights.validate();
    require_unit(init.rotation, "localize");
    if (!observed.depth.same_shape(k.width, k.height)) {
        throw Error(ErrorKind::InvalidArgument, "observed depth does not match intrinsics");
    }

    PoseEstimate<S> est;
    est.pose = init;
    S best = std::numeric_limits<S>::infinity();
    Pose<S> current = init;
    AdamState<S> state;
    int stale = 0;

    for (int it = 0; it < cfg.max_iters; ++it) {
        const RenderOutput<S> out = render(scene, k, current, render_cfg);
        LossBreakdown<S> loss;
        try {
            loss = total_loss(out, observed, current, weights);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyOverlap) throw;
            if (it == 0) throw Error(ErrorKind::InitOutOfMap, "initial pose sees no mapped observed pixel");
            break;  // drifted out of the map; keep the best pose so far
        }
        est.iterations_run = it + 1;
        est.loss_history.push_back(loss.total);
        if (observer) observer(it, loss);

        if (loss.total < best) {
            best = loss.total;
            est.pose = current;
            est.final_loss = loss;
            stale = 0;
        } else {
            ++stale;
        }
        if (it + 1 >= cfg.min_iters && stale >= cfg.patience) {
            est.converged = true;
            break;
        }
        if (it + 1 == cfg.max_iters) break;

        PoseGradient<S> grad;
        try {
            grad = backward_pose(out, scene, k, current, loss.cotangents);
        } catch (const Error& e) {
            std::ostringstream os;
            os << "iteration " << it << ": " << e.what();
            throw Error(e.kind(), os.str());
        }
        const PoseGradient<S> reg = regularizer_gradient(current, weights);
        grad.d_q += reg.d_q;
        grad.d_t += reg.d_t;
        current = adam_step(current, grad, state, cfg);
    }
    // The cotangent maps are only needed inside the loop.
    est.final_loss.cotangents = {};
    return est;
}

enum class InitMode { GroundTruthPerFrame, PreviousEstimate };

/// Localizes each frame independently. In ground-truth mode frame i starts
/// from gt[i - 1] (the first frame from first_init); in previous-estimate mode it
/// starts from the last successful estimate. Failures leave a sentinel entry.
template <typename S>
std::vector<PoseEstimate<S>> localize_sequence(const GaussianScene<S>& scene, const CameraIntrinsics<S>& k,
                                               const std::type_identity_t<std::vector<DepthImage<S>>>& frames,
                                               InitMode mode,
                                               const std::type_identity_t<std::optional<std::vector<Pose<S>>>>& gt,
                                               const Pose<S>& first_init,
                                               const OptimConfig& cfg, const LossWeights& weights,
                                               const RenderConfig& render_cfg = {},
                                               const std::type_identity_t<
                                                   std::function<void(std::size_t, int, const LossBreakdown<S>&)>>&
                                                   observer = {}) {
    if (mode == InitMode::GroundTruthPerFrame && (!gt || gt->size() != frames.size())) {
        throw Error(ErrorKind::InvalidArgument, "ground-truth initialization needs one gt pose per frame");
    }
    std::vector<PoseEstimate<S>> out;
    out.reserve(frames.size());
    Pose<S> prev = first_init;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        Pose<S> init = prev;
        if (mode == InitMode::GroundTruthPerFrame) init = i == 0 ? first_init : (*gt)[i - 1];
        IterationObserver<S> frame_observer;
        if (observer) frame_observer = [&, i](int it, const LossBreakdown<S>& l) { observer(i, it, l); };
        try {
            out.push_back(localize(scene, k, frames[i], init, cfg, weights, render_cfg, frame_observer));
            prev = out.back().pose;
        } catch (const Error& e) {
            PoseEstimate<S> failed;
            failed.pose = init;
            failed.failed = true;
            failed.failure = e.what();
            out.push_back(std::move(failed));
        }
    }
    return out;
}

} // namespace gsloc

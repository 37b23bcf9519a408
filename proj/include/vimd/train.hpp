#pragma once

// AdamW with decoupled weight decay, the masked L1 training objective
// (full resolution + 0.5-weighted coarse term) and the training loop.

#include "vimd/core.hpp"
#include "vimd/data.hpp"
#include "vimd/metrics.hpp"
#include "vimd/model.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace vimd {

struct AdamW {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    long t = 0;

    void step(ParamStore& ps) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (auto& [name, e] : ps.entries()) {
            if (e.m.size() == 0) {
                e.m = Matrix::Zero(e.value.rows(), e.value.cols());
                e.v = Matrix::Zero(e.value.rows(), e.value.cols());
            }
            e.m = beta1 * e.m + (1.0 - beta1) * e.grad;
            e.v = beta2 * e.v + (1.0 - beta2) * e.grad.cwiseProduct(e.grad);
            Matrix update = (e.m / bc1).array() / ((e.v / bc2).array().sqrt() + eps);
            e.value -= lr * (update + weight_decay * e.value);
        }
    }
};

namespace detail {

struct MaskedTarget {
    Matrix values;  // n x 1
    Matrix mask;    // n x 1, 0/1
    double count = 0;
};

inline MaskedTarget full_target(const DisparityMap& gt) {
    const Eigen::Index h = gt.values.rows(), w = gt.values.cols();
    MaskedTarget t;
    t.values = Matrix::Zero(h * w, 1);
    t.mask = Matrix::Zero(h * w, 1);
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c)
            if (gt.valid(r, c)) {
                t.values(r * w + c, 0) = gt.values(r, c);
                t.mask(r * w + c, 0) = 1.0;
            }
    t.count = t.mask.sum();
    return t;
}

inline MaskedTarget coarse_target(const DisparityMap& gt, int factor) {
    const Eigen::Index gh = gt.values.rows() / factor, gw = gt.values.cols() / factor;
    MaskedTarget t;
    t.values = Matrix::Zero(gh * gw, 1);
    t.mask = Matrix::Zero(gh * gw, 1);
    for (Eigen::Index r = 0; r < gh; ++r)
        for (Eigen::Index c = 0; c < gw; ++c) {
            const Eigen::Index sr = r * factor + factor / 2, sc = c * factor + factor / 2;
            if (gt.valid(sr, sc)) {
                t.values(r * gw + c, 0) = gt.values(sr, sc) / factor;
                t.mask(r * gw + c, 0) = 1.0;
            }
        }
    t.count = t.mask.sum();
    return t;
}

inline ad::Var masked_l1(const ad::Var& pred, const MaskedTarget& target) {
    ad::Var diff = ad::abs(ad::sub(pred, ad::constant(target.values)));
    ad::Var masked = ad::mul(diff, ad::constant(target.mask));
    return ad::scale(ad::sum(masked), 1.0 / std::max(target.count, 1.0));
}

}  // namespace detail

// masked L1 at full resolution plus 0.5-weighted masked L1 on the coarse estimate
inline ad::Var disparity_loss(const VimStereoModel::ForwardResult& result,
                              const DisparityMap& gt, int factor) {
    detail::MaskedTarget full = detail::full_target(gt);
    detail::MaskedTarget coarse = detail::coarse_target(gt, factor);
    require(full.count > 0, "loss: ground truth has no valid pixels");
    ad::Var loss = detail::masked_l1(result.full, full);
    if (coarse.count > 0)
        loss = ad::add(loss, ad::scale(detail::masked_l1(result.coarse, coarse), 0.5));
    return loss;
}

struct TrainLogRow {
    long iter = 0;
    double loss = 0;
    double epe_train = 0;
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

inline std::vector<TrainLogRow> train_model(VimStereoModel& model,
                                            const std::vector<StereoSample>& samples, long iters,
                                            double lr, int batch, unsigned seed,
                                            const TrainCallback& on_iter = nullptr) {
    require(!samples.empty(), "train: no samples");
    for (const auto& s : samples)
        require(s.gt_disparity.has_value(), "train: every sample needs ground truth");
    AdamW opt;
    opt.lr = lr;
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    const int factor = model.config().upsample_factor;

    std::vector<TrainLogRow> log;
    std::map<std::string, Matrix> grad_acc;
    for (long it = 0; it < iters; ++it) {
        double loss_sum = 0, epe_sum = 0;
        grad_acc.clear();
        for (int k = 0; k < batch; ++k) {
            const StereoSample& s = samples[pick(rng)];
            auto result = model.forward_graph(s.left, s.right, true);
            ad::Var loss = disparity_loss(result, *s.gt_disparity, factor);
            ad::backward(loss);
            model.params().collect_grads();
            for (auto& [name, e] : model.params().entries()) {
                auto [itacc, fresh] = grad_acc.try_emplace(name, e.grad);
                if (!fresh) itacc->second += e.grad;
            }
            loss_sum += loss.value()(0, 0);

            using RowMajor =
                Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            RowMajor flat = result.full.value();
            DisparityMap pred = DisparityMap::dense(Eigen::Map<RowMajor>(flat.data(), s.left.h, s.left.w));
            epe_sum += epe(pred, *s.gt_disparity);
        }
        const double loss_avg = loss_sum / batch;
        if (!std::isfinite(loss_avg))
            throw NumericError("NaN loss at iteration " + std::to_string(it));
        for (auto& [name, e] : model.params().entries()) e.grad = grad_acc.at(name) / batch;
        opt.step(model.params());

        TrainLogRow row{it, loss_avg, epe_sum / batch};
        if (on_iter) on_iter(row);
        log.push_back(row);
    }
    return log;
}

}  // namespace vimd

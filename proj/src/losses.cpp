#include "cafenet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cafenet/nn/ops.hpp"

namespace cafenet::losses {

namespace {

void require_label_shape(const nn::Var& pred, const nn::Tensor& label, const char* op) {
    require(pred->shape() == label.shape, ErrorKind::Shape,
            std::string(op) + ": prediction " + pred->shape().str() + " vs label " +
                label.shape.str());
}

void require_binary(const nn::Tensor& label, const char* op) {
    for (double v : label.data)
        require(v == 0.0 || v == 1.0, ErrorKind::InvalidInput,
                std::string(op) + ": edge label must be binary");
}

// Sum of squared residuals against a constant target.
nn::Var squared_error_sum(const nn::Var& p, const nn::Tensor& target) {
    require_label_shape(p, target, "seg_loss");
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double r = p->value.data[i] - target.data[i];
        total += r * r;
    }
    auto t = std::make_shared<nn::Tensor>(target);
    return nn::make_node(nn::Tensor(nn::Shape{}, total), {p}, [t](nn::Node& self) {
        const nn::Var& in = self.inputs[0];
        auto& d = in->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += 2.0 * (in->value.data[i] - t->data[i]) * self.grad[0];
    });
}

void require_finite(double v, const char* name) {
    require(std::isfinite(v), ErrorKind::Numeric, std::string("non-finite loss component: ") + name);
}

} // namespace

nn::Var seg_loss(const std::vector<SegTerms>& queries, bool use_msmr, LossReport* report) {
    require(!queries.empty(), ErrorKind::InvalidInput, "seg_loss: no queries");
    std::vector<nn::Var> terms;
    double pixels = 0.0;
    const std::size_t splits = use_msmr ? queries.front().splits.size() : 0;
    for (const auto& q : queries) {
        require(!use_msmr || q.splits.size() == splits, ErrorKind::Shape,
                "seg_loss: inconsistent split count across queries");
        pixels = static_cast<double>(q.target.size());
    }
    const double norm = 1.0 / (static_cast<double>(queries.size()) * pixels);

    double full_sum = 0.0;
    std::vector<double> split_sums(splits, 0.0);
    for (const auto& q : queries) {
        require(static_cast<double>(q.target.size()) == pixels, ErrorKind::Shape,
                "seg_loss: queries differ in size");
        auto full = squared_error_sum(q.full, q.target);
        full_sum += nn::scalar(full);
        terms.push_back(full);
        for (std::size_t k = 0; k < splits; ++k) {
            auto term = squared_error_sum(q.splits[k], q.target);
            split_sums[k] += nn::scalar(term);
            terms.push_back(term);
        }
    }
    if (report) {
        report->seg_full = full_sum * norm;
        report->seg_splits.clear();
        for (double s : split_sums)
            report->seg_splits.push_back(s * norm);
    }
    auto loss = nn::scale(nn::sum_scalars(terms), norm);
    if (report)
        report->l_seg = nn::scalar(loss);
    return loss;
}

nn::Var ce_sum(const nn::Var& prediction, const nn::Tensor& label, bool balanced, double eps) {
    require_label_shape(prediction, label, "ce_loss");
    require_binary(label, "ce_loss");
    double positives = 0.0;
    for (double v : label.data)
        positives += v;
    const double total_px = static_cast<double>(label.size());
    const double w_pos = balanced ? (total_px - positives) / total_px : 1.0;
    const double w_neg = balanced ? positives / total_px : 1.0;

    double total = 0.0;
    for (std::size_t i = 0; i < label.size(); ++i) {
        const double p = std::clamp(prediction->value.data[i], eps, 1.0 - eps);
        total -= label.data[i] > 0.5 ? w_pos * std::log(p) : w_neg * std::log(1.0 - p);
    }
    auto y = std::make_shared<nn::Tensor>(label);
    return nn::make_node(nn::Tensor(nn::Shape{}, total), {prediction},
                         [y, eps, w_pos, w_neg](nn::Node& self) {
        const nn::Var& in = self.inputs[0];
        auto& d = in->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double raw = in->value.data[i];
            if (raw < eps || raw > 1.0 - eps)
                continue; // clamped: zero gradient
            d[i] += self.grad[0] *
                    (y->data[i] > 0.5 ? -w_pos / raw : w_neg / (1.0 - raw));
        }
    });
}

nn::Var dice_ratio(const nn::Var& prediction, const nn::Tensor& label, double eps) {
    require_label_shape(prediction, label, "dice_loss");
    double sq_pred = 0.0, sq_label = 0.0, overlap = 0.0;
    for (std::size_t i = 0; i < label.size(); ++i) {
        const double p = prediction->value.data[i];
        sq_pred += p * p;
        sq_label += label.data[i] * label.data[i];
        overlap += p * label.data[i];
    }
    const double numerator = sq_pred + sq_label;
    const double denominator = 2.0 * overlap + eps;
    auto y = std::make_shared<nn::Tensor>(label);
    return nn::make_node(nn::Tensor(nn::Shape{}, numerator / denominator), {prediction},
                         [y, numerator, denominator](nn::Node& self) {
        const nn::Var& in = self.inputs[0];
        auto& d = in->grad_buffer();
        const double g = self.grad[0];
        const double inv = 1.0 / denominator;
        const double coeff = numerator * inv * inv;
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += g * (2.0 * in->value.data[i] * inv - 2.0 * y->data[i] * coeff);
    });
}

nn::Var ce_loss(const std::vector<EdgeTerms>& queries, bool balanced, double* raw) {
    require(!queries.empty(), ErrorKind::InvalidInput, "ce_loss: no queries");
    std::vector<nn::Var> terms;
    for (const auto& q : queries)
        terms.push_back(ce_sum(q.prediction, q.label, balanced));
    auto sum = nn::sum_scalars(terms);
    if (raw)
        *raw = nn::scalar(sum);
    return nn::scale(sum, 1.0 / static_cast<double>(queries.size()));
}

nn::Var dice_loss(const std::vector<EdgeTerms>& queries, double* raw) {
    require(!queries.empty(), ErrorKind::InvalidInput, "dice_loss: no queries");
    std::vector<nn::Var> terms;
    for (const auto& q : queries)
        terms.push_back(dice_ratio(q.prediction, q.label));
    auto sum = nn::sum_scalars(terms);
    if (raw)
        *raw = nn::scalar(sum);
    return nn::scale(sum, 1.0 / static_cast<double>(queries.size()));
}

nn::Var total_loss(const nn::Var& seg, const nn::Var& ce, const nn::Var& dice) {
    total_loss(nn::scalar(seg), nn::scalar(ce), nn::scalar(dice));
    return nn::sum_scalars({seg, ce, dice});
}

double total_loss(double seg, double ce, double dice) {
    require_finite(seg, "l_seg");
    require_finite(ce, "l_ce");
    require_finite(dice, "l_dice");
    return seg + ce + dice;
}

} // namespace cafenet::losses

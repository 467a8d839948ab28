#include "pseudoseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pseudoseg {

namespace {

void check_inputs(const std::vector<double>& p, const std::vector<double>& t, const char* what) {
    if (p.size() != t.size()) throw std::invalid_argument(std::string(what) + ": size mismatch");
    if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
    for (double v : p)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": NaN/inf in prediction");
    for (double v : t)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": NaN/inf in target");
}

double bce_impl(const std::vector<double>& p, const std::vector<double>& t) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        s -= t[i] * std::log(p[i] + kBceClamp) + (1.0 - t[i]) * std::log(1.0 - p[i] + kBceClamp);
    return s / static_cast<double>(p.size());
}

double dice_impl(const std::vector<double>& p, const std::vector<double>& t) {
    double sp = 0.0, st = 0.0, spt = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        sp += p[i];
        st += t[i];
        spt += p[i] * t[i];
    }
    return 1.0 - (2.0 * spt + kDiceSmooth) / (sp + st + kDiceSmooth);
}

}  // namespace

double bce_loss(const ProbMap& p, const ProbMap& target) {
    check_inputs(p.values, target.values, "bce_loss");
    return bce_impl(p.values, target.values);
}

double dice_loss(const ProbMap& p, const ProbMap& target) {
    check_inputs(p.values, target.values, "dice_loss");
    return dice_impl(p.values, target.values);
}

double seg_loss(const ProbMap& p, const ProbMap& target) {
    check_inputs(p.values, target.values, "seg_loss");
    return bce_impl(p.values, target.values) + dice_impl(p.values, target.values);
}

LossBreakdown total_loss(double l_s, double l_u, double l_c, const LossWeights& w) {
    if (!(w.lambda_u >= 0.0) || !(w.lambda_c >= 0.0) || !std::isfinite(w.lambda_u) ||
        !std::isfinite(w.lambda_c))
        throw std::invalid_argument("total_loss: weights must be finite and non-negative");
    LossBreakdown b;
    b.l_s = l_s;
    b.l_u = l_u;
    b.l_c = l_c;
    b.total = l_s + w.lambda_u * l_u + w.lambda_c * l_c;
    return b;
}

ad::NodePtr bce_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target) {
    check_inputs(p->value.data, target.data, "bce_node");
    Tensor y({1});
    y.data[0] = bce_impl(p->value.data, target.data);
    Tensor tgt = target;
    return t.make(std::move(y), {p}, [p, tgt = std::move(tgt)](ad::Node& n) {
        if (!p->requires_grad) return;
        const double g = n.grad.data[0] / static_cast<double>(p->value.numel());
        for (size_t i = 0; i < p->value.numel(); ++i) {
            const double pv = p->value.data[i], tv = tgt.data[i];
            p->grad.data[i] += g * (-tv / (pv + kBceClamp) + (1.0 - tv) / (1.0 - pv + kBceClamp));
        }
    });
}

ad::NodePtr dice_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target) {
    check_inputs(p->value.data, target.data, "dice_node");
    double sp = 0.0, st = 0.0, spt = 0.0;
    for (size_t i = 0; i < p->value.numel(); ++i) {
        sp += p->value.data[i];
        st += target.data[i];
        spt += p->value.data[i] * target.data[i];
    }
    Tensor y({1});
    y.data[0] = 1.0 - (2.0 * spt + kDiceSmooth) / (sp + st + kDiceSmooth);
    Tensor tgt = target;
    return t.make(std::move(y), {p}, [p, tgt = std::move(tgt), sp, st, spt](ad::Node& n) {
        if (!p->requires_grad) return;
        const double denom = sp + st + kDiceSmooth;
        const double num = 2.0 * spt + kDiceSmooth;
        const double g = n.grad.data[0];
        for (size_t i = 0; i < p->value.numel(); ++i) {
            // d/dp_i [1 - num/denom] = -(2 t_i denom - num) / denom^2
            p->grad.data[i] += g * (num - 2.0 * tgt.data[i] * denom) / (denom * denom);
        }
    });
}

ad::NodePtr seg_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target) {
    return ad::add(t, bce_node(t, p, target), dice_node(t, p, target));
}

}  // namespace pseudoseg

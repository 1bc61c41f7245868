#pragma once

// Central finite-difference verification of analytic gradients.
// The function under test rebuilds its tape from plain matrices on every call,
// so the numeric path never reuses the analytic one.

#include <functional>
#include <string>
#include <vector>

#include "glre/autodiff.hpp"

namespace glre::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_input;  // "input<k>[i,j]"
    bool passed(double tol) const { return max_rel_error <= tol; }
};

// f receives a fresh tape plus one leaf Var per input matrix and returns a
// scalar (1x1) Var. Gradients of the scalar w.r.t. every input entry are
// compared against central differences with the given step.
inline GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    std::vector<Mat> inputs, double step = 1e-5) {
    auto eval = [&](const std::vector<Mat>& xs) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const Mat& x : xs) vars.push_back(tape.leaf(x));
        Var out = f(tape, vars);
        if (out.value().rows() != 1 || out.value().cols() != 1)
            throw ConfigError("grad_check: function under test must return a scalar");
        return out.value()(0, 0);
    };

    // Analytic pass.
    Tape tape;
    std::vector<Var> vars;
    for (const Mat& x : inputs) vars.push_back(tape.leaf(x));
    Var out = f(tape, vars);
    tape.backward(out);
    std::vector<Mat> analytic;
    analytic.reserve(vars.size());
    for (const Var& v : vars) analytic.push_back(tape.grad(v));

    GradCheckReport report;
    for (size_t k = 0; k < inputs.size(); ++k) {
        for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
                const double saved = inputs[k](i, j);
                inputs[k](i, j) = saved + step;
                const double fp = eval(inputs);
                inputs[k](i, j) = saved - step;
                const double fm = eval(inputs);
                inputs[k](i, j) = saved;
                const double numeric = (fp - fm) / (2.0 * step);
                const double a = analytic[k](i, j);
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
                const double rel = std::abs(a - numeric) / denom;
                if (rel > report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_input = "input" + std::to_string(k) + "[" +
                                         std::to_string(i) + "," + std::to_string(j) + "]";
                }
            }
        }
    }
    return report;
}

}  // namespace glre::ad

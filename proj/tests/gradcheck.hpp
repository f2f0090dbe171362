#pragma once

// Central finite-difference gradient checker. The op under test is wrapped in
// a builder that recomputes the output from the current input data, the
// output is scalarized against a fixed random projection, and the analytic
// leaf gradients are compared against (f(x+h) - f(x-h)) / 2h elementwise.

#include <cmath>
#include <functional>
#include <vector>

#include "dapass/ops.hpp"
#include "dapass/rng.hpp"
#include "dapass/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Returns the max relative error between analytic and finite-difference
// gradients over all elements of all inputs.
inline double gradcheck(const std::function<dapass::TensorD(std::vector<dapass::TensorD>&)>& build,
                        std::vector<dapass::TensorD> inputs, uint64_t proj_seed = 99,
                        double step = 1e-5) {
    using dapass::TensorD;
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    TensorD out = build(inputs);
    dapass::Rng rng(proj_seed);
    TensorD proj = TensorD::rand_uniform(out.shape(), rng, -1.0, 1.0);
    dapass::backward(dapass::sum(dapass::mul(out, proj)));

    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        t.mutable_grad();
        analytic.push_back(t.grad());
    }

    auto eval = [&]() {
        TensorD o = build(inputs);
        double acc = 0.0;
        for (size_t i = 0; i < o.data().size(); ++i)
            acc += o.data()[i] * proj.data()[i];
        return acc;
    };

    double max_err = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        auto& data = inputs[k].mutable_data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + step;
            const double fp = eval();
            data[i] = orig - step;
            const double fm = eval();
            data[i] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            max_err = std::max(max_err, rel_err(analytic[k][i], fd));
        }
    }
    return max_err;
}

}  // namespace testutil

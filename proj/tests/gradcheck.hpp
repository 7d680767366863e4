#pragma once

// Central-difference gradient checking in double precision.

#include <doctest.h>

#include <functional>
#include <vector>

#include "jatp/autograd.hpp"

namespace gradcheck {

using jatp::ag::Var;

struct Result {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// `build` must construct a fresh scalar graph from the current leaf values.
inline Result run(const std::vector<Var<double>>& leaves,
                  const std::function<Var<double>()>& build, double h = 1e-4) {
    for (auto& l : leaves) {
        l->ensure_grad();
        l->zero_grad();
    }
    auto root = build();
    jatp::ag::backward(root);
    Result res;
    for (auto& l : leaves) {
        for (std::size_t i = 0; i < l->value.size(); ++i) {
            const double keep = l->value[i];
            l->value[i] = keep + h;
            const double fp = build()->value[0];
            l->value[i] = keep - h;
            const double fm = build()->value[0];
            l->value[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = l->grad[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

inline void expect_ok(const std::vector<Var<double>>& leaves,
                      const std::function<Var<double>()>& build,
                      double tol = 1e-4, double h = 1e-4) {
    auto r = run(leaves, build, h);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_err <= tol);
}

}  // namespace gradcheck

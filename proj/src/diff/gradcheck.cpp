#include "mvgs/diff/gradcheck.hpp"

#include <cmath>
#include <string>

namespace mvgs::diff {

double check_gradient(const ScalarFn& f, const NDArray& x, double step) {
    NDArray analytic;
    {
        Tape t;
        Value xv = t.leaf(x, true);
        Value y = f(t, xv);
        if (!std::isfinite(y.val()[0])) throw NumericError("check_gradient: non-finite at base point");
        t.backward(y);
        analytic = xv.node()->has_grad ? xv.grad() : NDArray(x.shape, 0.0);
    }

    auto eval = [&](const NDArray& probe, int64_t coord) {
        Tape t;
        Value xv = t.leaf(probe, false);
        double v = f(t, xv).val()[0];
        if (!std::isfinite(v))
            throw NumericError("check_gradient: non-finite probe at coordinate " + std::to_string(coord));
        return v;
    };

    double max_err = 0.0;
    NDArray probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = eval(probe, i);
        probe[i] = orig - step;
        const double fm = eval(probe, i);
        probe[i] = orig;
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace mvgs::diff

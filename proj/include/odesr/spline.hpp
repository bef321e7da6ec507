#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace odesr {

// Natural cubic spline through (x_k, y_k); x strictly increasing.
class NaturalCubicSpline {
public:
    NaturalCubicSpline(std::span<double const> x, std::span<double const> y)
        : x_(x.begin(), x.end())
        , y_(y.begin(), y.end())
    {
        auto const n = x_.size();
        if (n < 2 || y_.size() != n) {
            throw std::invalid_argument("spline needs at least two matching points");
        }
        m_.assign(n, 0.0);
        if (n == 2) {
            return;
        }
        // Thomas algorithm on the interior second derivatives (m_0 = m_{n-1} = 0).
        std::vector<double> c(n, 0.0), d(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            double h0 = x_[i] - x_[i - 1];
            double h1 = x_[i + 1] - x_[i];
            double a = h0;
            double b = 2.0 * (h0 + h1);
            double cc = h1;
            double rhs = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
            double denom = b - a * c[i - 1];
            c[i] = cc / denom;
            d[i] = (rhs - a * d[i - 1]) / denom;
        }
        for (std::size_t i = n - 1; i-- > 1;) {
            m_[i] = d[i] - c[i] * m_[i + 1];
        }
    }

    double operator()(double t) const
    {
        auto const n = x_.size();
        std::size_t k;
        if (t <= x_.front()) {
            k = 0;
        } else if (t >= x_.back()) {
            k = n - 2;
        } else {
            k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), t) - x_.begin()) - 1;
        }
        double h = x_[k + 1] - x_[k];
        double a = (x_[k + 1] - t) / h;
        double b = (t - x_[k]) / h;
        return a * y_[k] + b * y_[k + 1] + ((a * a * a - a) * m_[k] + (b * b * b - b) * m_[k + 1]) * h * h / 6.0;
    }

private:
    std::vector<double> x_, y_, m_;
};

} // namespace odesr

#include "countsplit/rng.hpp"

#include <cmath>
#include <limits>

namespace countsplit {

std::uint64_t uniform_index(Engine& engine, std::uint64_t bound) {
    if (bound <= 1) {
        return 0;
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % bound);
    while (true) {
        const std::uint64_t x = engine();
        if (x < limit) {
            return x % bound;
        }
    }
}

namespace {

// Stirling series correction log(k!) - [(k + 0.5) log(k + 1) - (k + 1) + 0.5 log(2 pi)].
double stirling_tail(std::uint64_t k) {
    static constexpr double table[10] = {
        0.08106146679532726, 0.04134069595540929, 0.02767792568499834, 0.02079067210376509,
        0.01664469118982119, 0.01387612882307075, 0.01189670994589177, 0.01041126526197209,
        0.009255462182712733, 0.008330563433362871,
    };
    if (k < 10) {
        return table[k];
    }
    const double r = 1.0 / static_cast<double>(k + 1);
    const double r2 = r * r;
    return (1.0 / 12 - (1.0 / 360 - (1.0 / 1260) * r2) * r2) * r;
}

std::uint64_t binomial_inversion(Engine& engine, std::uint64_t n, double p) {
    const double q = 1.0 - p;
    const double s = p / q;
    const double a = static_cast<double>(n + 1) * s;
    const double r0 = std::exp(static_cast<double>(n) * std::log(q));
    while (true) {
        double u = uniform_open01(engine);
        double r = r0;
        std::uint64_t k = 0;
        while (u > r) {
            u -= r;
            ++k;
            if (k > n) {
                break;
            }
            r *= a / static_cast<double>(k) - s;
        }
        if (k <= n) {
            return k;
        }
        // Round-off exhausted the mass; redraw.
    }
}

std::uint64_t binomial_btrd(Engine& engine, std::uint64_t n_trials, double p) {
    const double n = static_cast<double>(n_trials);
    const double q = 1.0 - p;
    const std::int64_t m = static_cast<std::int64_t>(std::floor((n + 1) * p));
    const double r = p / q;
    const double nr = (n + 1) * r;
    const double npq = n * p * q;
    const double sq = std::sqrt(npq);
    const double b = 1.15 + 2.53 * sq;
    const double a = -0.0873 + 0.0248 * b + 0.01 * p;
    const double c = n * p + 0.5;
    const double alpha = (2.83 + 5.1 / b) * sq;
    const double v_r = 0.92 - 4.2 / b;
    const double u_rv_r = 0.86 * v_r;
    const std::int64_t n_int = static_cast<std::int64_t>(n_trials);

    while (true) {
        double v = uniform_open01(engine);
        double u;
        if (v <= u_rv_r) {
            u = v / v_r - 0.43;
            const double kd = std::floor((2 * a / (0.5 - std::abs(u)) + b) * u + c);
            if (kd >= 0 && kd <= n) {
                return static_cast<std::uint64_t>(kd);
            }
            continue;
        }

        if (v >= v_r) {
            u = uniform_open01(engine) - 0.5;
        } else {
            u = v / v_r - 0.93;
            u = std::copysign(0.5, u) - u;
            v = v_r * uniform_open01(engine);
        }

        const double us = 0.5 - std::abs(u);
        const double kd = std::floor((2 * a / us + b) * u + c);
        if (kd < 0 || kd > n) {
            continue;
        }
        const std::int64_t k = static_cast<std::int64_t>(kd);
        v *= alpha / (a / (us * us) + b);
        const std::int64_t km = std::abs(k - m);

        if (km <= 15) {
            double f = 1.0;
            if (m < k) {
                for (std::int64_t i = m + 1; i <= k; ++i) {
                    f *= nr / static_cast<double>(i) - r;
                }
            } else if (m > k) {
                for (std::int64_t i = k + 1; i <= m; ++i) {
                    v *= nr / static_cast<double>(i) - r;
                }
            }
            if (v <= f) {
                return static_cast<std::uint64_t>(k);
            }
            continue;
        }

        v = std::log(v);
        const double kmd = static_cast<double>(km);
        const double rho = (kmd / npq) * (((kmd / 3 + 0.625) * kmd + 1.0 / 6) / npq + 0.5);
        const double t = -kmd * kmd / (2 * npq);
        if (v < t - rho) {
            return static_cast<std::uint64_t>(k);
        }
        if (v > t + rho) {
            continue;
        }

        const double nm = static_cast<double>(n_int - m + 1);
        const double h = (static_cast<double>(m) + 0.5) * std::log((static_cast<double>(m) + 1) / (r * nm))
            + stirling_tail(static_cast<std::uint64_t>(m)) + stirling_tail(static_cast<std::uint64_t>(n_int - m));
        const double nk = static_cast<double>(n_int - k + 1);
        const double bound = h + (n + 1) * std::log(nm / nk)
            + (static_cast<double>(k) + 0.5) * std::log(nk * r / (static_cast<double>(k) + 1))
            - stirling_tail(static_cast<std::uint64_t>(k)) - stirling_tail(static_cast<std::uint64_t>(n_int - k));
        if (v <= bound) {
            return static_cast<std::uint64_t>(k);
        }
    }
}

}

std::uint64_t sample_binomial(Engine& engine, std::uint64_t trials, double prob) {
    if (trials == 0 || prob <= 0.0) {
        return 0;
    }
    if (prob >= 1.0) {
        return trials;
    }
    const bool flip = prob > 0.5;
    const double p = flip ? 1.0 - prob : prob;
    const std::uint64_t draw = (static_cast<double>(trials) * p < 30.0)
        ? binomial_inversion(engine, trials, p)
        : binomial_btrd(engine, trials, p);
    return flip ? trials - draw : draw;
}

}

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace voltcoord {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GridFormatError : Error {
    using Error::Error;
};

// Aggregated invariant failures; `failures` lists every violation found.
struct ValidationError : Error {
    std::vector<std::string> failures;
    explicit ValidationError(std::vector<std::string> f)
        : Error(join(f)), failures(std::move(f)) {}
    static std::string join(const std::vector<std::string>& f) {
        std::string s = "network validation failed:";
        for (const auto& e : f) s += "\n  - " + e;
        return s;
    }
};

struct NonConvergence : Error {
    int iterations = 0;
    double residual = 0.0;
    NonConvergence(int it, double res)
        : Error("power flow did not converge after " + std::to_string(it) +
                " iterations, residual " + std::to_string(res)),
          iterations(it), residual(res) {}
};

struct SingularJacobian : Error {
    using Error::Error;
};

struct FixedPointDivergence : Error {
    double oscillation = 0.0;
    explicit FixedPointDivergence(double amp)
        : Error("voltage/reactive control fixed point diverged, oscillation amplitude " +
                std::to_string(amp)),
          oscillation(amp) {}
};

struct OracleTooLarge : Error {
    using Error::Error;
};

struct UnknownLink : Error {
    using Error::Error;
};

struct StaleData : Error {
    using Error::Error;
};

namespace defaults {
inline constexpr double s_base_mva = 10.0;
inline constexpr double v_min_pu = 0.90;
inline constexpr double v_max_pu = 1.10;
inline constexpr double pf_tolerance = 1e-8;
inline constexpr int pf_max_iterations = 50;
inline constexpr double picard_tolerance = 1e-6;
inline constexpr int picard_max_iterations = 100;
inline constexpr double picard_damping = 0.5;
inline constexpr int sensitivity_max_iterations = 30;
inline constexpr double sensitivity_min_improvement = 1e-5;
inline constexpr int oracle_grid_points = 21;
inline constexpr int heartbeat_fallback_threshold = 3;  // missed periods
inline constexpr int target_validity_cycles = 2;
inline constexpr int oltc_quiescence_limit = 20;
}  // namespace defaults

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace voltcoord

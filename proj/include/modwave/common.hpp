#pragma once

#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mw {

using cd = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
constexpr cd kI{0.0, 1.0};

// Error categories map onto the CLI exit codes: config -> 64, resolution -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
public:
    using Error::Error;
};
class SolverError : public Error {
public:
    using Error::Error;
};
class ResolutionError : public Error {
public:
    using Error::Error;
};

void set_threads(int n);
int threads();

// Runs f(i) for i in [0, n) over the configured worker count. Each index must
// write only its own output slot so results do not depend on the schedule.
void parallel_for(int n, const std::function<void(int)>& f);

inline int floor_div(int a, int b) {
    int q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}
inline int pos_mod(int a, int b) {
    int r = a % b;
    return r < 0 ? r + b : r;
}

}  // namespace mw

#pragma once

#include <json.hpp>

#include "modwave/common.hpp"

namespace mw {

enum class SystemKind { KdV, Parabolic };

// Polynomial flux up to cubic order:
// f_i(u) = A_ij u_j + B_ijk u_j u_k + C_ijkl u_j u_k u_l.
struct Flux {
    int d = 1;
    RMat A;
    std::vector<double> B;
    std::vector<double> C;

    explicit Flux(int dim = 1);
    double& b(int i, int j, int k) { return B[(i * d + j) * d + k]; }
    double& c(int i, int j, int k, int l) { return C[((i * d + j) * d + k) * d + l]; }
    double b(int i, int j, int k) const { return B[(i * d + j) * d + k]; }
    double c(int i, int j, int k, int l) const { return C[((i * d + j) * d + k) * d + l]; }
    RVec eval(const RVec& u) const;
    RMat jacobian(const RVec& u) const;
    bool is_linear() const;
};

struct SystemSpec {
    SystemKind kind = SystemKind::KdV;
    std::string name = "kdv";
    int d = 1;
    Flux flux;
    RMat D;
    // speed assigned to the constant family, omega = -k * c_ref
    double c_ref = 0.0;
};

SystemSpec kdv_system();
SystemSpec burgers_system(double nu);
SystemSpec linear_system(const RMat& A, const RMat& D);
// d = 2 flux (1 + beta |u|^2) J u + gamma |u|^2 u with J = [[0,1],[-1,0]], D = I.
// Exact rotating waves exist for k > 1/(2 pi) at zero mean.
SystemSpec rotation_system(double beta, double gamma);
// d = 2 quadratic flux (u1^2/2 + u2, u1 u2 / 2 + u1) with diffusion D.
SystemSpec quadratic2_system(const RMat& D);

SystemSpec system_from_json(const nlohmann::json& j);
nlohmann::json system_to_json(const SystemSpec& s);

void validate(const SystemSpec& s);

}  // namespace mw

#include "modwave/system.hpp"

#include <cmath>

namespace mw {

Flux::Flux(int dim) : d(dim), A(RMat::Zero(dim, dim)), B(dim * dim * dim, 0.0), C(dim * dim * dim * dim, 0.0) {}

RVec Flux::eval(const RVec& u) const {
    RVec f = A * u;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k) {
                f(i) += b(i, j, k) * u(j) * u(k);
                for (int l = 0; l < d; ++l) f(i) += c(i, j, k, l) * u(j) * u(k) * u(l);
            }
    return f;
}

RMat Flux::jacobian(const RVec& u) const {
    RMat J = A;
    for (int i = 0; i < d; ++i)
        for (int m = 0; m < d; ++m)
            for (int k = 0; k < d; ++k) {
                J(i, m) += (b(i, m, k) + b(i, k, m)) * u(k);
                for (int l = 0; l < d; ++l)
                    J(i, m) += (c(i, m, k, l) + c(i, k, m, l) + c(i, k, l, m)) * u(k) * u(l);
            }
    return J;
}

bool Flux::is_linear() const {
    for (double v : B)
        if (v != 0.0) return false;
    for (double v : C)
        if (v != 0.0) return false;
    return true;
}

SystemSpec kdv_system() {
    SystemSpec s;
    s.kind = SystemKind::KdV;
    s.name = "kdv";
    s.d = 1;
    s.flux = Flux(1);
    s.flux.b(0, 0, 0) = 0.5;
    s.D = RMat::Zero(1, 1);
    return s;
}

SystemSpec burgers_system(double nu) {
    SystemSpec s;
    s.kind = SystemKind::Parabolic;
    s.name = "burgers";
    s.d = 1;
    s.flux = Flux(1);
    s.flux.b(0, 0, 0) = 0.5;
    s.D = RMat::Constant(1, 1, nu);
    return s;
}

SystemSpec linear_system(const RMat& A, const RMat& D) {
    SystemSpec s;
    s.kind = SystemKind::Parabolic;
    s.name = "linear";
    s.d = static_cast<int>(A.rows());
    s.flux = Flux(s.d);
    s.flux.A = A;
    s.D = D;
    return s;
}

SystemSpec rotation_system(double beta, double gamma) {
    SystemSpec s;
    s.kind = SystemKind::Parabolic;
    s.name = "rotation";
    s.d = 2;
    s.flux = Flux(2);
    s.flux.A << 0.0, 1.0, -1.0, 0.0;
    // |u|^2 u terms: u_j u_j u_l summed over j
    for (int j = 0; j < 2; ++j) {
        s.flux.c(0, j, j, 1) += beta;
        s.flux.c(1, j, j, 0) -= beta;
        s.flux.c(0, j, j, 0) += gamma;
        s.flux.c(1, j, j, 1) += gamma;
    }
    s.D = RMat::Identity(2, 2);
    return s;
}

SystemSpec quadratic2_system(const RMat& D) {
    SystemSpec s;
    s.kind = SystemKind::Parabolic;
    s.name = "quadratic2";
    s.d = 2;
    s.flux = Flux(2);
    s.flux.A << 0.0, 1.0, 1.0, 0.0;
    s.flux.b(0, 0, 0) = 0.5;
    s.flux.b(1, 0, 1) = 0.5;
    s.D = D;
    return s;
}

namespace {

RMat mat_from_json(const nlohmann::json& j, int d, const char* what) {
    if (!j.is_array() || static_cast<int>(j.size()) != d) throw ConfigError(std::string(what) + ": expected a d x d array");
    RMat m(d, d);
    for (int r = 0; r < d; ++r) {
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != d) throw ConfigError(std::string(what) + ": bad row");
        for (int c = 0; c < d; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

nlohmann::json mat_to_json(const RMat& m) {
    nlohmann::json j = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

}  // namespace

void validate(const SystemSpec& s) {
    if (s.d < 1) throw ConfigError("system dimension must be positive");
    if (s.flux.d != s.d) throw ConfigError("flux dimension mismatch");
    if (s.kind == SystemKind::KdV) {
        if (s.d != 1) throw ConfigError("KdV is scalar");
        return;
    }
    if (s.D.rows() != s.d || s.D.cols() != s.d) throw ConfigError("diffusion matrix has the wrong size");
    if ((s.D - s.D.transpose()).cwiseAbs().maxCoeff() > 1e-14) throw ConfigError("diffusion matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<RMat> es(s.D);
    if (es.eigenvalues().minCoeff() <= 0.0) throw ConfigError("diffusion matrix must be positive definite");
}

SystemSpec system_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("system must be an object");
    std::string name = j.value("name", std::string());
    SystemSpec s;
    try {
        if (name == "kdv") {
            s = kdv_system();
        } else if (name == "burgers") {
            s = burgers_system(j.value("nu", 1.0));
        } else if (name == "linear") {
            int d = j.at("A").size();
            s = linear_system(mat_from_json(j.at("A"), d, "A"), mat_from_json(j.at("D"), d, "D"));
        } else if (name == "rotation") {
            s = rotation_system(j.value("beta", 1.0), j.value("gamma", 0.5));
        } else if (name == "quadratic2") {
            RMat D = j.contains("D") ? mat_from_json(j.at("D"), 2, "D") : RMat::Identity(2, 2);
            s = quadratic2_system(D);
        } else if (name == "polynomial") {
            int d = j.at("d").get<int>();
            s.kind = SystemKind::Parabolic;
            s.name = j.value("label", std::string("polynomial"));
            s.d = d;
            s.flux = Flux(d);
            if (j.contains("A")) s.flux.A = mat_from_json(j.at("A"), d, "A");
            if (j.contains("B")) s.flux.B = j.at("B").get<std::vector<double>>();
            if (j.contains("C")) s.flux.C = j.at("C").get<std::vector<double>>();
            if (static_cast<int>(s.flux.B.size()) != d * d * d || static_cast<int>(s.flux.C.size()) != d * d * d * d)
                throw ConfigError("polynomial flux tensors have the wrong size");
            s.D = mat_from_json(j.at("D"), d, "D");
        } else {
            throw ConfigError("unknown system '" + name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("system: ") + e.what());
    }
    s.c_ref = j.value("c_ref", 0.0);
    validate(s);
    return s;
}

nlohmann::json system_to_json(const SystemSpec& s) {
    nlohmann::json j;
    j["name"] = "polynomial";
    if (s.kind == SystemKind::KdV) {
        j["name"] = "kdv";
    } else {
        j["d"] = s.d;
        j["A"] = mat_to_json(s.flux.A);
        j["B"] = s.flux.B;
        j["C"] = s.flux.C;
        j["D"] = mat_to_json(s.D);
    }
    j["label"] = s.name;
    j["c_ref"] = s.c_ref;
    return j;
}

}  // namespace mw

#include "modwave/linalg.hpp"

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

namespace mw {

EigResult eig_general(const CMat& A, bool want_vectors) {
    const lapack_int n = static_cast<lapack_int>(A.rows());
    EigResult r;
    r.values.resize(n);
    if (n == 0) return r;
    CMat a = A;
    CMat vr(want_vectors ? n : 1, want_vectors ? n : 1);
    cd dummy;
    lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', want_vectors ? 'V' : 'N', n, a.data(), n, r.values.data(),
                                    &dummy, 1, vr.data(), want_vectors ? n : 1);
    if (info != 0) throw SolverError("zgeev failed with info " + std::to_string(info));
    if (want_vectors) r.vectors = vr;
    return r;
}

namespace {
thread_local double select_radius = 0.0;
lapack_logical select_small(const lapack_complex_double* z) { return std::abs(*z) < select_radius; }
}  // namespace

SchurSplit schur_small(const CMat& A, double radius) {
    const lapack_int n = static_cast<lapack_int>(A.rows());
    SchurSplit s;
    s.T = A;
    s.Z.resize(n, n);
    CVec w(n);
    lapack_int sdim = 0;
    select_radius = radius;
    lapack_int info = LAPACKE_zgees(LAPACK_COL_MAJOR, 'V', 'S', select_small, n, s.T.data(), n, &sdim, w.data(),
                                    s.Z.data(), n);
    if (info != 0 && info != n + 1 && info != n + 2) throw SolverError("zgees failed with info " + std::to_string(info));
    if (info == n + 2) throw SolverError("zgees reordering changed the selected cluster");
    s.selected = sdim;
    return s;
}

double one_norm(const CMat& A) { return A.cwiseAbs().colwise().sum().maxCoeff(); }

int numerical_rank(const CMat& A, double tol) {
    if (A.size() == 0) return 0;
    Eigen::JacobiSVD<CMat> svd(A);
    int r = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > tol) ++r;
    return r;
}

}  // namespace mw

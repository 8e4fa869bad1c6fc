#pragma once

#include "modwave/common.hpp"

namespace mw {

struct EigResult {
    CVec values;
    CMat vectors;
};

// General complex eigenproblem (LAPACK zgeev). Throws SolverError on failure.
EigResult eig_general(const CMat& A, bool want_vectors);

struct SchurSplit {
    CMat Z;
    CMat T;
    int selected = 0;
};

// Complex Schur form with the eigenvalues of modulus below radius moved to the
// leading block (LAPACK zgees with a selection function).
SchurSplit schur_small(const CMat& A, double radius);

double one_norm(const CMat& A);
int numerical_rank(const CMat& A, double tol);

}  // namespace mw

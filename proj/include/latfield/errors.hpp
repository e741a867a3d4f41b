#pragma once
#include <stdexcept>
#include <string>

namespace latfield {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define LATFIELD_ERROR(Name)                                                   \
  struct Name : Error {                                                        \
    explicit Name(const std::string &msg = #Name) : Error(msg) {}              \
  }

// lattice_core
LATFIELD_ERROR(SingularBasis);
LATFIELD_ERROR(StencilNotSymmetric);
LATFIELD_ERROR(StencilDoesNotSpan);
LATFIELD_ERROR(OutOfWindow);
LATFIELD_ERROR(DimensionMismatch);

// potentials
LATFIELD_ERROR(UnsupportedOrder);
LATFIELD_ERROR(DefectOutsideRadius);

// fourier
LATFIELD_ERROR(InvalidOrder);
LATFIELD_ERROR(SingularH2);

// greens
LATFIELD_ERROR(UnstableModel);
LATFIELD_ERROR(SupercellTooSmall);
LATFIELD_ERROR(WindowTooSmall);

// kernels
LATFIELD_ERROR(SingularArgument);
LATFIELD_ERROR(QuadratureNotConverged);

// multipole
LATFIELD_ERROR(NonSummableTail);
LATFIELD_ERROR(BasisDegenerate);
LATFIELD_ERROR(KernelOrderMissing);

// correctors
LATFIELD_ERROR(AnisotropyUnsupported);
LATFIELD_ERROR(MissingPredecessor);
LATFIELD_ERROR(ModeTruncationNotConverged);
LATFIELD_ERROR(NonScalarOperator);

// defect_solver
LATFIELD_ERROR(EvaluationDomainExceeded);
LATFIELD_ERROR(NotConverged);
LATFIELD_ERROR(InstabilityDetected);

// cli
LATFIELD_ERROR(ConfigInvalid);

#undef LATFIELD_ERROR

} // namespace latfield

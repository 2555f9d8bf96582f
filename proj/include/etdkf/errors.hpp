#pragma once

#include <stdexcept>
#include <string>

namespace etdkf {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A state vector or matrix contains non-finite entries.
struct InvalidStateError : Error {
    using Error::Error;
};

// Two nodes are too close for the measurement Jacobian to be defined.
struct DegenerateGeometryError : Error {
    using Error::Error;
};

// A covariance matrix lost symmetry or positive semidefiniteness.
struct CovarianceCorruptError : Error {
    using Error::Error;
};

// A linear solve failed even after jitter was applied.
struct NumericalFailureError : Error {
    using Error::Error;
};

// An operation was called with inputs violating its stated precondition.
struct PreconditionError : Error {
    using Error::Error;
};

// Diffusion weights and intermediate estimates do not describe the same
// neighborhood.
struct TopologyError : Error {
    using Error::Error;
};

// A scenario file or scenario value is unusable; the message names the field.
struct ScenarioError : Error {
    using Error::Error;
};

// The beta bound is undefined for the given ranging parameters.
struct BoundUndefinedError : Error {
    using Error::Error;
};

// The inter-trigger bound is infinite (tr(W Q W^T) = 0 or pi_max infinite).
struct BoundInfiniteError : Error {
    using Error::Error;
};

// Two run logs cannot be compared (different shape).
struct ComparisonError : Error {
    using Error::Error;
};

}  // namespace etdkf

#pragma once

#include <stdexcept>
#include <string>

namespace mprlab {

// Base class for everything thrown by the library. Messages are prefixed
// with the subsystem that raised them ("poly: ...", "regulation: ...").
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations: arity or cap mismatches, bad dimensions,
// out-of-range indices.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Source-level parse failures; `position` is a 0-based offset into the
// input (or a line number for scenario files, see message).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t position)
        : Error(msg), position(position) {}
    std::size_t position;
};

// Taylor expansion hit a denominator that vanishes at the origin.
class SingularJetError : public Error {
public:
    using Error::Error;
};

// Runtime evaluation failure (division by zero, non-finite intermediate).
class EvalError : public Error {
public:
    using Error::Error;
};

// Iterative numeric routine failed to converge or produced an
// out-of-tolerance residual.
class NumericError : public Error {
public:
    using Error::Error;
};

// Controller synthesis failed; message names the violated assumption.
class SynthesisError : public Error {
public:
    using Error::Error;
};

// A graded linear system was singular: plant zeros resonate with
// exosystem poles (or their degree-d products).
class ResonanceError : public SynthesisError {
public:
    using SynthesisError::SynthesisError;
};

// Output chain could not establish a well-defined relative degree.
class RelativeDegreeError : public Error {
public:
    using Error::Error;
};

// A shooting rollout left the representable region.
class DivergedRollout : public Error {
public:
    using Error::Error;
};

// Metrics requested over a window that contains divergence or lies
// outside the trajectory.
class MetricError : public Error {
public:
    using Error::Error;
};

} // namespace mprlab

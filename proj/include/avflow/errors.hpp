#pragma once

#include <stdexcept>
#include <string>

namespace avflow {

// Precondition / shape violations. Thrown eagerly so a bad call site fails
// at the operation that received the malformed input.
struct ContractViolation : std::invalid_argument {
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Query outside an oracle field's valid time domain.
struct DomainError : std::domain_error {
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// Non-finite values where the contract requires finite ones.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// File format / serialization failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace avflow

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace qmimo {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Shape or wiring mismatch between components.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace qmimo

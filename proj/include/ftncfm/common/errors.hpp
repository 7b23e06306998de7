#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ftncfm {

// Precondition or shape contract broken by the caller.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A non-finite value showed up somewhere it must not. `where` names the
// layer, iteration or step that produced it.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::string where)
        : std::runtime_error(what + " (at " + where + ")"), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, std::size_t step)
        : NumericError(what, "step " + std::to_string(step)), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ContractViolation(message);
}

} // namespace ftncfm

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace psrd {

// Every failure carries a short category tag so callers (and the CLI) can
// report `ERROR:<category>: message` uniformly.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct GeometryError : Error {
    explicit GeometryError(const std::string& m) : Error("geometry", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error("parse", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};
struct EvalError : Error {
    explicit EvalError(const std::string& m) : Error("eval", m) {}
};
struct PlacementError : Error {
    explicit PlacementError(const std::string& m) : Error("placement", m) {}
};

}  // namespace psrd

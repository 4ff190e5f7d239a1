#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gsem {

// Base of every error thrown by the library. The CLI maps subclasses onto
// process exit codes (usage 1, format 2, numeric 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class InvalidPrimitive : public Error {
public:
    using Error::Error;
};

class PlacementError : public Error {
public:
    using Error::Error;
};

// Divergence during optimization, failed gradient checks.
class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace gsem

#pragma once

#include <stdexcept>
#include <string>

namespace flowsplat {

// Data shaped wrong for an operation (image sizes, window lengths, ...).
class ShapeMismatch : public std::invalid_argument {
   public:
    explicit ShapeMismatch(const std::string& what) : std::invalid_argument(what) {}
};

class WindowLengthMismatch : public ShapeMismatch {
   public:
    explicit WindowLengthMismatch(const std::string& what) : ShapeMismatch(what) {}
};

class NonPositiveDepth : public std::invalid_argument {
   public:
    explicit NonPositiveDepth(const std::string& what) : std::invalid_argument(what) {}
};

// Raised by the trainer when a loss or gradient goes non-finite; carries the
// first offending Gaussian index (-1 when the field or a buffer is at fault).
class NonFiniteLoss : public std::runtime_error {
   public:
    NonFiniteLoss(const std::string& what, int gaussian_index)
        : std::runtime_error(what), gaussian_index(gaussian_index) {}
    int gaussian_index = -1;
};

// File / dataset level problems (missing files, bad magic, malformed JSON).
class DataError : public std::runtime_error {
   public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace flowsplat

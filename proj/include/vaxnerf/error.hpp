#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vaxnerf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or malformed dataset files (manifest, images).
class DatasetFormatError : public Error {
public:
    using Error::Error;
};

/// Inputs that violate a documented precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Bad configuration values or unknown config keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Binary artifact (grid, checkpoint) with a bad header or truncated payload.
class FormatError : public Error {
public:
    using Error::Error;
};

/// More kept samples on a ray than the packed batch can hold.
class CapacityError : public Error {
public:
    CapacityError(std::size_t observed_max, std::size_t capacity)
        : Error("packed batch overflow: " + std::to_string(observed_max) +
                " kept samples > capacity " + std::to_string(capacity)),
          observed_max_(observed_max),
          capacity_(capacity) {}

    std::size_t observed_max() const noexcept { return observed_max_; }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    std::size_t observed_max_;
    std::size_t capacity_;
};

/// Non-finite loss or gradients during optimization.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::uint64_t seed, std::uint64_t iteration)
        : Error(what + " (seed " + std::to_string(seed) + ", iteration " +
                std::to_string(iteration) + ")"),
          seed_(seed),
          iteration_(iteration) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t iteration() const noexcept { return iteration_; }

private:
    std::uint64_t seed_;
    std::uint64_t iteration_;
};

}  // namespace vaxnerf

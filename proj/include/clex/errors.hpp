#pragma once

#include <stdexcept>
#include <string>

namespace clex {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Out-of-range physical or numerical parameter (negative intensity, p > 1, ...).
class ParameterError : public Error
{
  public:
    using Error::Error;
};

/// Box / grid / window incompatibilities.
class GeometryError : public Error
{
  public:
    using Error::Error;
};

class LookupError : public Error
{
  public:
    using Error::Error;
};

/// Violated precondition of an operation (overlapping index sets, empty E, ...).
class ContractError : public Error
{
  public:
    using Error::Error;
};

/// Material matrices that are not symmetric positive definite within [alpha, beta].
class MaterialError : public Error
{
  public:
    using Error::Error;
};

class ShapeError : public Error
{
  public:
    using Error::Error;
};

/// Subset enumeration would exceed the configured cap.
class CombinatorialGuardError : public Error
{
  public:
    using Error::Error;
};

class ConvergenceError : public Error
{
  public:
    ConvergenceError(const std::string& what, double final_residual, long iterations)
      : Error(what), final_residual_(final_residual), iterations_(iterations)
    {
    }

    double final_residual() const noexcept { return final_residual_; }
    long iterations() const noexcept { return iterations_; }

  private:
    double final_residual_;
    long iterations_;
};

/// Configuration validation failure; `field()` names the offending key path.
class ConfigError : public Error
{
  public:
    ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field))
    {
    }

    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

} // namespace clex

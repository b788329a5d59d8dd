#pragma once

#include <stdexcept>
#include <string>

namespace lscm {

// Each error carries a stable machine-readable class, printed by the CLI as
// "error: <class>: <message>".

class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& what)
      : std::runtime_error(what), class_(std::move(error_class)) {}
  const std::string& error_class() const { return class_; }

 private:
  std::string class_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error("argument_error", what) {}
};

// Graph support is not acyclic where a DAG is required.
class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& what) : Error("structural_error", what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical_error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data_error", what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error("checkpoint_error", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace lscm

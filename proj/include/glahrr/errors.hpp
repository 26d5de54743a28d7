#pragma once

#include <stdexcept>
#include <string>

namespace glahrr {

// Root of every exception the library throws. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public Error { using Error::Error; };
class DecodeError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class SizeError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class SingularityError : public Error { using Error::Error; };
class EmptyDatasetError : public Error { using Error::Error; };
class LoadError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };

}  // namespace glahrr

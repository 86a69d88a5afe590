#pragma once

#include <stdexcept>
#include <string>

namespace flexcast {

// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class KeyError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class TransferError : public Error { using Error::Error; };

}  // namespace flexcast

#pragma once

#include <stdexcept>
#include <string>

namespace harp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a precondition (bad shape, index out of range, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed user input, e.g. a token id outside the vocabulary.
class InputError : public Error {
public:
    using Error::Error;
};

/// The request exceeds a fixed capacity such as max_seq_len.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced during a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Checkpoint file is truncated or inconsistent with its header.
class CorruptionError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// The alpha search could not produce a value for some layer.
class SearchError : public Error {
public:
    using Error::Error;
};

}  // namespace harp

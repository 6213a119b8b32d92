#pragma once

#include <stdexcept>
#include <string>

namespace pagent {

// Base for every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class EncoderMismatch : public Error {
public:
    using Error::Error;
};

class ExternalEncoderError : public Error {
public:
    using Error::Error;
};

class EmptyBuffer : public Error {
public:
    using Error::Error;
};

// Anything that went wrong talking to a chat backend.
class BackendError : public Error {
public:
    using Error::Error;
};

class TransportError : public BackendError {
public:
    using BackendError::BackendError;
};

class RateLimited : public BackendError {
public:
    using BackendError::BackendError;
};

// Scripted backend received a prompt no rule matches and no default exists.
class NoMatchingRule : public BackendError {
public:
    using BackendError::BackendError;
};

// Backend returned an empty reply where text was required.
class EmptyCompletion : public BackendError {
public:
    using BackendError::BackendError;
};

// Agent output did not follow the action protocol even after the retry.
class ProtocolError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Error {
public:
    using Error::Error;
};

} // namespace pagent

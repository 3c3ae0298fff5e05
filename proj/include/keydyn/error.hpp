#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace keydyn {

// Base class for all toolkit errors. Subclasses group into the three
// CLI exit categories: usage (1), data (2), numeric (3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

// --- ingest ---

struct MalformedRow : DataError {
    std::size_t line_no;
    explicit MalformedRow(std::size_t line, const std::string& what_arg)
        : DataError("line " + std::to_string(line) + ": " + what_arg), line_no(line) {}
};

struct InvalidEnum : DataError {
    std::size_t line_no;
    explicit InvalidEnum(std::size_t line, const std::string& what_arg)
        : DataError("line " + std::to_string(line) + ": " + what_arg), line_no(line) {}
};

struct DuplicateUser : DataError {
    std::string user_id;
    explicit DuplicateUser(const std::string& user)
        : DataError("duplicate label row for user " + user), user_id(user) {}
};

struct EmptyDataset : DataError {
    EmptyDataset() : DataError("no stream survived validation") {}
};

// --- features ---

struct EmptyInput : DataError {
    using DataError::DataError;
};

struct TooShort : DataError {
    using DataError::DataError;
};

struct EmptyTraining : DataError {
    using DataError::DataError;
};

struct MissingDevice : DataError {
    explicit MissingDevice(const std::string& device)
        : DataError("no stream for device " + device) {}
};

// --- preprocess ---

struct DimensionMismatch : DataError {
    using DataError::DataError;
};

struct LengthMismatch : DataError {
    using DataError::DataError;
};

struct KTooLarge : DataError {
    using DataError::DataError;
};

struct TooFewMinority : DataError {
    using DataError::DataError;
};

// --- models ---

struct BadSpec : UsageError {
    using UsageError::UsageError;
};

struct DegenerateData : DataError {
    using DataError::DataError;
};

// --- neural ---

struct ShapeMismatch : NumericError {
    using NumericError::NumericError;
};

struct NonFiniteActivation : NumericError {
    using NumericError::NumericError;
};

struct NoCachedForward : NumericError {
    using NumericError::NumericError;
};

struct Divergence : NumericError {
    int epoch;
    explicit Divergence(int at_epoch)
        : NumericError("loss became non-finite at epoch " + std::to_string(at_epoch)),
          epoch(at_epoch) {}
};

struct InputTooShort : DataError {
    using DataError::DataError;
};

// --- protocol ---

struct StratumTooSmall : DataError {
    using DataError::DataError;
};

struct TooFewUsers : DataError {
    using DataError::DataError;
};

}  // namespace keydyn

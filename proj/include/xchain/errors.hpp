#pragma once

#include <stdexcept>

namespace xchain {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
struct DimensionError : Error { using Error::Error; };
// Non-finite values where finite ones are required.
struct NumericError : Error { using Error::Error; };
// API misuse, e.g. backward on a tensor outside the computation record.
struct UsageError : Error { using Error::Error; };
// Index or id outside its valid range.
struct IndexError : Error { using Error::Error; };
// Unusable caller-provided data (empty corpus, single-class dataset, ...).
struct InputError : Error { using Error::Error; };
// Invalid configuration values.
struct ConfigError : Error { using Error::Error; };
// Structurally malformed file: TSV, vocabulary, checkpoint.
struct FormatError : Error { using Error::Error; };
// Unknown label string in a data file.
struct LabelError : Error { using Error::Error; };
// Cross-record inconsistency such as a duplicate id.
struct IntegrityError : Error { using Error::Error; };
// Model, vocabulary and checkpoint do not fit together.
struct CompatibilityError : Error { using Error::Error; };

} // namespace xchain

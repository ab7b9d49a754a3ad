#pragma once

#include <stdexcept>
#include <string>

namespace objstyle {

// Common base so callers can catch everything raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// image-io
struct UnreadableFile : Error { using Error::Error; };
struct TooSmall : Error { using Error::Error; };
struct UnmappedColor : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct WriteFailure : Error { using Error::Error; };

// features
struct UnknownLayer : Error { using Error::Error; };
struct WeightsUnavailable : Error { using Error::Error; };

// object map
struct InvalidPair : Error { using Error::Error; };
struct NonMaximalAmbiguity : Error { using Error::Error; };
struct InconsistentMap : Error { using Error::Error; };
struct WrongKind : Error { using Error::Error; };

// losses
struct ShapeMismatch : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };
struct ImageTooSmall : Error { using Error::Error; };

// engine
struct NonFiniteLoss : Error { using Error::Error; };

// eval
struct ScorerUnavailable : Error { using Error::Error; };

} // namespace objstyle

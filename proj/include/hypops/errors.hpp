#pragma once

#include <stdexcept>
#include <string>

namespace hypops {

// Base class for every condition the library raises. Subtypes exist so
// callers (and tests) can react to a specific failure without string
// matching.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnboundVariable : Error { using Error::Error; };
struct DivisionByZero : Error { using Error::Error; };
struct SizeSymbolInLimitMode : Error { using Error::Error; };
struct GuardIsConstantTrue : Error { using Error::Error; };
struct InvalidParameter : Error { using Error::Error; };
struct NoClosedForm : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct ValidationFailed : Error { using Error::Error; };
struct LimitNotNFree : Error { using Error::Error; };
struct ChainLimitExceeded : Error { using Error::Error; };
struct DomainViolation : Error { using Error::Error; };
struct StepFailure : Error { using Error::Error; };
struct BlowUp : Error { using Error::Error; };
struct DegenerateSliding : Error { using Error::Error; };
struct UnstableSliding : Error { using Error::Error; };
struct SimultaneousTangency : Error { using Error::Error; };
struct ChatteringDetected : Error { using Error::Error; };
struct ZenoAbort : Error { using Error::Error; };
struct PostStateOnBoundary : Error { using Error::Error; };
struct ZeroTotalWeight : Error { using Error::Error; };
struct EmptySample : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace hypops

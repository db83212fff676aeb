#pragma once

#include <stdexcept>
#include <string>

namespace operatrack {

/// Every failure the library can signal.  One exception type carries one of
/// these codes so callers (and the CLI) can react without string matching.
enum class Errc {
    UnsupportedFormat,   // audio container/codec we do not decode
    CorruptFile,         // file shorter or stranger than its own header claims
    FileNotFound,
    EmptyAudio,          // zero samples where audio is required
    InvalidGeometry,     // nonsensical framing parameters
    InvalidConfig,       // bad run configuration value
    DimensionMismatch,   // feature/model dimensions disagree
    ReferenceEmpty,      // tracker constructed over an empty reference
    OutOfRange,          // index outside the valid range
    InputTooLarge,       // offline tool asked to exceed its intended scale
    EmptyDataset,        // training requested with no frames
    NonBinaryLabels,     // detector labels outside {0, 1}
    CorruptModel,        // model file fails structural validation
    KindMismatch,        // model loaded for a different detector kind
    EmptyTrace,          // evaluation asked to score an empty trace
    InvalidScript,       // scenario script violates its structural rules
    ParseError,          // malformed CSV/JSON content
};

const char* errc_name(Errc code) noexcept;

/// Single exception type for all operational errors.  `what()` is a human
/// readable message; `code()` is the machine readable cause.
class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

  private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
    throw Error(code, what);
}

} // namespace operatrack

#include "operatrack/common.hpp"

namespace operatrack {

const char* errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::EmptyAudio: return "EmptyAudio";
    case Errc::InvalidGeometry: return "InvalidGeometry";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ReferenceEmpty: return "ReferenceEmpty";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::InputTooLarge: return "InputTooLarge";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonBinaryLabels: return "NonBinaryLabels";
    case Errc::CorruptModel: return "CorruptModel";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::EmptyTrace: return "EmptyTrace";
    case Errc::InvalidScript: return "InvalidScript";
    case Errc::ParseError: return "ParseError";
    }
    return "UnknownError";
}

} // namespace operatrack

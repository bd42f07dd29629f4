// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rkv {

enum class Errc {
    EmptyVector,
    NonFinite,
    DegenerateNorm,
    ShapeMismatch,
    DuplicateToken,
    EmptyCache,
    UnknownToken,
    NoVisualTokens,
    NotADistribution,
    OutOfRange,
    NegativeInput,
    EmptyAttnMap,
    WrongKind,
    InfeasiblePlanting,
    DegenerateFit,
    MissingKey,
    UnknownKey,
    TypeError,
    IoError,
    InvalidArgument,
};

inline std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::EmptyVector: return "EmptyVector";
        case Errc::NonFinite: return "NonFinite";
        case Errc::DegenerateNorm: return "DegenerateNorm";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::DuplicateToken: return "DuplicateToken";
        case Errc::EmptyCache: return "EmptyCache";
        case Errc::UnknownToken: return "UnknownToken";
        case Errc::NoVisualTokens: return "NoVisualTokens";
        case Errc::NotADistribution: return "NotADistribution";
        case Errc::OutOfRange: return "OutOfRange";
        case Errc::NegativeInput: return "NegativeInput";
        case Errc::EmptyAttnMap: return "EmptyAttnMap";
        case Errc::WrongKind: return "WrongKind";
        case Errc::InfeasiblePlanting: return "InfeasiblePlanting";
        case Errc::DegenerateFit: return "DegenerateFit";
        case Errc::MissingKey: return "MissingKey";
        case Errc::UnknownKey: return "UnknownKey";
        case Errc::TypeError: return "TypeError";
        case Errc::IoError: return "IoError";
        case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), m_code(code) {}

    Errc code() const noexcept { return m_code; }

private:
    Errc m_code;
};

}  // namespace rkv

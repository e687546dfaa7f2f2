// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>

namespace tirgym
{

std::string_view errc_name(Errc code) noexcept
{
    switch (code)
    {
        case Errc::MissingThink: return "MissingThink";
        case Errc::MultipleActions: return "MultipleActions";
        case Errc::MalformedToolJson: return "MalformedToolJson";
        case Errc::UnclosedTag: return "UnclosedTag";
        case Errc::TrailingContent: return "TrailingContent";
        case Errc::NonSerializableArgument: return "NonSerializableArgument";
        case Errc::InvalidTask: return "InvalidTask";
        case Errc::UnresolvableImage: return "UnresolvableImage";
        case Errc::UnknownEpisode: return "UnknownEpisode";
        case Errc::EpisodeAlreadyDone: return "EpisodeAlreadyDone";
        case Errc::EpisodeNotDone: return "EpisodeNotDone";
        case Errc::UnknownTool: return "UnknownTool";
        case Errc::DuplicateName: return "DuplicateName";
        case Errc::InvalidSchema: return "InvalidSchema";
        case Errc::GroupTooSmall: return "GroupTooSmall";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::EmptyTrainableSequence: return "EmptyTrainableSequence";
        case Errc::JudgeUnavailable: return "JudgeUnavailable";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::InvalidRequest: return "InvalidRequest";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

std::optional<Errc> errc_from_name(std::string_view name) noexcept
{
    for (int i = 0; i <= static_cast<int>(Errc::IoError); ++i)
        if (errc_name(static_cast<Errc>(i)) == name)
            return static_cast<Errc>(i);
    return std::nullopt;
}

} // namespace tirgym

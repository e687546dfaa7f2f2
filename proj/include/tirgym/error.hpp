// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tirgym
{

/// Machine-readable error codes. The names double as the wire error codes.
enum class Errc
{
    // protocol
    MissingThink,
    MultipleActions,
    MalformedToolJson,
    UnclosedTag,
    TrailingContent,
    NonSerializableArgument,
    // env_core
    InvalidTask,
    UnresolvableImage,
    UnknownEpisode,
    EpisodeAlreadyDone,
    EpisodeNotDone,
    // tool_runtime
    UnknownTool,
    DuplicateName,
    InvalidSchema,
    // grpo_math
    GroupTooSmall,
    LengthMismatch,
    EmptyTrainableSequence,
    // trajectory_pipeline
    JudgeUnavailable,
    // plumbing
    InvalidConfig,
    VersionMismatch,
    InvalidRequest,
    IoError,
};

std::string_view errc_name(Errc code) noexcept;
/// Inverse of errc_name; nullopt for unknown names.
std::optional<Errc> errc_from_name(std::string_view name) noexcept;

class Error: public std::runtime_error
{
  public:
    Error(Errc code, const std::string& message):
        std::runtime_error(std::string(errc_name(code)) + ": " + message), _code(code), _detail(message)
    {
    }

    [[nodiscard]] Errc code() const noexcept { return _code; }
    [[nodiscard]] const std::string& detail() const noexcept { return _detail; }

  private:
    Errc _code;
    std::string _detail;
};

} // namespace tirgym

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/tool_runtime.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tirgym
{

struct MockToolOptions
{
    /// Directory of `<tool>.jsonl` key/value records for the retrieval tools.
    std::filesystem::path corpus_dir;
    /// Added to every call, to emulate model inference time.
    std::chrono::milliseconds simulated_latency { 0 };
    std::optional<int> workers;
};

/// Exact-match lookup over line-delimited `{"key": ..., "value": ...}` records.
/// Keys match case-insensitively with whitespace collapsed.
class KeyValueCorpus
{
  public:
    KeyValueCorpus() = default;
    static KeyValueCorpus load(const std::filesystem::path& file);

    [[nodiscard]] std::optional<std::string> lookup(std::string_view query) const;
    [[nodiscard]] std::size_t size() const noexcept { return _entries.size(); }

    static std::string normalize_key(std::string_view key);

  private:
    std::map<std::string, std::string> _entries;
};

/// The fifteen tools of the enhancement, perception, analysis and retrieval families.
std::vector<std::string> table_tool_names();

void register_zoom_tool(ToolRuntime& runtime, const MockToolOptions& options = {});
void register_table_tools(ToolRuntime& runtime, const MockToolOptions& options = {});
/// Zoom plus the fifteen table tools.
void register_mock_tools(ToolRuntime& runtime, const MockToolOptions& options = {});

/// Registers a tool that sleeps for `latency` and echoes its `payload` argument.
void register_latency_tool(ToolRuntime& runtime, const std::string& name, std::chrono::milliseconds latency,
                           std::optional<int> workers = std::nullopt);

} // namespace tirgym

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace skillmix::jsonl {

/// Parses every complete line; a trailing line without '\n' is ignored when
/// `allow_torn_tail` is set, otherwise it is parsed too.
std::vector<nlohmann::json> read_file(const std::filesystem::path& path, bool allow_torn_tail = false);

void write_file(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

nlohmann::json read_json(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers see old or new.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

std::string read_text(const std::filesystem::path& path);

}  // namespace skillmix::jsonl

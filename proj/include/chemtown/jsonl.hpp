#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace chemtown::jsonl {

/// Parses one JSON value per non-empty line. Throws FormatError with the 1-based
/// line number on the first malformed line.
std::vector<nlohmann::json> read_file(const std::filesystem::path& path);

/// Writes one compact JSON value per line, '\n' terminated. Keys serialize in
/// sorted order, so output is byte-stable for equal content.
void write_file(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines);

/// Fetches obj[field], throwing FormatError naming the field (and line) when absent.
const nlohmann::json& require(const nlohmann::json& obj, const char* field, std::size_t line = 0);

} // namespace chemtown::jsonl

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace stancelab {

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// One JSON object per non-empty line. Parse failures raise ErrorKind::Parse
// with the 1-based line number in the message.
std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// Strict comma-separated values with double-quote escaping; quoted fields may
// contain commas, doubled quotes and newlines. The first record is the header.
CsvTable parse_csv(std::string_view content);
CsvTable read_csv(const std::string& path);
std::string format_csv(const CsvTable& table);

std::string hash_file_hex(const std::string& path);

}  // namespace stancelab

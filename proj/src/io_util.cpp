#include "stancelab/io_util.hpp"

#include <fstream>
#include <sstream>

#include "stancelab/error.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::Io, "cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) raise(ErrorKind::Io, "error writing file: " + path);
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open file: " + path);
    std::vector<nlohmann::json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto parsed = nlohmann::json::parse(line, nullptr, false);
        if (parsed.is_discarded()) {
            raise(ErrorKind::Parse,
                  path + ": malformed JSON on line " + std::to_string(line_no));
        }
        records.push_back(std::move(parsed));
    }
    return records;
}

void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records) {
    std::ostringstream out;
    for (const auto& record : records) out << record.dump() << '\n';
    write_file(path, out.str());
}

CsvTable parse_csv(std::string_view content) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    const auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    const auto end_record = [&] {
        end_field();
        // A fully empty line is not a record.
        if (record.size() == 1 && record[0].empty()) {
            record.clear();
            return;
        }
        records.push_back(std::move(record));
        record.clear();
    };

    std::size_t i = 0;
    while (i < content.size()) {
        char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                } else {
                    in_quotes = false;
                    ++i;
                }
            } else {
                field.push_back(c);
                ++i;
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
            ++i;
        } else if (c == ',') {
            end_field();
            ++i;
        } else if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
            end_record();
            i += 2;
        } else if (c == '\n') {
            end_record();
            ++i;
        } else {
            field.push_back(c);
            field_started = true;
            ++i;
        }
    }
    if (in_quotes) raise(ErrorKind::Parse, "CSV: unterminated quoted field");
    if (field_started || !record.empty() || !field.empty()) end_record();

    CsvTable table;
    if (records.empty()) raise(ErrorKind::Parse, "CSV: missing header row");
    table.header = std::move(records.front());
    table.rows.assign(std::make_move_iterator(records.begin() + 1),
                      std::make_move_iterator(records.end()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].size() != table.header.size()) {
            raise(ErrorKind::Parse,
                  "CSV: record " + std::to_string(r + 1) + " has " +
                      std::to_string(table.rows[r].size()) + " fields, expected " +
                      std::to_string(table.header.size()));
        }
    }
    return table;
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path)); }

namespace {

std::string csv_escape(const std::string& field) {
    bool needs_quotes = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

std::string format_csv(const CsvTable& table) {
    std::ostringstream out;
    const auto write_row = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << csv_escape(row[i]);
        }
        out << '\n';
    };
    write_row(table.header);
    for (const auto& row : table.rows) write_row(row);
    return out.str();
}

std::string hash_file_hex(const std::string& path) {
    return fnv1a64_hex(read_file(path));
}

}  // namespace stancelab

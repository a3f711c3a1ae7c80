// SPDX-License-Identifier: MIT
//
// Minimal RFC 4180 CSV reading and writing.
#pragma once

#include "tsurr/error.hpp"
#include "tsurr/tensor_core.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tsurr {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        detail::fail(ErrorKind::schema, "CSV has no column '" + name + "'");
    }
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::vector<std::vector<std::string>> lines;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;  // current row has content
    std::size_t i = 0;
    if (text.rfind("\xEF\xBB\xBF", 0) == 0) i = 3;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        if (any) lines.push_back(std::move(row));
        row.clear();
        any = false;
    };

    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            end_field();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_row();
        } else {
            field += c;
            any = true;
        }
    }
    detail::require(!quoted, ErrorKind::io, "unterminated quoted CSV field");
    if (any || !field.empty()) end_row();

    detail::require(!lines.empty(), ErrorKind::io, "CSV has no header row");
    table.header = std::move(lines.front());
    for (std::size_t r = 1; r < lines.size(); ++r) {
        detail::require(lines[r].size() == table.header.size(), ErrorKind::io,
                        "CSV row " + std::to_string(r) + " has " + std::to_string(lines[r].size()) +
                            " fields, header has " + std::to_string(table.header.size()));
        table.rows.push_back(std::move(lines[r]));
    }
    return table;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    detail::require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    detail::require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
    out << text;
    detail::require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    try {
        return parse_csv(read_text(path));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::io) throw;
        throw Error(ErrorKind::io, path.string() + ": " + e.what());
    }
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_csv(const CsvTable& table) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) out += ',';
            out += csv_escape(cells[c]);
        }
        out += '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
    return out;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    write_text(path, format_csv(table));
}

inline std::vector<Record> records_from_table(const CsvTable& table) {
    std::vector<Record> records;
    records.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        Record rec;
        for (std::size_t c = 0; c < table.header.size(); ++c) rec[table.header[c]] = row[c];
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace tsurr

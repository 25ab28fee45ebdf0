#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ktf/errors.hpp"

namespace ktf {

// Plain comma-separated files: the interaction/metadata schemas never quote,
// so this is a strict splitter, not a general CSV dialect.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return cells;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// Reads the whole file, validates the header column-by-column, and checks
// every row for the right cell count. Tolerates CRLF and a trailing newline.
inline CsvTable read_csv(const std::string& path, const std::vector<std::string>& expected_header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);

    CsvTable table;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            table.header = split_csv_line(line);
            if (table.header.size() != expected_header.size()) {
                throw DataError(path + ": expected " + std::to_string(expected_header.size()) +
                                " columns, found " + std::to_string(table.header.size()));
            }
            for (size_t i = 0; i < expected_header.size(); ++i) {
                if (table.header[i] != expected_header[i])
                    throw DataError(path + ": missing column '" + expected_header[i] +
                                    "' (found '" + table.header[i] + "' at position " +
                                    std::to_string(i) + ")");
            }
            continue;
        }
        if (line.empty() && in.eof()) break;
        auto cells = split_csv_line(line);
        if (cells.size() != table.header.size())
            throw DataError(path + " line " + std::to_string(lineno) + ": expected " +
                            std::to_string(table.header.size()) + " cells, found " +
                            std::to_string(cells.size()));
        table.rows.push_back(std::move(cells));
    }
    if (lineno == 0) throw DataError(path + ": empty file (no header)");
    return table;
}

// cell parsers; `where` names the row/column for the error message
inline int64_t parse_i64(const std::string& cell, const std::string& where) {
    if (cell.empty()) throw DataError(where + ": empty cell where an integer is required");
    size_t pos = 0;
    int64_t v = 0;
    try {
        v = std::stoll(cell, &pos);
    } catch (const std::exception&) {
        throw DataError(where + ": cannot parse integer from '" + cell + "'");
    }
    if (pos != cell.size()) throw DataError(where + ": trailing junk in integer '" + cell + "'");
    return v;
}

// empty cell or the -1 sentinel count as N/A
inline bool is_na_cell(const std::string& cell) { return cell.empty() || cell == "-1"; }

inline bool parse_bool(const std::string& cell, const std::string& where) {
    if (cell == "True" || cell == "true" || cell == "1") return true;
    if (cell == "False" || cell == "false" || cell == "0") return false;
    throw DataError(where + ": cannot parse boolean from '" + cell + "'");
}

}  // namespace ktf

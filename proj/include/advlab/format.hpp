#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "errors.hpp"

namespace advlab {

/// Shortest representation that round-trips; '.' decimal point regardless of locale.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw IoError("format_double: conversion failed");
    return std::string(buf, ptr);
}

/// Locale-independent parse of a full string as double.
inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("not a number: '" + s + "'");
    return v;
}

/// Minimal CSV table: one header row, comma-separated fields without quoting.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw InputError("missing column '" + name + "'");
    }
    bool has_column(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError("'" + path + "' is empty");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            throw InputError("'" + path + "': row has " + std::to_string(fields.size()) + " fields, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

inline std::string to_csv_string(const CsvTable& t) {
    std::string s;
    auto emit = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) s += ',';
            s += r[i];
        }
        s += '\n';
    };
    emit(t.header);
    for (const auto& r : t.rows) emit(r);
    return s;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace advlab

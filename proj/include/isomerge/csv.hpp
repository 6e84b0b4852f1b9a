#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "isomerge/errors.hpp"

namespace isomerge {

// RFC-4180 CSV with LF line endings, '.' decimal separator, and numbers
// rendered at 9 significant digits.

inline std::string csv_number(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_)
            fail(errc::io_failure, "cannot open '" + path + "' for writing");
        path_ = path;
    }

    void row(std::initializer_list<std::string> fields) { write_row(fields.begin(), fields.end()); }

    void row(const std::vector<std::string>& fields) { write_row(fields.begin(), fields.end()); }

    void close() {
        if (out_.is_open()) {
            out_.flush();
            if (!out_)
                fail(errc::io_failure, "write error on '" + path_ + "'");
            out_.close();
        }
    }

private:
    template <typename It>
    void write_row(It first, It last) {
        bool lead = true;
        for (It it = first; it != last; ++it) {
            if (!lead) out_ << ',';
            out_ << csv_escape(*it);
            lead = false;
        }
        out_ << '\n';
    }

    std::ofstream out_;
    std::string path_;
};

}  // namespace isomerge

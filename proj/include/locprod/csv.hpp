#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "locprod/error.hpp"

namespace locprod {

// Minimal delimiter-separated reader: header row + data rows, no quoting.
// Strict field counts; carries 1-based row numbers for error reporting.
class CsvReader {
public:
    explicit CsvReader(std::istream& in, char delim = ',') : in_(in), delim_(delim) {
        if (!std::getline(in_, line_))
            throw ParseError("empty input: missing header row", 1);
        strip_cr(line_);
        header_ = split(line_);
        row_ = 1;
    }

    const std::vector<std::string>& header() const { return header_; }

    // Returns false at end of input. Blank lines are skipped.
    bool next(std::vector<std::string>& fields) {
        while (std::getline(in_, line_)) {
            ++row_;
            strip_cr(line_);
            if (line_.empty()) continue;
            fields = split(line_);
            if (fields.size() != header_.size()) {
                std::ostringstream os;
                os << "row " << row_ << ": expected " << header_.size()
                   << " fields, got " << fields.size();
                throw ParseError(os.str(), row_);
            }
            return true;
        }
        return false;
    }

    long row() const { return row_; }

    double parse_double(const std::string& s, const std::string& column) const {
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
            std::ostringstream os;
            os << "row " << row_ << ", column '" << column << "': not a number: '" << s << "'";
            throw ParseError(os.str(), row_);
        }
        return v;
    }

    long parse_long(const std::string& s, const std::string& column) const {
        errno = 0;
        char* end = nullptr;
        const long v = std::strtol(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
            std::ostringstream os;
            os << "row " << row_ << ", column '" << column << "': not an integer: '" << s << "'";
            throw ParseError(os.str(), row_);
        }
        return v;
    }

private:
    static void strip_cr(std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    }

    std::vector<std::string> split(const std::string& s) const {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == delim_) {
                out.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        out.push_back(cur);
        return out;
    }

    std::istream& in_;
    char delim_;
    std::string line_;
    std::vector<std::string> header_;
    long row_ = 0;
};

// Shortest representation that round-trips a double exactly ("%.17g" fallback).
inline std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out, char delim = ',') : out_(out), delim_(delim) {}

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << delim_;
            out_ << fields[i];
        }
        out_ << '\n';
    }

private:
    std::ostream& out_;
    char delim_;
};

}

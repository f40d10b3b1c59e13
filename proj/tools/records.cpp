#include "records.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <iostream>
#include <sstream>

#include "tuneout/errors.hpp"

namespace tuneout::cli {

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw ComputationError("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

RecordSink::RecordSink(std::string command, std::string digest, json provenance,
                       const std::string& jsonl, const std::string& csv)
    : command_(std::move(command)), digest_(std::move(digest)), provenance_(std::move(provenance)) {
    if (jsonl.empty() || jsonl == "-") {
        out_ = &std::cout;
    } else {
        jsonl_file_ = std::make_unique<std::ofstream>(jsonl, std::ios::binary);
        if (!*jsonl_file_) throw ValidationError("cannot write " + jsonl);
        out_ = jsonl_file_.get();
    }
    if (!csv.empty()) {
        csv_ = std::make_unique<std::ofstream>(csv, std::ios::binary);
        if (!*csv_) throw ValidationError("cannot write " + csv);
    }
}

void RecordSink::record(const std::string& kind, json fields) {
    fields["command"] = command_;
    fields["kind"] = kind;
    fields["config_digest"] = digest_;
    fields["provenance"] = provenance_;
    *out_ << fields.dump() << '\n';
}

void RecordSink::csv_header(const std::vector<std::string>& columns) {
    columns_ = columns.size();
    csv_row(columns);
}

void RecordSink::csv_row(const std::vector<std::string>& cells) {
    if (!csv_) return;
    if (cells.size() != columns_) throw ComputationError("CSV row width does not match its header");
    for (std::size_t i = 0; i < cells.size(); ++i) *csv_ << (i ? "," : "") << cells[i];
    *csv_ << '\n';
}

void RecordSink::finish() {
    out_->flush();
    if (csv_) csv_->flush();
    if ((jsonl_file_ && !*jsonl_file_) || (csv_ && !*csv_)) throw ComputationError("output write failed");
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ValidationError(where + ": '" + s + "' is not a number");
    }
    return v;
}

}  // namespace

std::vector<ScanPoint> read_scan_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read scan table " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty input: " + path.string() + " has no header");
    const auto header = split(line);
    const auto col = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        return -1;
    };
    const int c = col("control"), v = col("value"), s = col("sigma"), m = col("m_F"), n = col("shots");
    if (c < 0 || v < 0 || s < 0) {
        throw ValidationError(path.string() + ": scan tables need control, value and sigma columns");
    }
    std::vector<ScanPoint> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            throw ValidationError(path.string() + ":" + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " cells");
        }
        if (cells[static_cast<std::size_t>(v)].empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(row);
        ScanPoint p;
        p.control = parse_number(cells[static_cast<std::size_t>(c)], where);
        p.value = parse_number(cells[static_cast<std::size_t>(v)], where);
        p.sigma = parse_number(cells[static_cast<std::size_t>(s)], where);
        if (m >= 0) p.m_F = static_cast<int>(parse_number(cells[static_cast<std::size_t>(m)], where));
        if (n >= 0) p.shots = static_cast<int>(parse_number(cells[static_cast<std::size_t>(n)], where));
        p.validate();
        out.push_back(p);
    }
    if (out.empty()) throw ValidationError("empty input: " + path.string() + " holds no scan points");
    return out;
}

void write_scan_table(const std::vector<ScanPoint>& points, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "control,value,sigma,m_F,shots\n";
    for (const auto& p : points) {
        out << num(p.control) << ',' << num(p.value) << ',' << num(p.sigma) << ',' << p.m_F << ','
            << p.shots << '\n';
    }
    if (!out) throw ComputationError("write failed: " + path.string());
}

}  // namespace tuneout::cli

#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneout/fit_models.hpp"

namespace tuneout::cli {

using nlohmann::json;

std::string sha256_hex(const std::string& bytes);
// Digest of a file's bytes; ValidationError when it cannot be read.
std::string file_sha256(const std::filesystem::path& path);

// JSONL records on `jsonl` (stdout when empty) and an optional CSV table.
// Every record carries the command, the config digest and the provenance.
class RecordSink {
public:
    RecordSink(std::string command, std::string digest, json provenance, const std::string& jsonl,
               const std::string& csv);

    void record(const std::string& kind, json fields);
    void csv_header(const std::vector<std::string>& columns);
    void csv_row(const std::vector<std::string>& cells);
    void finish();

private:
    std::string command_;
    std::string digest_;
    json provenance_;
    std::unique_ptr<std::ofstream> jsonl_file_;
    std::ostream* out_ = nullptr;
    std::unique_ptr<std::ofstream> csv_;
    std::size_t columns_ = 0;
};

// Shortest text that reads back to the same double.
std::string num(double v);

// CSV scan table with at least the columns control, value and sigma; m_F and
// shots are optional. Rows with an empty value are skipped.
std::vector<ScanPoint> read_scan_table(const std::filesystem::path& path);
void write_scan_table(const std::vector<ScanPoint>& points, const std::filesystem::path& path);

}  // namespace tuneout::cli

#include "mel/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mel {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_directory(const std::string& path) {
  std::filesystem::create_directories(path);
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

void write_binary_atomic(const std::string& path, const void* data,
                         size_t bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out.write(static_cast<const char*>(data), (std::streamsize)bytes);
  }
  std::filesystem::rename(tmp, path);
}

CsvWriter::CsvWriter(std::vector<std::string> columns)
    : columns_(std::move(columns)) {}

void CsvWriter::append(const std::vector<double>& row) {
  if (row.size() != columns_.size())
    throw Error("csv: row width does not match header");
  rows_.push_back(row);
}

void CsvWriter::write(const std::string& path) const {
  std::ostringstream os;
  for (size_t i = 0; i < columns_.size(); ++i)
    os << (i ? "," : "") << columns_[i];
  os << "\n";
  for (const auto& row : rows_) {
    for (size_t i = 0; i < row.size(); ++i)
      os << (i ? "," : "") << format_double(row[i]);
    os << "\n";
  }
  write_text_atomic(path, os.str());
}

void write_field_snapshot(const std::string& path_base, const MatrixXd& coeffs,
                          int dim, int degree,
                          const std::vector<int>& cells) {
  nlohmann::json header;
  header["dim"] = dim;
  header["degree"] = degree;
  header["cells"] = cells;
  header["rank"] = coeffs.cols();
  header["size"] = coeffs.rows();
  header["data"] = std::filesystem::path(path_base + ".bin")
                       .filename()
                       .string();
  header["layout"] = "column-major float64 little-endian";
  write_text_atomic(path_base + ".json", header.dump(2) + "\n");
  write_binary_atomic(path_base + ".bin", coeffs.data(),
                      sizeof(double) * coeffs.size());
}

MatrixXd read_field_snapshot(const std::string& path_base) {
  std::ifstream hin(path_base + ".json");
  if (!hin) throw Error("cannot open " + path_base + ".json");
  nlohmann::json header = nlohmann::json::parse(hin);
  int rows = header.at("size").get<int>();
  int rank = header.at("rank").get<int>();
  MatrixXd coeffs(rows, rank);
  std::ifstream bin(path_base + ".bin", std::ios::binary);
  if (!bin) throw Error("cannot open " + path_base + ".bin");
  bin.read(reinterpret_cast<char*>(coeffs.data()),
           (std::streamsize)(sizeof(double) * coeffs.size()));
  if (!bin) throw Error("snapshot truncated: " + path_base);
  return coeffs;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot hash " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  char out[24];
  std::snprintf(out, sizeof(out), "%016llx",
                (unsigned long long)fnv1a64(buf.str()));
  return out;
}

void write_manifest(const std::string& outdir,
                    const std::map<std::string, std::string>& resolved,
                    const std::vector<std::string>& artifacts) {
  nlohmann::json man;
  for (const auto& [key, value] : resolved) man["config"][key] = value;
  for (const auto& art : artifacts)
    man["artifacts"][std::filesystem::path(art).filename().string()] =
        file_hash_hex(art);
  write_text_atomic(outdir + "/manifest.json", man.dump(2) + "\n");

  // Re-feedable resolved configuration.
  std::map<std::string, std::map<std::string, std::string>> by_section;
  for (const auto& [key, value] : resolved) {
    size_t dot = key.find('.');
    by_section[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  std::ostringstream os;
  for (const auto& [sec, keys] : by_section) {
    os << "[" << sec << "]\n";
    for (const auto& [key, value] : keys) os << key << " = " << value << "\n";
    os << "\n";
  }
  write_text_atomic(outdir + "/resolved.cfg", os.str());
}

}  // namespace mel

#pragma once

#include <map>
#include <string>
#include <vector>

#include "mel/common.hpp"

namespace mel {

// Deterministic shortest-roundtrip formatting for CSV output.
std::string format_double(double v);

// Writes via a temporary file plus rename so artifacts appear atomically.
void write_text_atomic(const std::string& path, const std::string& content);
void write_binary_atomic(const std::string& path, const void* data,
                         size_t bytes);

void ensure_directory(const std::string& path);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns);
  void append(const std::vector<double>& row);
  void write(const std::string& path) const;
  int rows() const { return (int)rows_.size(); }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

// Raw little-endian doubles plus a small JSON header describing the
// coefficient block (dim, degree, cells, rank).
void write_field_snapshot(const std::string& path_base, const MatrixXd& coeffs,
                          int dim, int degree, const std::vector<int>& cells);
MatrixXd read_field_snapshot(const std::string& path_base);

std::uint64_t fnv1a64(const std::string& bytes);
std::string file_hash_hex(const std::string& path);

// Run manifest: resolved config echo plus artifact hashes. Also writes a
// re-feedable `resolved.cfg` next to it.
void write_manifest(const std::string& outdir,
                    const std::map<std::string, std::string>& resolved,
                    const std::vector<std::string>& artifacts);

}  // namespace mel

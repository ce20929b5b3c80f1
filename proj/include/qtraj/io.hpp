#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace qtraj {

/// FNV-1a 64-bit hash, used to checksum CSV bodies into the metadata file.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Formats a double with 17 significant digits (lossless round-trip).
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Accumulates a CSV body in memory so the whole file can be hashed and
/// written atomically at the end of a run.
class CsvBuilder {
 public:
  explicit CsvBuilder(const std::vector<std::string>& columns) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) body_ += ',';
      body_ += columns[i];
    }
    body_ += '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) body_ += ',';
      body_ += fmt_double(values[i]);
    }
    body_ += '\n';
  }

  const std::string& body() const { return body_; }

 private:
  std::string body_;
};

/// Collects the CSV outputs of one run plus a single metadata JSON whose
/// checksum entry covers every CSV body.
class OutputDir {
 public:
  explicit OutputDir(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& path() const { return dir_; }

  void write_csv(const std::string& name, const CsvBuilder& csv) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open output file: " + name);
    f << csv.body();
    checksums_[name] = to_hex(fnv1a64(csv.body()));
    combined_ ^= fnv1a64(csv.body());
  }

  void write_metadata(nlohmann::json meta) {
    meta["files"] = checksums_;
    meta["checksum"] = to_hex(combined_);
    std::ofstream f(dir_ / "metadata.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot open metadata.json");
    f << meta.dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> checksums_;
  std::uint64_t combined_ = 0;
};

}  // namespace qtraj

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ivd/weights.hpp"

namespace ivd {

// One manifest per CLI run: the command, the resolved config, the seed, what
// was produced, the ledger totals, and a git-style content hash of the
// weights involved. Contains nothing time-dependent, so equal inputs yield
// byte-equal manifests.
struct RunManifest {
  std::string command;
  std::string config_json;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::map<std::string, double> ledger;
  std::string weights_hash;

  std::string to_json() const;
  void write(const std::string& path) const;
};

// Fixed-precision, locale-free number formatting for CSV cells.
std::string format_double(double v, int precision = 6);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

}  // namespace ivd

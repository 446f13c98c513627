#include "ivd/manifest.hpp"

#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace ivd {

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config_json.empty() ? nlohmann::json::object()
                                    : nlohmann::json::parse(config_json);
  j["artifacts"] = artifacts;
  j["ledger"] = ledger;
  j["weights_hash"] = weights_hash;
  return j.dump(1, '\t');
}

void RunManifest::write(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest '" + path + "'");
  f << to_json() << "\n";
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& header) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write '" + path + "'");
  out_ << header << "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ",";
    out_ << cells[i];
  }
  out_ << "\n";
}

}  // namespace ivd

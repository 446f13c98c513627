#include "ivd/weights.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ivd {

namespace {

constexpr const char* kMagic = "IVDW1";

void append_f32_le(std::vector<unsigned char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<unsigned char>(bits & 0xff));
  out.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                       (static_cast<std::uint32_t>(p[2]) << 16) |
                       (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

nlohmann::json range_to_json(const QuantParams& p) {
  return nlohmann::json{{"min", p.min}, {"max", p.max}};
}

QuantParams range_from_json(const nlohmann::json& j) {
  return QuantParams{j.at("min").get<double>(), j.at("max").get<double>()};
}

}  // namespace

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

long long ParamStore::total_parameters() const {
  long long n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

std::vector<unsigned char> ParamStore::serialize() const {
  nlohmann::json header;
  header["params"] = nlohmann::json::array();
  long long offset = 0;
  for (const auto& [name, t] : params_) {
    header["params"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += t.numel() * 4;
  }
  if (!weight_ranges_.empty()) {
    auto& wq = header["weight_ranges"];
    for (const auto& [name, p] : weight_ranges_) wq[name] = range_to_json(p);
  }
  if (!activation_ranges_.empty()) {
    auto& aq = header["activation_ranges"];
    for (const auto& [name, p] : activation_ranges_) aq[name] = range_to_json(p);
  }
  const std::string htext = header.dump(1, '\t');

  std::vector<unsigned char> out;
  std::string prefix = std::string(kMagic) + "\n" + std::to_string(htext.size()) + "\n";
  out.insert(out.end(), prefix.begin(), prefix.end());
  out.insert(out.end(), htext.begin(), htext.end());
  out.push_back('\n');
  out.reserve(out.size() + static_cast<std::size_t>(offset));
  for (const auto& [name, t] : params_) {
    for (long long i = 0; i < t.numel(); ++i) append_f32_le(out, t[i]);
  }
  return out;
}

void ParamStore::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing weight container '" + path + "'");
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open weight container '" + path + "'");
  std::string magic, hlen_text;
  std::getline(f, magic);
  std::getline(f, hlen_text);
  if (magic != kMagic) throw std::runtime_error("'" + path + "' is not a weight container");
  const std::size_t hlen = static_cast<std::size_t>(std::stoll(hlen_text));
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  f.get();  // trailing newline after the header
  const nlohmann::json header = nlohmann::json::parse(htext);

  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
  ParamStore store;
  for (const auto& p : header.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    const long long offset = p.at("offset").get<long long>();
    if (p.at("dtype").get<std::string>() != "f32") {
      throw std::runtime_error("parameter '" + name + "' has unsupported dtype");
    }
    Tensor t(shape);
    if (offset + t.numel() * 4 > static_cast<long long>(payload.size())) {
      throw std::runtime_error("weight container '" + path + "' truncated at '" + name + "'");
    }
    for (long long i = 0; i < t.numel(); ++i) {
      t[i] = read_f32_le(payload.data() + offset + i * 4);
    }
    store.put(name, std::move(t));
  }
  if (header.contains("weight_ranges")) {
    for (const auto& [name, j] : header.at("weight_ranges").items()) {
      store.weight_ranges()[name] = range_from_json(j);
    }
  }
  if (header.contains("activation_ranges")) {
    for (const auto& [name, j] : header.at("activation_ranges").items()) {
      store.activation_ranges()[name] = range_from_json(j);
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// SHA-1 (for git-style blob hashes in run manifests)
// ---------------------------------------------------------------------------

namespace {

struct Sha1 {
  std::array<std::uint32_t, 5> h{0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
  std::array<unsigned char, 64> block{};
  std::size_t block_len = 0;
  std::uint64_t total = 0;

  static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process() {
    std::array<std::uint32_t, 80> w{};
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint32_t>(block[4 * i]) << 24) |
             (static_cast<std::uint32_t>(block[4 * i + 1]) << 16) |
             (static_cast<std::uint32_t>(block[4 * i + 2]) << 8) |
             static_cast<std::uint32_t>(block[4 * i + 3]);
    }
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    auto [a, b, c, d, e] = h;
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | ((~b) & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  void update(const unsigned char* data, std::size_t len) {
    total += len;
    for (std::size_t i = 0; i < len; ++i) {
      block[block_len++] = data[i];
      if (block_len == 64) {
        process();
        block_len = 0;
      }
    }
  }

  std::string finish() {
    const std::uint64_t bits = total * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0;
    while (block_len != 56) update(&zero, 1);
    for (int i = 7; i >= 0; --i) {
      unsigned char b = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
      update(&b, 1);
    }
    std::ostringstream os;
    for (std::uint32_t v : h) {
      for (int i = 28; i >= 0; i -= 4) {
        os << "0123456789abcdef"[(v >> i) & 0xf];
      }
    }
    return os.str();
  }
};

}  // namespace

std::string git_blob_sha1(const std::vector<unsigned char>& bytes) {
  Sha1 s;
  const std::string frame = "blob " + std::to_string(bytes.size()) + '\0';
  s.update(reinterpret_cast<const unsigned char*>(frame.data()), frame.size());
  s.update(bytes.data(), bytes.size());
  return s.finish();
}

}  // namespace ivd

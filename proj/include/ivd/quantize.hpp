#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivd/tape.hpp"

namespace ivd {

// Range policy of a value produced at an op site.
enum class RangeKind {
  Calibrated,  // range comes from a calibration pass
  Sigmoid01,   // fixed [0,1]
  Relu06,      // fixed [0,6]
};

// Hook threaded through model graph builders. The float path uses no
// instrument; calibration records ranges; quantized inference inserts a
// fake-quant op after every mathematical op and unifies concat input ranges.
template <class T>
class GraphInstrument {
 public:
  using Id = typename TapeT<T>::Id;
  virtual ~GraphInstrument() = default;

  virtual Id after_op(TapeT<T>& tape, Id id, const std::string& site, RangeKind kind) = 0;

  // Called with every concat input and the site that produced it; returns the
  // (possibly re-quantized) inputs to concatenate.
  virtual std::vector<Id> before_concat(TapeT<T>& tape, std::vector<Id> ids,
                                        const std::vector<std::string>& sites) = 0;
};

inline QuantParams fixed_range(RangeKind kind) {
  switch (kind) {
    case RangeKind::Sigmoid01:
      return QuantParams{0.0, 1.0};
    case RangeKind::Relu06:
      return QuantParams{0.0, 6.0};
    default:
      throw std::logic_error("no fixed range for calibrated site");
  }
}

// Records observed min/max per calibrated site. Fixed-range sites are pinned
// regardless of the data seen.
template <class T>
class CalibrationInstrument : public GraphInstrument<T> {
 public:
  using Id = typename TapeT<T>::Id;

  explicit CalibrationInstrument(std::map<std::string, QuantParams>& ranges) : ranges_(ranges) {}

  Id after_op(TapeT<T>& tape, Id id, const std::string& site, RangeKind kind) override {
    if (kind != RangeKind::Calibrated) {
      ranges_[site] = fixed_range(kind);
      return id;
    }
    const TensorT<T>& t = tape.tensor(id);
    double lo = t[0], hi = t[0];
    for (long long i = 1; i < t.numel(); ++i) {
      lo = std::min(lo, static_cast<double>(t[i]));
      hi = std::max(hi, static_cast<double>(t[i]));
    }
    auto it = ranges_.find(site);
    if (it == ranges_.end()) {
      ranges_[site] = QuantParams::covering(lo, hi);
    } else {
      it->second = QuantParams::covering(std::min(it->second.min, lo),
                                         std::max(it->second.max, hi));
    }
    return id;
  }

  std::vector<Id> before_concat(TapeT<T>&, std::vector<Id> ids,
                                const std::vector<std::string>&) override {
    return ids;
  }

 private:
  std::map<std::string, QuantParams>& ranges_;
};

// Applies fake quantization from a frozen range table. Missing calibration
// ranges are an error that names the op site.
template <class T>
class QuantizeInstrument : public GraphInstrument<T> {
 public:
  using Id = typename TapeT<T>::Id;

  explicit QuantizeInstrument(const std::map<std::string, QuantParams>& ranges)
      : ranges_(ranges) {}

  Id after_op(TapeT<T>& tape, Id id, const std::string& site, RangeKind kind) override {
    return tape.fake_quant(id, site_range(site, kind));
  }

  std::vector<Id> before_concat(TapeT<T>& tape, std::vector<Id> ids,
                                const std::vector<std::string>& sites) override {
    // All concat inputs share the widest contributing range so the
    // concatenation needs no rescaling.
    QuantParams u = site_range(sites.at(0), RangeKind::Calibrated);
    for (std::size_t i = 1; i < sites.size(); ++i) {
      const QuantParams p = site_range(sites[i], RangeKind::Calibrated);
      u.min = std::min(u.min, p.min);
      u.max = std::max(u.max, p.max);
    }
    for (auto& id : ids) id = tape.fake_quant(id, u);
    return ids;
  }

  QuantParams site_range(const std::string& site, RangeKind kind) const {
    if (kind != RangeKind::Calibrated) return fixed_range(kind);
    auto it = ranges_.find(site);
    if (it == ranges_.end()) {
      throw std::runtime_error("no calibration range recorded for op site '" + site + "'");
    }
    return it->second;
  }

 private:
  const std::map<std::string, QuantParams>& ranges_;
};

// Per-tensor symmetric weight quantization.
inline Tensor quantize_weight_tensor(const Tensor& w, QuantParams* out_range) {
  float lo = w.numel() ? w[0] : 0.f, hi = lo;
  for (long long i = 1; i < w.numel(); ++i) {
    lo = std::min(lo, w[i]);
    hi = std::max(hi, w[i]);
  }
  const QuantParams p = QuantParams::symmetric_from(lo, hi);
  if (out_range) *out_range = p;
  return fake_quant_forward(w, p);
}

}  // namespace ivd

#pragma once

#include <bit>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "qacts/adam.hpp"
#include "qacts/tensor.hpp"
#include "qacts/util.hpp"

namespace qacts {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian doubles");

// Serialized named parameter set. On disk: a little-endian u64 header
// length, a JSON header listing {name, shape, offset} plus config / stage /
// RNG state, then the flat f64 payload. Offsets are relative to the payload
// start. Round trips are bit-exact.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int stage = 0;
  nlohmann::ordered_json config;  // encoder/model/vocab/entity-type blob
  std::vector<uint64_t> rng_state;

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
  };
  std::vector<Entry> tensors;

  uint64_t fingerprint() const { return fnv1a64(config.dump()); }

  const Entry* find(const std::string& name) const {
    for (const auto& e : tensors) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  static Checkpoint from_params(const ParamList& params) {
    Checkpoint ck;
    for (const auto& p : params) {
      ck.tensors.push_back({p.name, p.tensor->shape, p.tensor->data});
    }
    return ck;
  }

  // Copies stored arrays into matching live parameters. Every stored name
  // must exist with the same shape; missing/mismatched names are collected
  // into one error.
  void assign_to(ParamList& params) const {
    std::vector<std::string> problems;
    for (const auto& e : tensors) {
      TensorPtr t = find_param(params, e.name);
      if (!t) {
        problems.push_back(e.name + " (missing in model)");
        continue;
      }
      if (t->shape != e.shape) {
        problems.push_back(e.name + " (checkpoint " + shape_str(e.shape) + " vs model " +
                           shape_str(t->shape) + ")");
        continue;
      }
      t->data = e.data;
    }
    if (!problems.empty()) {
      std::string msg = "checkpoint/model mismatch:";
      for (const auto& p : problems) msg += "\n  " + p;
      throw ValidationError(msg);
    }
  }

  void save(const std::string& path) const {
    nlohmann::ordered_json header;
    header["format_version"] = kFormatVersion;
    header["stage"] = stage;
    header["config"] = config;
    header["fingerprint"] = hex64(fingerprint());
    header["rng_state"] = rng_state;
    nlohmann::ordered_json tlist = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto& e : tensors) {
      nlohmann::ordered_json t;
      t["name"] = e.name;
      t["shape"] = e.shape;
      t["offset"] = offset;
      tlist.push_back(std::move(t));
      offset += e.data.size() * sizeof(double);
    }
    header["tensors"] = std::move(tlist);

    std::string header_str = header.dump();
    std::string blob;
    blob.reserve(8 + header_str.size() + offset);
    uint64_t hlen = header_str.size();
    blob.append(reinterpret_cast<const char*>(&hlen), 8);
    blob.append(header_str);
    for (const auto& e : tensors) {
      blob.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(double));
    }
    write_file(path, blob);
  }

  static Checkpoint load(const std::string& path) {
    std::string blob = read_file(path);
    if (blob.size() < 8) throw ValidationError("checkpoint " + path + ": truncated header length");
    uint64_t hlen = 0;
    std::memcpy(&hlen, blob.data(), 8);
    if (8 + hlen > blob.size()) {
      throw ValidationError("checkpoint " + path + ": truncated header");
    }
    nlohmann::ordered_json header;
    try {
      header = nlohmann::ordered_json::parse(blob.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("checkpoint " + path + ": bad header JSON: " + e.what());
    }
    Checkpoint ck;
    try {
      if (header.at("format_version").get<int>() != kFormatVersion) {
        throw ValidationError("checkpoint " + path + ": unsupported format version");
      }
      ck.stage = header.at("stage").get<int>();
      ck.config = header.at("config");
      ck.rng_state = header.at("rng_state").get<std::vector<uint64_t>>();
      size_t payload_base = 8 + hlen;
      for (const auto& t : header.at("tensors")) {
        Entry e;
        e.name = t.at("name").get<std::string>();
        e.shape = t.at("shape").get<Shape>();
        uint64_t offset = t.at("offset").get<uint64_t>();
        size_t bytes = numel(e.shape) * sizeof(double);
        if (payload_base + offset + bytes > blob.size()) {
          throw ValidationError("checkpoint " + path + ": truncated payload for tensor " +
                                e.name);
        }
        e.data.resize(numel(e.shape));
        std::memcpy(e.data.data(), blob.data() + payload_base + offset, bytes);
        ck.tensors.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("checkpoint " + path + ": malformed header: " + e.what());
    }
    std::string stored = header.value("fingerprint", "");
    if (!stored.empty() && stored != hex64(ck.fingerprint())) {
      throw ValidationError("checkpoint " + path + ": config fingerprint mismatch");
    }
    return ck;
  }
};

}  // namespace qacts

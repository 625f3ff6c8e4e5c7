#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "caml/error.hpp"
#include "caml/training.hpp"

// Checkpoint container, all integers little-endian:
//
//   "CAML1"
//   u32 section_count
//   section_count x { u32 name_len, name, u64 payload_len, payload }
//   u64 FNV-1a-64 of every preceding byte
//
// Section "meta" holds canonical JSON (sorted keys). Tensor sections are
// named "tensor/<name>" with payload { u32 ndims, ndims x u64 dim, doubles }.

namespace caml {

inline constexpr std::string_view kCheckpointMagic = "CAML1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw CorruptFileError(what_ + ": truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() { return le(take(8)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(take(4))); }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  static std::uint64_t le(std::string_view s) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < s.size(); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string encode_tensor(const Matrix& m) {
  std::string out;
  put_u32(out, 2);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (double x : m.values()) put_f64(out, x);
  return out;
}

inline Matrix decode_tensor(std::string_view payload, const std::string& name) {
  Reader r(payload, "tensor " + name);
  if (r.u32() != 2) throw CorruptFileError("tensor " + name + ": expected 2 dimensions");
  const std::uint64_t rows = r.u64(), cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 8 / cols) throw CorruptFileError("tensor " + name + ": truncated");
  std::vector<double> data(rows * cols);
  for (double& x : data) x = r.f64();
  if (!r.done()) throw CorruptFileError("tensor " + name + ": trailing bytes");
  return Matrix(rows, cols, std::move(data));
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw CorruptFileError("bad hash string " + s);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  using detail::put_u32;
  using detail::put_u64;
  std::vector<std::pair<std::string, std::string>> sections;

  nlohmann::json meta;
  meta["config"] = to_json(ckpt.config);
  meta["vocab_hash"] = detail::hex64(ckpt.vocab_hash);
  meta["label_hash"] = detail::hex64(ckpt.label_hash);
  meta["best_validation_score"] = ckpt.best_validation_score;
  meta["epoch"] = ckpt.epoch;
  if (ckpt.neural) {
    meta["model_kind"] = std::string(to_string(ckpt.neural->kind));
    meta["kernel"] = ckpt.neural->kernel;
    meta["has_desc_embedder"] = ckpt.neural->desc.has_value();
  } else if (ckpt.lr) {
    meta["model_kind"] = "lr";
  } else {
    throw UsageError("serialize_checkpoint: checkpoint holds no model");
  }
  sections.emplace_back("meta", meta.dump());

  if (ckpt.neural) {
    ckpt.neural->for_each_tensor([&](std::string_view name, const Matrix& m, bool) {
      sections.emplace_back("tensor/" + std::string(name), detail::encode_tensor(m));
    });
  } else {
    sections.emplace_back("tensor/lr_weights", detail::encode_tensor(ckpt.lr->weights));
    sections.emplace_back("tensor/lr_bias", detail::encode_tensor(ckpt.lr->bias));
    Matrix trained(1, ckpt.lr->trained.size());
    for (std::size_t i = 0; i < ckpt.lr->trained.size(); ++i) trained(0, i) = ckpt.lr->trained[i];
    sections.emplace_back("tensor/lr_trained", detail::encode_tensor(trained));
  }

  std::string out(kCheckpointMagic);
  put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, payload.size());
    out += payload;
  }
  put_u64(out, fnv1a64(out));
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12 || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CorruptFileError("checkpoint: bad magic or truncated file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::Reader tail(bytes.substr(bytes.size() - 8), "checkpoint checksum");
  if (tail.u64() != fnv1a64(body)) throw CorruptFileError("checkpoint: checksum mismatch (corrupt or truncated)");

  detail::Reader r(body, "checkpoint");
  r.take(kCheckpointMagic.size());
  const std::uint32_t count = r.u32();
  std::map<std::string, std::string_view> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(r.take(r.u32()));
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw CorruptFileError("checkpoint: section " + name + " truncated");
    sections[name] = r.take(static_cast<std::size_t>(len));
  }
  if (!r.done()) throw CorruptFileError("checkpoint: trailing bytes");

  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    if (it == sections.end()) throw CorruptFileError("checkpoint: missing section " + name);
    return it->second;
  };
  auto tensor = [&](const std::string& name) { return detail::decode_tensor(section("tensor/" + name), name); };

  Checkpoint ckpt;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(section("meta"));
    ckpt.config = config_from_json(meta.at("config"));
    ckpt.vocab_hash = detail::parse_hex64(meta.at("vocab_hash").get<std::string>());
    ckpt.label_hash = detail::parse_hex64(meta.at("label_hash").get<std::string>());
    ckpt.best_validation_score = meta.at("best_validation_score").get<double>();
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint meta: ") + e.what());
  } catch (const UsageError& e) {
    throw CorruptFileError(std::string("checkpoint meta: ") + e.what());
  }

  const std::string kind = meta.at("model_kind").get<std::string>();
  if (kind == "lr") {
    LrParams p;
    p.weights = tensor("lr_weights");
    p.bias = tensor("lr_bias");
    const Matrix trained = tensor("lr_trained");
    for (double x : trained.values()) p.trained.push_back(x != 0.0 ? 1 : 0);
    ckpt.lr = std::move(p);
  } else {
    CamlParams p;
    p.kind = parse_model_kind(kind);
    p.kernel = meta.at("kernel").get<std::size_t>();
    if (meta.at("has_desc_embedder").get<bool>()) p.desc.emplace();
    p.for_each_tensor([&](std::string_view name, Matrix& m, bool) { m = tensor(std::string(name)); });
    try {
      p.validate();
    } catch (const DataError& e) {
      throw CorruptFileError(std::string("checkpoint: ") + e.what());
    }
    ckpt.neural = std::move(p);
  }
  return ckpt;
}

inline void check_compatible(const Checkpoint& ckpt, const Vocabulary& vocab, const LabelSpace& space) {
  if (ckpt.vocab_hash != vocab.hash()) {
    throw HashMismatchError("checkpoint vocabulary hash " + detail::hex64(ckpt.vocab_hash) +
                            " does not match dataset vocabulary " + detail::hex64(vocab.hash()));
  }
  if (ckpt.label_hash != space.hash()) {
    throw HashMismatchError("checkpoint label-space hash " + detail::hex64(ckpt.label_hash) +
                            " does not match dataset label space " + detail::hex64(space.hash()));
  }
}

// Writes to a temporary sibling, then renames.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

// Loads and refuses checkpoints built against a different vocabulary or
// label space.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab,
                                  const LabelSpace& space) {
  Checkpoint ckpt = load_checkpoint(path);
  check_compatible(ckpt, vocab, space);
  return ckpt;
}

}  // namespace caml

#pragma once

// Record ingestion, coreset emission, binary state files and atomic writes.
//
// Interchange is line-delimited JSON. Raw records carry
//   {"id": int, "loss": real, "tokens": [{"g": [D reals], "h": [H reals]}, ...]}
// precomputed records carry
//   {"id": int, "loss": real, "feature": [D reals]}.
//
// Binary layouts are little-endian regardless of host:
//   state   "SLAPV1" | u64 D | u64 H | u64 step | f64 beta2 | f64 epsilon | D*H f64
//   packed  "SLAPF1" | u64 D | u64 count | count * (i64 id | f64 loss | D f32)

#include <openssl/evp.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "slap/diversify.hpp"
#include "slap/errors.hpp"
#include "slap/features.hpp"
#include "slap/selector.hpp"
#include "slap/stratify.hpp"

namespace slap::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class InputMode { kPrecomputed, kRaw, kPacked };

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "precomputed") return InputMode::kPrecomputed;
  if (s == "raw") return InputMode::kRaw;
  if (s == "packed") return InputMode::kPacked;
  throw ConfigError("unknown input mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Little-endian primitives

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  void magic(std::string_view m) {
    need(m.size());
    if (bytes_.substr(pos_, m.size()) != m) throw SchemaError(what_ + ": bad magic bytes");
    pos_ += m.size();
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw SchemaError(what_ + ": truncated");
  }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed command never leaves a partial output behind.
inline void atomic_write(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw ConfigError("write failed for '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ConfigError("cannot move output into place at '" + path.string() + "'");
  }
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw InternalError("sha256 digest failed");
  std::ostringstream ss;
  for (unsigned i = 0; i < len; ++i)
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return ss.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Second-moment state

inline constexpr std::string_view kStateMagic = "SLAPV1";
inline constexpr std::string_view kPackedMagic = "SLAPF1";

inline std::string encode_state(const SecondMomentState& s) {
  std::string out(kStateMagic);
  detail::put_u64(out, s.rows());
  detail::put_u64(out, s.cols());
  detail::put_u64(out, s.step);
  detail::put_f64(out, s.beta2);
  detail::put_f64(out, s.epsilon);
  for (double v : s.v.values()) detail::put_f64(out, v);
  return out;
}

inline SecondMomentState decode_state(std::string_view bytes) {
  detail::ByteReader r(bytes, "second-moment state");
  r.magic(kStateMagic);
  const auto d = r.u64();
  const auto h = r.u64();
  const auto step = r.u64();
  const double beta2 = r.f64();
  const double eps = r.f64();
  if (d == 0 || h == 0) throw SchemaError("second-moment state: zero dimension");
  if (r.remaining() != d * h * 8) throw SchemaError("second-moment state: payload size mismatch");
  SecondMomentState s(d, h, beta2, eps);
  s.step = step;
  for (auto& v : s.v.values()) {
    v = r.f64();
    if (!std::isfinite(v) || v < 0.0) throw NumericError("second-moment state: invalid entry");
  }
  return s;
}

inline void save_state(const fs::path& path, const SecondMomentState& s) {
  atomic_write(path, encode_state(s));
}

inline SecondMomentState load_state(const fs::path& path) { return decode_state(read_file(path)); }

// ---------------------------------------------------------------------------
// Packed features

inline std::string encode_packed(std::span<const SampleRecord> records) {
  const std::size_t d = records.empty() ? 0 : records.front().feature.size();
  std::string out(kPackedMagic);
  detail::put_u64(out, d);
  detail::put_u64(out, records.size());
  for (const auto& r : records) {
    if (r.feature.size() != d) throw SchemaError("packed features: inconsistent length");
    detail::put_u64(out, static_cast<std::uint64_t>(r.id));
    detail::put_f64(out, r.loss);
    for (double v : r.feature) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline std::vector<SampleRecord> decode_packed(std::string_view bytes) {
  detail::ByteReader r(bytes, "packed features");
  r.magic(kPackedMagic);
  const auto d = r.u64();
  const auto count = r.u64();
  if (r.remaining() != count * (16 + 4 * d))
    throw SchemaError("packed features: payload size mismatch");
  std::vector<SampleRecord> out(count);
  for (auto& rec : out) {
    rec.id = static_cast<SampleId>(r.u64());
    rec.loss = r.f64();
    rec.feature.resize(d);
    for (auto& v : rec.feature) v = r.f32();
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL ingestion

struct IngestedBatch {
  std::size_t index = 0;
  std::size_t first_line = 0;           // 1-based line of the first record
  std::vector<SampleRecord> records;    // precomputed / packed
  std::vector<RawSample> raw;           // raw mode

  std::size_t size() const { return raw.empty() ? records.size() : raw.size(); }
};

namespace detail {

inline std::vector<double> real_array(const json& j, const char* field, std::size_t line) {
  if (!j.is_array())
    throw SchemaError("line " + std::to_string(line) + ": '" + field + "' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number())
      throw SchemaError("line " + std::to_string(line) + ": '" + field + "' has a non-numeric entry");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace detail

/// Streams validated batches of `batch_size` records from a file. The first
/// record fixes D (and H in raw mode) for the whole file.
class RecordReader {
 public:
  RecordReader(const fs::path& path, InputMode mode, std::size_t batch_size)
      : mode_(mode), batch_size_(batch_size) {
    if (batch_size_ == 0) throw ConfigError("batch size must be positive");
    if (!fs::exists(path)) throw ConfigError("input file '" + path.string() + "' does not exist");
    if (mode_ == InputMode::kPacked) {
      packed_ = decode_packed(read_file(path));
      if (!packed_.empty()) shape_.d = packed_.front().feature.size();
    } else {
      in_.open(path);
      if (!in_) throw ConfigError("cannot open '" + path.string() + "'");
    }
  }

  GradientShape shape() const noexcept { return shape_; }

  std::optional<IngestedBatch> next() {
    IngestedBatch b;
    b.index = batches_;
    std::unordered_set<SampleId> ids;
    while (b.size() < batch_size_) {
      if (mode_ == InputMode::kPacked) {
        if (packed_pos_ >= packed_.size()) break;
        const auto& rec = packed_[packed_pos_++];
        check_record(rec.id, rec.loss, packed_pos_, ids);
        if (b.records.empty()) b.first_line = packed_pos_;
        b.records.push_back(rec);
        continue;
      }
      std::string text;
      if (!std::getline(in_, text)) break;
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (b.size() == 0) b.first_line = line_;
      json j;
      try {
        j = json::parse(text);
      } catch (const json::parse_error& e) {
        throw SchemaError("line " + std::to_string(line_) + ": malformed record (" + e.what() + ")");
      }
      if (mode_ == InputMode::kRaw)
        b.raw.push_back(parse_raw(j, ids));
      else
        b.records.push_back(parse_precomputed(j, ids));
    }
    if (b.size() == 0) return std::nullopt;
    ++batches_;
    return b;
  }

 private:
  void common_fields(const json& j, SampleId& id, double& loss) const {
    if (!j.is_object()) throw SchemaError("line " + std::to_string(line_) + ": record must be an object");
    if (!j.contains("id") || !j["id"].is_number_integer())
      throw SchemaError("line " + std::to_string(line_) + ": missing integer 'id'");
    if (!j.contains("loss") || !j["loss"].is_number())
      throw SchemaError("line " + std::to_string(line_) + ": missing numeric 'loss'");
    id = j["id"].get<SampleId>();
    loss = j["loss"].get<double>();
  }

  void check_record(SampleId id, double loss, std::size_t where,
                    std::unordered_set<SampleId>& ids) const {
    if (!std::isfinite(loss))
      throw NumericError("record " + std::to_string(where) + ": non-finite loss");
    if (!ids.insert(id).second)
      throw IntegrityError("record " + std::to_string(where) + ": duplicate id " +
                           std::to_string(id) + " within batch");
  }

  SampleRecord parse_precomputed(const json& j, std::unordered_set<SampleId>& ids) {
    SampleRecord rec;
    common_fields(j, rec.id, rec.loss);
    if (!j.contains("feature"))
      throw SchemaError("line " + std::to_string(line_) + ": missing 'feature'");
    rec.feature = detail::real_array(j["feature"], "feature", line_);
    if (rec.feature.empty())
      throw SchemaError("line " + std::to_string(line_) + ": empty feature");
    if (shape_.d == 0) shape_.d = rec.feature.size();
    if (rec.feature.size() != shape_.d)
      throw SchemaError("line " + std::to_string(line_) + ": feature length " +
                        std::to_string(rec.feature.size()) + " != declared D " +
                        std::to_string(shape_.d));
    for (double v : rec.feature)
      if (!std::isfinite(v)) throw NumericError("line " + std::to_string(line_) + ": non-finite feature");
    check_record(rec.id, rec.loss, line_, ids);
    return rec;
  }

  RawSample parse_raw(const json& j, std::unordered_set<SampleId>& ids) {
    RawSample rec;
    common_fields(j, rec.id, rec.loss);
    if (!j.contains("tokens") || !j["tokens"].is_array())
      throw SchemaError("line " + std::to_string(line_) + ": missing 'tokens' array");
    std::vector<TokenGradientInput> tokens;
    for (const auto& t : j["tokens"]) {
      if (!t.is_object() || !t.contains("g") || !t.contains("h"))
        throw SchemaError("line " + std::to_string(line_) + ": token needs 'g' and 'h'");
      tokens.push_back({detail::real_array(t["g"], "g", line_), detail::real_array(t["h"], "h", line_)});
    }
    if (tokens.empty()) throw SchemaError("line " + std::to_string(line_) + ": empty token list");
    if (shape_.d == 0) shape_ = {tokens.front().output_grad.size(), tokens.front().hidden.size()};
    try {
      rec.gradient = sequence_gradient(tokens, shape_);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_) + ": " + e.what());
    }
    check_record(rec.id, rec.loss, line_, ids);
    return rec;
  }

  InputMode mode_;
  std::size_t batch_size_;
  std::ifstream in_;
  std::vector<SampleRecord> packed_;
  std::size_t packed_pos_ = 0;
  std::size_t line_ = 0;
  std::size_t batches_ = 0;
  GradientShape shape_;
};

inline std::vector<IngestedBatch> ingest_records(const fs::path& path, InputMode mode,
                                                 std::size_t batch_size) {
  RecordReader reader(path, mode, batch_size);
  std::vector<IngestedBatch> out;
  while (auto b = reader.next()) out.push_back(std::move(*b));
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline json coreset_entry_json(const CoresetEntry& e, std::size_t batch) {
  json j;
  j["id"] = e.id;
  j["order"] = e.order;
  j["weight"] = e.weight;
  j["stratum"] = e.stratum ? json(*e.stratum) : json(nullptr);
  j["min_dist_at_selection"] = e.min_dist_at_selection ? json(*e.min_dist_at_selection) : json(nullptr);
  j["batch"] = batch;
  return j;
}

inline void append_coreset_jsonl(std::string& out, const Coreset& c, std::size_t batch) {
  for (const auto& e : c.selected) {
    out += coreset_entry_json(e, batch).dump();
    out += '\n';
  }
}

}  // namespace slap::io

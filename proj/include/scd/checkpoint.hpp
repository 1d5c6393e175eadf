#pragma once

// Checkpoint container:
//   [u64 little-endian header length][UTF-8 JSON header][raw float32 LE blocks]
// The header names every block with its shape, byte offset, size and SHA-256.
// Non-diffusion checkpoints record the digests of the schema and embedding
// dictionary they were trained against and refuse to load against others.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "scd/classifier.hpp"
#include "scd/diffusion.hpp"
#include "scd/embedding.hpp"
#include "scd/nn.hpp"
#include "scd/plausibility.hpp"
#include "scd/tabular.hpp"
#include "scd/vae.hpp"

namespace scd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr int checkpoint_format_version = 1;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

/// float32 little-endian bytes of a tensor.
inline std::string float32_bytes(const Tensor& t) {
  std::string out(t.size() * sizeof(float), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t.data[i]);
    std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schema and dictionary identity

inline nlohmann::json to_json(const TableSchema& schema) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const ColumnSchema& col = schema.columns[c];
    nlohmann::json j = {{"name", col.name}, {"kind", to_string(col.kind)}, {"values", schema.vocabulary.values(c)}};
    if (col.kind == ColumnKind::numeric) {
      j["bin_edges"] = col.bin_edges;
      j["bin_representatives"] = col.bin_representatives;
    }
    cols.push_back(std::move(j));
  }
  return {{"columns", std::move(cols)}};
}

inline TableSchema schema_from_json(const nlohmann::json& j) {
  TableSchema schema;
  for (const auto& col : j.at("columns")) {
    ColumnSchema cs;
    cs.name = col.at("name").get<std::string>();
    const auto kind = col.at("kind").get<std::string>();
    if (kind != "numeric" && kind != "categorical") throw Error("column '" + cs.name + "': unknown kind '" + kind + "'");
    cs.kind = kind == "numeric" ? ColumnKind::numeric : ColumnKind::categorical;
    if (cs.kind == ColumnKind::numeric) {
      cs.bin_edges = col.at("bin_edges").get<std::vector<double>>();
      cs.bin_representatives = col.at("bin_representatives").get<std::vector<double>>();
    }
    const std::size_t c = schema.vocabulary.add_column();
    for (const auto& v : col.at("values")) schema.vocabulary.intern(c, v.get<std::string>());
    schema.columns.push_back(std::move(cs));
  }
  return schema;
}

inline std::string schema_digest(const TableSchema& schema) { return sha256_hex(to_json(schema).dump()); }

inline std::string dictionary_digest(const EmbeddingDictionary& dict) {
  std::string bytes;
  for (const Tensor& t : dict.tables) bytes += float32_bytes(t);
  return sha256_hex(bytes);
}

// ---------------------------------------------------------------------------
// Container

struct Checkpoint {
  std::string kind;
  nlohmann::json config;    // model-specific shapes and settings
  nlohmann::json metadata;  // creation metadata, preserved verbatim
  Parameters params;
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json blocks = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ck.params) {
    const std::string bytes = float32_bytes(t);
    blocks.push_back({{"name", name},
                      {"shape", t.shape},
                      {"offset", payload.size()},
                      {"size", bytes.size()},
                      {"sha256", sha256_hex(bytes)}});
    payload += bytes;
  }
  const nlohmann::json header = {{"format_version", checkpoint_format_version},
                                 {"kind", ck.kind},
                                 {"config", ck.config},
                                 {"metadata", ck.metadata},
                                 {"blocks", std::move(blocks)}};
  const std::string text = header.dump();
  std::string out(sizeof(std::uint64_t), '\0');
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, sizeof len);
  return out + text + payload;
}

inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
  if (bytes.size() < sizeof(std::uint64_t)) throw Error(source + ": truncated header length");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), sizeof len);
  if (len > bytes.size() - sizeof len) throw Error(source + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(sizeof len, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(source + ": malformed header: " + e.what());
  }
  if (header.value("format_version", -1) != checkpoint_format_version)
    throw Error(source + ": unsupported format version " + header.value("format_version", nlohmann::json()).dump());
  const std::string_view payload = bytes.substr(sizeof len + len);
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.metadata = header.at("metadata");
  for (const auto& block : header.at("blocks")) {
    const auto name = block.at("name").get<std::string>();
    const auto shape = block.at("shape").get<Shape>();
    const auto offset = block.at("offset").get<std::size_t>();
    const auto size = block.at("size").get<std::size_t>();
    if (size != shape_size(shape) * sizeof(float)) throw Error(source + ": block '" + name + "' size does not match shape");
    if (offset > payload.size() || size > payload.size() - offset)
      throw Error(source + ": block '" + name + "' extends past end of file");
    const std::string_view raw = payload.substr(offset, size);
    if (sha256_hex(raw) != block.at("sha256").get<std::string>())
      throw Error(source + ": digest mismatch in block '" + name + "'");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, raw.data() + i * sizeof(float), sizeof f);
      t.data[i] = f;
    }
    ck.params.emplace(name, std::move(t));
  }
  return ck;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, serialize_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

inline void expect_kind(const Checkpoint& ck, const std::string& kind) {
  if (ck.kind != kind) throw Error("expected a '" + kind + "' checkpoint, found '" + ck.kind + "'");
}

// ---------------------------------------------------------------------------
// Typed wrappers

inline Checkpoint to_checkpoint(const DiffusionModel& m, nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck{"diffusion", {}, std::move(metadata), m.denoiser.params};
  ck.config = {{"schema", to_json(m.schema)},
               {"schema_digest", schema_digest(m.schema)},
               {"schedule", {{"steps", m.schedule.steps}, {"offset", m.schedule.offset}}},
               {"embedding_width", m.dict.width},
               {"time_width", m.denoiser.time_width},
               {"hidden", m.denoiser.hidden},
               {"rounding_temperature", m.rounding_temperature}};
  m.dict.to_parameters(ck.params);
  return ck;
}

/// The schedule is rebuilt from (steps, offset); tables are never stored.
inline DiffusionModel diffusion_from_checkpoint(const Checkpoint& ck) {
  expect_kind(ck, "diffusion");
  DiffusionModel m;
  const auto& cfg = ck.config;
  m.schema = schema_from_json(cfg.at("schema"));
  if (schema_digest(m.schema) != cfg.at("schema_digest").get<std::string>())
    throw Error("diffusion checkpoint: schema does not match its recorded digest");
  m.schedule = cosine_schedule(cfg.at("schedule").at("steps").get<std::size_t>(),
                               cfg.at("schedule").at("offset").get<double>());
  m.rounding_temperature = cfg.at("rounding_temperature").get<double>();
  m.dict = EmbeddingDictionary::from_parameters(ck.params, m.schema.size());
  if (m.dict.width != cfg.at("embedding_width").get<std::size_t>()) throw Error("diffusion checkpoint: width mismatch");
  m.denoiser.input_width = m.dict.row_width();
  m.denoiser.time_width = cfg.at("time_width").get<std::size_t>();
  m.denoiser.hidden = cfg.at("hidden").get<std::size_t>();
  for (const auto& [name, t] : ck.params)
    if (name.rfind("embedding.", 0) != 0) m.denoiser.params.emplace(name, t);
  return m;
}

namespace detail {

inline nlohmann::json dependency_block(const TableSchema& schema, const EmbeddingDictionary* dict) {
  nlohmann::json j = {{"schema_digest", schema_digest(schema)}};
  if (dict) j["dictionary_digest"] = dictionary_digest(*dict);
  return j;
}

inline void check_dependency(const Checkpoint& ck, const TableSchema& schema, const EmbeddingDictionary* dict) {
  const auto& dep = ck.config.at("depends_on");
  const auto expected = dep.at("schema_digest").get<std::string>();
  const auto actual = schema_digest(schema);
  if (expected != actual)
    throw Error(ck.kind + " checkpoint expects schema digest " + expected + " but the loaded schema has digest " + actual);
  if (dict && dep.contains("dictionary_digest")) {
    const auto want = dep.at("dictionary_digest").get<std::string>();
    const auto have = dictionary_digest(*dict);
    if (want != have)
      throw Error(ck.kind + " checkpoint expects embedding dictionary digest " + want + " but the loaded dictionary has digest " +
                  have);
  }
}

}  // namespace detail

inline Checkpoint to_checkpoint(const ClassifierNet& f, const DiffusionModel& base,
                                nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck{"classifier", {}, std::move(metadata), f.params};
  ck.config = {{"input_width", f.input_width},
               {"hidden", f.hidden},
               {"classes", f.classes},
               {"label_name", f.label_name},
               {"class_names", f.class_names},
               {"depends_on", detail::dependency_block(base.schema, &base.dict)}};
  return ck;
}

inline ClassifierNet classifier_from_checkpoint(const Checkpoint& ck, const DiffusionModel& base) {
  expect_kind(ck, "classifier");
  detail::check_dependency(ck, base.schema, &base.dict);
  ClassifierNet f;
  f.input_width = ck.config.at("input_width").get<std::size_t>();
  f.hidden = ck.config.at("hidden").get<std::size_t>();
  f.classes = ck.config.at("classes").get<std::size_t>();
  f.label_name = ck.config.at("label_name").get<std::string>();
  f.class_names = ck.config.at("class_names").get<std::vector<std::string>>();
  f.params = ck.params;
  return f;
}

inline Checkpoint to_checkpoint(const ARPlausibilityModel& m, const TableSchema& schema,
                                nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck{"plausibility", {}, std::move(metadata), m.params};
  ck.config = {{"variant", to_string(m.variant)},
               {"cardinalities", m.cardinalities},
               {"hidden", m.config.hidden},
               {"layers", m.config.layers},
               {"heads", m.config.heads},
               {"depends_on", detail::dependency_block(schema, nullptr)}};
  return ck;
}

inline ARPlausibilityModel plausibility_from_checkpoint(const Checkpoint& ck, const TableSchema& schema) {
  expect_kind(ck, "plausibility");
  detail::check_dependency(ck, schema, nullptr);
  ARPlausibilityModel m;
  m.variant = parse_ar_variant(ck.config.at("variant").get<std::string>());
  m.cardinalities = ck.config.at("cardinalities").get<std::vector<std::size_t>>();
  m.config.hidden = ck.config.at("hidden").get<std::size_t>();
  m.config.layers = ck.config.at("layers").get<std::size_t>();
  m.config.heads = ck.config.at("heads").get<std::size_t>();
  m.params = ck.params;
  return m;
}

inline Checkpoint to_checkpoint(const TabularVAE& m, const DiffusionModel& base,
                                nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck{"vae", {}, std::move(metadata), m.params};
  ck.config = {{"input_width", m.input_width},
               {"hidden", m.hidden},
               {"latent", m.latent},
               {"depends_on", detail::dependency_block(base.schema, &base.dict)}};
  return ck;
}

inline TabularVAE vae_from_checkpoint(const Checkpoint& ck, const DiffusionModel& base) {
  expect_kind(ck, "vae");
  detail::check_dependency(ck, base.schema, &base.dict);
  TabularVAE m;
  m.input_width = ck.config.at("input_width").get<std::size_t>();
  m.hidden = ck.config.at("hidden").get<std::size_t>();
  m.latent = ck.config.at("latent").get<std::size_t>();
  m.params = ck.params;
  return m;
}

}  // namespace scd

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "moe_affect/data_model.hpp"
#include "moe_affect/param_store.hpp"

#include <nlohmann/json.hpp>

namespace moe_affect {

namespace detail {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline std::uint16_t get_u16(std::istream& is, const std::string& file) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw std::runtime_error(file + ": truncated at offset " + std::to_string(is.tellg()));
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(file + ": truncated read");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is, const std::string& file) {
  std::uint32_t u = get_u32(is, file);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void get_f32_block(std::istream& is, float* dst, std::size_t count, const std::string& file) {
  std::vector<unsigned char> buf(count * 4);
  if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
    throw std::runtime_error(file + ": truncated payload at offset " + std::to_string(is.tellg()));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = std::uint32_t(buf[4 * i]) | (std::uint32_t(buf[4 * i + 1]) << 8) |
                      (std::uint32_t(buf[4 * i + 2]) << 16) | (std::uint32_t(buf[4 * i + 3]) << 24);
    std::memcpy(dst + i, &u, 4);
  }
}

inline void expect_magic(std::istream& is, const char* magic, const std::string& file) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error(file + ": bad magic, expected " + std::string(magic, 4));
}

struct Fnv1a64 {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  void update_str(const std::string& s) {
    update(s.data(), s.size());
    unsigned char z = 0;
    update(&z, 1);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

}  // namespace detail

/// Checksum over (id, branch, row-bytes) triples; stored in the manifest and
/// verified on read so misaligned branch files are caught.
inline std::string bundle_checksum(const EmbeddingBundle& b) {
  detail::Fnv1a64 h;
  for (const auto& spec : b.branches) {
    for (std::size_t i = 0; i < b.ids.size(); ++i) {
      h.update_str(b.ids[i]);
      h.update_str(spec.name);
      if (spec.kind == BranchKind::vector) {
        const Mat<float>& m = b.vectors.at(spec.name);
        h.update(&m.a[i * spec.dim], spec.dim * 4);
      } else {
        const Mat<float>& m = b.sequences.at(spec.name)[i];
        h.update(m.a.data(), m.a.size() * 4);
      }
    }
  }
  return h.hex();
}

inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  detail::Fnv1a64 h;
  char buf[65536];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) h.update(buf, std::size_t(is.gcount()));
  return h.hex();
}

inline void write_bundle(const EmbeddingBundle& b, const std::filesystem::path& dir) {
  b.validate();
  std::filesystem::create_directories(dir);
  for (const auto& spec : b.branches) {
    if (spec.kind == BranchKind::vector) {
      std::ofstream os(dir / (spec.name + ".emb"), std::ios::binary);
      if (!os) throw std::runtime_error("cannot write " + (dir / (spec.name + ".emb")).string());
      os.write("EMB1", 4);
      const Mat<float>& m = b.vectors.at(spec.name);
      detail::put_u32(os, std::uint32_t(m.rows));
      detail::put_u32(os, std::uint32_t(m.cols));
      for (float v : m.a) detail::put_f32(os, v);
    } else {
      std::ofstream os(dir / (spec.name + ".seq"), std::ios::binary);
      if (!os) throw std::runtime_error("cannot write " + (dir / (spec.name + ".seq")).string());
      os.write("SEQ1", 4);
      const auto& seqs = b.sequences.at(spec.name);
      detail::put_u32(os, std::uint32_t(seqs.size()));
      detail::put_u32(os, std::uint32_t(spec.dim));
      for (const auto& m : seqs) {
        detail::put_u32(os, std::uint32_t(m.rows));
        for (float v : m.a) detail::put_f32(os, v);
      }
    }
  }
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["ids"] = b.ids;
  manifest["branches"] = nlohmann::json::array();
  for (const auto& spec : b.branches)
    manifest["branches"].push_back(
        {{"name", spec.name},
         {"kind", spec.kind == BranchKind::vector ? "vector" : "sequence"},
         {"dim", spec.dim}});
  if (!b.labels.empty()) {
    manifest["labels_file"] = "labels.csv";
    std::ofstream os(dir / "labels.csv");
    os << "id,label\n";
    for (const auto& id : b.ids) {
      auto it = b.labels.find(id);
      if (it != b.labels.end()) os << id << ',' << to_string(it->second) << '\n';
    }
  }
  manifest["checksum"] = bundle_checksum(b);
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

inline EmbeddingBundle read_bundle(const std::filesystem::path& dir) {
  auto manifest_path = dir / "manifest.json";
  std::ifstream ms(manifest_path);
  if (!ms) throw std::runtime_error("missing file: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", 0) != 1)
    throw std::runtime_error(manifest_path.string() + ": unsupported format_version");

  EmbeddingBundle b;
  b.ids = manifest.at("ids").get<std::vector<std::string>>();
  for (const auto& j : manifest.at("branches")) {
    BranchSpec spec;
    spec.name = j.at("name").get<std::string>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "vector")
      spec.kind = BranchKind::vector;
    else if (kind == "sequence")
      spec.kind = BranchKind::sequence;
    else
      throw std::runtime_error(manifest_path.string() + ": unknown branch kind " + kind);
    spec.dim = j.at("dim").get<std::size_t>();
    b.branches.push_back(spec);
  }

  for (const auto& spec : b.branches) {
    if (spec.kind == BranchKind::vector) {
      auto path = dir / (spec.name + ".emb");
      std::ifstream is(path, std::ios::binary);
      if (!is) throw std::runtime_error("missing file: " + path.string());
      std::string fname = path.string();
      detail::expect_magic(is, "EMB1", fname);
      std::uint32_t rows = detail::get_u32(is, fname);
      std::uint32_t cols = detail::get_u32(is, fname);
      if (rows != b.ids.size())
        throw std::runtime_error(fname + ": row count " + std::to_string(rows) +
                                 " does not match manifest id count");
      if (cols != spec.dim)
        throw std::runtime_error(fname + ": dimension mismatch, header says " +
                                 std::to_string(cols) + " but manifest declares " +
                                 std::to_string(spec.dim));
      Mat<float> m(rows, cols);
      if (!m.a.empty()) detail::get_f32_block(is, m.a.data(), m.a.size(), fname);
      if (!m.all_finite()) throw std::runtime_error(fname + ": non-finite payload");
      b.vectors[spec.name] = std::move(m);
    } else {
      auto path = dir / (spec.name + ".seq");
      std::ifstream is(path, std::ios::binary);
      if (!is) throw std::runtime_error("missing file: " + path.string());
      std::string fname = path.string();
      detail::expect_magic(is, "SEQ1", fname);
      std::uint32_t n = detail::get_u32(is, fname);
      std::uint32_t dim = detail::get_u32(is, fname);
      if (n != b.ids.size())
        throw std::runtime_error(fname + ": sample count mismatch vs manifest");
      if (dim != spec.dim)
        throw std::runtime_error(fname + ": dimension mismatch, header says " +
                                 std::to_string(dim) + " but manifest declares " +
                                 std::to_string(spec.dim));
      std::vector<Mat<float>> seqs;
      seqs.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t t = detail::get_u32(is, fname);
        if (t < 1)
          throw std::runtime_error(fname + ": empty sequence at record index " + std::to_string(i));
        Mat<float> m(t, dim);
        detail::get_f32_block(is, m.a.data(), m.a.size(), fname);
        if (!m.all_finite())
          throw std::runtime_error(fname + ": non-finite payload at record index " + std::to_string(i));
        seqs.push_back(std::move(m));
      }
      b.sequences[spec.name] = std::move(seqs);
    }
  }

  if (manifest.contains("labels_file")) {
    auto path = dir / manifest.at("labels_file").get<std::string>();
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing file: " + path.string());
    std::string line;
    std::getline(is, line);  // header
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto comma = line.find(',');
      if (comma == std::string::npos)
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      b.labels[line.substr(0, comma)] = parse_emotion_or_throw(line.substr(comma + 1));
    }
  }

  b.validate();
  std::string expected = manifest.at("checksum").get<std::string>();
  std::string actual = bundle_checksum(b);
  if (expected != actual)
    throw std::runtime_error(manifest_path.string() + ": checksum mismatch (manifest " + expected +
                             ", data " + actual + ")");
  return b;
}

inline void write_predictions(const PredictionSet& ps, const std::filesystem::path& path) {
  ps.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    nlohmann::json j;
    j["id"] = ps.ids[i];
    std::vector<double> row(&ps.probs(i, 0), &ps.probs(i, 0) + kNumClasses);
    j["probs"] = row;
    j["label"] = std::string(to_string(ps.labels[i]));
    os << j.dump() << '\n';
  }
}

inline PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  PredictionSet ps;
  std::vector<std::array<double, kNumClasses>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed line: " + e.what());
    }
    std::string where = path.string() + ":" + std::to_string(lineno);
    if (!j.contains("id") || !j.contains("probs") || !j.contains("label"))
      throw std::runtime_error(where + ": missing required field");
    auto probs = j.at("probs").get<std::vector<double>>();
    if (probs.size() != kNumClasses)
      throw std::runtime_error(where + ": expected 6 probabilities");
    double sum = 0;
    for (double p : probs) {
      if (!std::isfinite(p) || p < 0 || p > 1)
        throw std::runtime_error(where + ": probability out of [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-5)
      throw std::runtime_error(where + ": probability row sums to " + std::to_string(sum));
    if (std::abs(sum - 1.0) > 1e-12)
      for (double& p : probs) p /= sum;
    auto label = parse_emotion(j.at("label").get<std::string>());
    if (!label) throw std::runtime_error(where + ": unknown label " + j.at("label").get<std::string>());
    ps.ids.push_back(j.at("id").get<std::string>());
    std::array<double, kNumClasses> row{};
    std::copy(probs.begin(), probs.end(), row.begin());
    rows.push_back(row);
  }
  ps.probs = Mat<double>(rows.size(), kNumClasses);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < kNumClasses; ++j) ps.probs(i, j) = rows[i][j];
  ps.recompute_labels();
  ps.validate();
  return ps;
}

inline void write_vlm_records(const std::vector<VlmKnowledgeRecord>& recs,
                              const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : recs) {
    r.validate();
    nlohmann::json j = r.extra;
    j["id"] = r.id;
    j["reasoning"] = r.reasoning;
    nlohmann::json conf;
    for (std::size_t k = 0; k < kNumClasses; ++k)
      conf[std::string(kClassNames[k])] = r.confidence[k];
    j["confidence"] = conf;
    j["label"] = std::string(to_string(r.label));
    j["modality_contribution"] = r.modality_contribution;
    os << j.dump() << '\n';
  }
}

inline std::vector<VlmKnowledgeRecord> read_vlm_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  std::vector<VlmKnowledgeRecord> out;
  std::set<SampleId> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + ": malformed line: " + e.what());
    }
    VlmKnowledgeRecord r;
    r.id = j.at("id").get<std::string>();
    if (!seen.insert(r.id).second) throw std::runtime_error(where + ": duplicate id " + r.id);
    r.reasoning = j.value("reasoning", "");
    auto label = parse_emotion(j.at("label").get<std::string>());
    if (!label)
      throw std::runtime_error(where + ": label outside taxonomy: " + j.at("label").get<std::string>());
    r.label = *label;
    if (j.contains("confidence"))
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        auto key = std::string(kClassNames[k]);
        if (j["confidence"].contains(key)) r.confidence[k] = j["confidence"][key].get<double>();
      }
    if (j.contains("modality_contribution"))
      r.modality_contribution = j["modality_contribution"].get<std::map<std::string, double>>();
    // keep any fields we do not know about
    r.extra = j;
    for (const char* known : {"id", "reasoning", "confidence", "label", "modality_contribution"})
      r.extra.erase(known);
    try {
      r.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Parameter checkpoint: magic "CKPT", u32 LE tensor count, then per tensor
/// u16 LE name length, name bytes, u8 rank, u32 LE dims, float32 LE payload.
/// All tensors here are rank 2.
inline void write_checkpoint(const ParamStore<float>& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("CKPT", 4);
  std::size_t count = 0;
  for (const auto& [name, e] : store) ++count;
  detail::put_u32(os, std::uint32_t(count));
  for (const auto& [name, e] : store) {
    detail::put_u16(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    os.put(char(2));
    detail::put_u32(os, std::uint32_t(e.value.rows));
    detail::put_u32(os, std::uint32_t(e.value.cols));
    for (float v : e.value.a) detail::put_f32(os, v);
  }
}

inline ParamStore<float> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  std::string fname = path.string();
  detail::expect_magic(is, "CKPT", fname);
  std::uint32_t count = detail::get_u32(is, fname);
  ParamStore<float> store;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::uint16_t len = detail::get_u16(is, fname);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error(fname + ": truncated name");
    int rank = is.get();
    if (rank != 2) throw std::runtime_error(fname + ": unsupported tensor rank");
    std::uint32_t rows = detail::get_u32(is, fname);
    std::uint32_t cols = detail::get_u32(is, fname);
    Mat<float> m(rows, cols);
    if (!m.a.empty()) detail::get_f32_block(is, m.a.data(), m.a.size(), fname);
    store.add(name, std::move(m));
  }
  return store;
}

}  // namespace moe_affect

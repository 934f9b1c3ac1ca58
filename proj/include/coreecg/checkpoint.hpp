#pragma once

// Checkpoint container: magic "CKPT", u32 header length, JSON header with a
// config hash, step counter, and per-tensor (name, dtype, shape, nbytes)
// entries, followed by little-endian row-major value blobs in header order.
// Save -> load round trips are bitwise.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coreecg/model.hpp"

namespace coreecg {

struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t step = 0;
};

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path,
                     const CheckpointMeta& meta) {
  nlohmann::json hdr;
  hdr["config_hash"] = meta.config_hash;
  hdr["step"] = meta.step;
  hdr["tensors"] = nlohmann::json::array();
  for (const Param<T>* p : store.all()) {
    nlohmann::json t;
    t["name"] = p->name;
    t["dtype"] = dtype_name(dtype_of<T>());
    t["shape"] = p->shape;
    t["nbytes"] = p->size() * sizeof(T);
    hdr["tensors"].push_back(t);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  const std::string h = hdr.dump();
  os.write("CKPT", 4);
  const auto len = static_cast<std::uint32_t>(h.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Param<T>* p : store.all())
    os.write(reinterpret_cast<const char*>(p->value->data()),
             static_cast<std::streamsize>(p->size() * sizeof(T)));
  if (!os) throw DataError("write failed: " + path);
}

namespace detail {

struct CkptEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::size_t nbytes = 0;
  std::size_t offset = 0;  // into the blob section
};

struct CkptFile {
  CheckpointMeta meta;
  std::vector<CkptEntry> entries;
  std::size_t blob_start = 0;
};

inline CkptFile read_ckpt_header(std::ifstream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CKPT", 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string h(len, '\0');
  is.read(h.data(), len);
  if (!is) throw DataError("checkpoint header truncated: " + path);
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint JSON in " + path + ": " + e.what());
  }
  CkptFile f;
  f.meta.config_hash = hdr.value("config_hash", "");
  f.meta.step = hdr.value("step", 0ull);
  std::size_t off = 0;
  for (const auto& t : hdr.value("tensors", nlohmann::json::array())) {
    CkptEntry e;
    e.name = t.at("name").get<std::string>();
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    e.nbytes = t.at("nbytes").get<std::size_t>();
    e.offset = off;
    off += e.nbytes;
    f.entries.push_back(std::move(e));
  }
  f.blob_start = 4 + sizeof(std::uint32_t) + len;
  return f;
}

template <typename T>
void load_entry(std::ifstream& is, const CkptFile& f, const CkptEntry& e, Param<T>& p,
                const std::string& path) {
  if (e.dtype != dtype_name(dtype_of<T>()))
    throw DataError("unsupported dtype for '" + e.name + "' in " + path + ": file has " +
                    e.dtype + ", store expects " + dtype_name(dtype_of<T>()));
  if (e.shape != p.shape)
    throw ShapeError("checkpoint shape mismatch for '" + e.name + "': file " +
                     shape_str(e.shape) + " vs model " + shape_str(p.shape));
  if (e.nbytes != p.size() * sizeof(T))
    throw DataError("checkpoint byte count mismatch for '" + e.name + "'");
  is.seekg(static_cast<std::streamoff>(f.blob_start + e.offset));
  is.read(reinterpret_cast<char*>(p.value->data()), static_cast<std::streamsize>(e.nbytes));
  if (!is) throw DataError("checkpoint payload truncated at '" + e.name + "' in " + path);
}

}  // namespace detail

// Strict load: every parameter in the store must be present in the file.
template <typename T>
CheckpointMeta load_checkpoint(ParamStore<T>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  auto f = detail::read_ckpt_header(is, path);
  for (Param<T>* p : store.all()) {
    const detail::CkptEntry* found = nullptr;
    for (const auto& e : f.entries)
      if (e.name == p->name) {
        found = &e;
        break;
      }
    if (!found) throw DataError("checkpoint " + path + " is missing parameter '" + p->name + "'");
    detail::load_entry(is, f, *found, *p, path);
  }
  return f.meta;
}

// Load only parameters whose name starts with one of the prefixes (used to
// initialize fine-tuning from a pretrained encoder). Returns the load count.
template <typename T>
std::size_t load_checkpoint_prefixes(ParamStore<T>& store, const std::string& path,
                                     const std::vector<std::string>& prefixes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  auto f = detail::read_ckpt_header(is, path);
  std::size_t loaded = 0;
  for (Param<T>* p : store.all()) {
    bool wanted = false;
    for (const auto& pre : prefixes)
      if (p->name.rfind(pre, 0) == 0) wanted = true;
    if (!wanted) continue;
    const detail::CkptEntry* found = nullptr;
    for (const auto& e : f.entries)
      if (e.name == p->name) {
        found = &e;
        break;
      }
    if (!found) throw DataError("checkpoint " + path + " is missing parameter '" + p->name + "'");
    detail::load_entry(is, f, *found, *p, path);
    ++loaded;
  }
  if (loaded == 0) throw DataError("no parameters matched the requested prefixes in " + path);
  return loaded;
}

inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  return detail::read_ckpt_header(is, path).meta;
}

}  // namespace coreecg

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "untrack/errors.hpp"
#include "untrack/linear.hpp"
#include "untrack/tensor.hpp"

namespace untrack {

// UTT1 tensor file: magic "UTT1", u32 LE rank, rank x u64 LE extents, then
// raw little-endian f64 data. Shared by checkpoints and datasets.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(buf, v);
}

struct ByteReader {
  const unsigned char* p;
  std::size_t size;
  std::size_t off = 0;
  std::string where;

  void need(std::size_t n, const char* what) {
    if (off + n > size) {
      throw FormatError(where + ": truncated while reading " + std::string(what) +
                        " at offset " + std::to_string(off));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t v = u64(what);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

}  // namespace detail

inline std::string encode_utt1(const Tensor& t) {
  std::string buf;
  buf.reserve(16 + t.dims().size() * 8 + t.size() * 8);
  buf.append("UTT1");
  detail::put_u32(buf, static_cast<std::uint32_t>(t.dims().size()));
  for (std::size_t d : t.dims()) detail::put_u64(buf, d);
  for (double v : t.data()) detail::put_f64(buf, v);
  return buf;
}

inline Tensor decode_utt1(const std::string& bytes, const std::string& where) {
  detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                       bytes.size(), 0, where};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "UTT1", 4) != 0) {
    throw FormatError(where + ": bad magic at offset 0, expected UTT1");
  }
  r.off = 4;
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > 8) {
    throw FormatError(where + ": implausible rank " + std::to_string(rank) +
                      " at offset 4");
  }
  std::vector<std::size_t> dims(rank);
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t e = r.u64("extent");
    if (e == 0 || e > (1ull << 32)) {
      throw FormatError(where + ": implausible extent " + std::to_string(e));
    }
    dims[i] = static_cast<std::size_t>(e);
    total *= dims[i];
  }
  r.need(total * 8, "data");
  std::vector<double> data(total);
  for (std::size_t i = 0; i < total; ++i) data[i] = r.f64("data");
  if (r.off != bytes.size()) {
    throw FormatError(where + ": trailing bytes at offset " + std::to_string(r.off));
  }
  return Tensor(std::move(dims), std::move(data));
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_utt1(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  return decode_utt1(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Checkpoint container: directory with manifest.txt ("name file trainable")
// plus one UTT1 file per tensor. The run config text is stored alongside so
// a checkpoint can be rebuilt without external context.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& dir, const ParamList& params,
                            const std::string& config_text) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  std::size_t idx = 0;
  for (const ParamEntry& e : params) {
    const std::string file = "t" + std::to_string(idx++) + ".utt";
    write_tensor(dir / file, e.tensor);
    manifest += e.name + " " + file + " " + (e.tensor.requires_grad() ? "1" : "0") + "\n";
  }
  write_file_atomic(dir / "config.txt", config_text);
  write_file_atomic(dir / "manifest.txt", manifest);
}

struct CheckpointEntry {
  std::string file;
  bool trainable = false;
};

// Loads tensors by name into an existing parameter list; dims must match.
inline void load_checkpoint(const std::filesystem::path& dir, ParamList& params) {
  const std::filesystem::path manifest_path = dir / "manifest.txt";
  const std::string text = read_file(manifest_path);
  std::map<std::string, CheckpointEntry> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file, flag;
    if (!(ls >> name >> file >> flag) || (flag != "0" && flag != "1")) {
      throw FormatError(manifest_path.string() + ": malformed line " +
                        std::to_string(line_no));
    }
    entries[name] = CheckpointEntry{file, flag == "1"};
  }
  for (ParamEntry& e : params) {
    auto it = entries.find(e.name);
    if (it == entries.end()) {
      throw ConfigError("checkpoint missing tensor '" + e.name + "'");
    }
    Tensor loaded = read_tensor(dir / it->second.file);
    if (loaded.dims() != e.tensor.dims()) {
      throw ConfigError("checkpoint tensor '" + e.name + "' dims " +
                        dims_string(loaded) + " do not match model " +
                        dims_string(e.tensor));
    }
    e.tensor.data() = loaded.data();
    e.tensor.set_requires_grad(it->second.trainable);
  }
}

inline std::string read_checkpoint_config(const std::filesystem::path& dir) {
  return read_file(dir / "config.txt");
}

}  // namespace untrack

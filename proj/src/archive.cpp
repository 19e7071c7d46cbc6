#include "infoscc/archive.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef INFOSCC_REVISION
#define INFOSCC_REVISION "unknown"
#endif

namespace infoscc {
namespace {

constexpr char kMagic[8] = {'I', 'S', 'C', 'C', 'A', 'R', 'C', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated archive header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

Json read_header_stream(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint archive");
  }
  const std::uint64_t size = read_u64(in);
  if (size > (std::uint64_t(1) << 32)) throw CheckpointError(path.string() + ": corrupt header length");
  std::string text(size, '\0');
  if (!in.read(text.data(), std::streamsize(size))) {
    throw CheckpointError(path.string() + ": truncated archive header");
  }
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt archive header: " + e.what());
  }
}

}  // namespace

std::string Fnv1a::hex() const {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << state_;
  return out.str();
}

std::string build_revision() { return INFOSCC_REVISION; }

void ArchiveWriter::put(const std::string& name, const std::string& dtype, Index rows, Index cols,
                        std::string bytes) {
  blobs_[name] = Blob{dtype, rows, cols, std::move(bytes)};
}

void ArchiveWriter::write(const std::filesystem::path& path) const {
  Json table = Json::array();
  Fnv1a hash;
  std::uint64_t offset = 0;
  for (const auto& [name, b] : blobs_) {
    table.push_back({{"name", name},
                     {"dtype", b.dtype},
                     {"rows", b.rows},
                     {"cols", b.cols},
                     {"offset", offset},
                     {"size", b.bytes.size()}});
    hash.update(b.bytes.data(), b.bytes.size());
    offset += b.bytes.size();
  }
  Json header = {{"format", "infoscc-archive"},
                 {"version", 1},
                 {"kind", kind_},
                 {"metadata", metadata_},
                 {"blobs", table},
                 {"payload_size", offset},
                 {"payload_hash", hash.hex()}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& [name, b] : blobs_) out.write(b.bytes.data(), std::streamsize(b.bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json Archive::read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_header_stream(in, path);
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const Json header = read_header_stream(in, path);

  Archive archive;
  try {
    archive.kind_ = header.at("kind").get<std::string>();
    archive.metadata_ = header.at("metadata");
    archive.payload_hash_ = header.at("payload_hash").get<std::string>();
    const std::uint64_t payload_size = header.at("payload_size").get<std::uint64_t>();
    std::string payload(payload_size, '\0');
    if (!in.read(payload.data(), std::streamsize(payload_size)) ||
        std::uint64_t(in.gcount()) != payload_size) {
      throw CheckpointError(path.string() + ": truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw CheckpointError(path.string() + ": trailing bytes after payload");
    }
    Fnv1a hash;
    hash.update(payload.data(), payload.size());
    if (hash.hex() != archive.payload_hash_) {
      throw CheckpointError(path.string() + ": payload hash mismatch");
    }
    for (const auto& entry : header.at("blobs")) {
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto size = entry.at("size").get<std::uint64_t>();
      if (offset + size > payload_size) throw CheckpointError(path.string() + ": blob out of bounds");
      Blob b;
      b.dtype = entry.at("dtype").get<std::string>();
      b.rows = entry.at("rows").get<Index>();
      b.cols = entry.at("cols").get<Index>();
      b.bytes = payload.substr(offset, size);
      archive.blobs_.emplace(entry.at("name").get<std::string>(), std::move(b));
    }
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": malformed archive header: " + e.what());
  }
  return archive;
}

}  // namespace infoscc

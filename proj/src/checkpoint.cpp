#include "gdmsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace gdmsr::io {

namespace {
constexpr char kMagic[6] = {'G', 'D', 'M', 'S', 'R', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const num::ParamSet& params) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const num::Parameter* p : params.all()) {
    nlohmann::json t;
    t["name"] = p->name;
    t["shape"] = p->shape;
    t["offset"] = offset;
    header["tensors"].push_back(std::move(t));
    offset += static_cast<uint64_t>(p->size()) * sizeof(float);
  }
  const std::string hdr = header.dump();
  check(hdr.size() <= UINT32_MAX, "save_checkpoint: header too large");

  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open ", path.string(), " for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint32_t hlen = static_cast<uint32_t>(hdr.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  std::vector<float> buf;
  for (const num::Parameter* p : params.all()) {
    buf.resize(p->value.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  check(out.good(), "write failed for ", path.string());
}

num::ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint ", path.string());
  char magic[6];
  in.read(magic, sizeof(magic));
  check(in.gcount() == sizeof(magic) && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
        path.string(), ": not a GDMSR1 checkpoint");
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(in.gcount() == sizeof(hlen), path.string(), ": truncated header length");
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), hlen);
  check(in.gcount() == static_cast<std::streamsize>(hlen), path.string(), ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hdr);
  } catch (const std::exception& e) {
    fail(path.string(), ": bad checkpoint header: ", e.what());
  }
  check(header.contains("tensors") && header["tensors"].is_array(), path.string(),
        ": checkpoint header lists no tensors");

  num::ParamSet params;
  const std::streampos data_start = in.tellg();
  for (const auto& t : header["tensors"]) {
    check(t.contains("name") && t.contains("shape") && t.contains("offset"), path.string(),
          ": malformed tensor entry");
    num::Shape shape = t["shape"].get<num::Shape>();
    num::Parameter& p = params.add(t["name"].get<std::string>(), shape);
    const uint64_t offset = t["offset"].get<uint64_t>();
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    std::vector<float> buf(p.value.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    check(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)), path.string(),
          ": truncated tensor data for '", p.name, "'");
    for (size_t i = 0; i < buf.size(); ++i) p.value[i] = static_cast<double>(buf[i]);
  }
  return params;
}

}  // namespace gdmsr::io

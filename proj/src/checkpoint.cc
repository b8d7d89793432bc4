#include "gf/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gf/common.h"

namespace gf {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; big-endian hosts are unsupported");

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

namespace container {

static void write_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

static uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_file(const std::string& path, const char magic[8],
                const nlohmann::json& header_in, const std::vector<float>& payload) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open '", path, "' for writing");
  os.write(magic, 8);
  nlohmann::json header = header_in;
  header["payload_hash"] =
      hash_hex(fnv1a64(payload.data(), payload.size() * sizeof(float)));
  const std::string h = header.dump();
  write_u64_le(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  os.flush();
  check(os.good(), "write failed for '", path, "'");
}

Loaded read_file(const std::string& path, const char magic[8]) {
  std::ifstream is(path, std::ios::binary);
  check_input(is.good(), "cannot open '", path, "'");
  char m[8];
  is.read(m, 8);
  check_input(is.good() && std::memcmp(m, magic, 8) == 0,
              "'", path, "': bad magic, not a ", std::string(magic, 8), " file");
  const uint64_t hlen = read_u64_le(is);
  check_input(is.good() && hlen > 0 && hlen < (1ULL << 31),
              "'", path, "': corrupt header length");
  std::string htext(hlen, '\0');
  is.read(htext.data(), static_cast<std::streamsize>(hlen));
  check_input(is.good(), "'", path, "': truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    fail_input("'", path, "': header is not valid JSON: ", e.what());
  }
  std::vector<char> raw(std::istreambuf_iterator<char>(is), {});
  check_input(raw.size() % sizeof(float) == 0, "'", path, "': payload size not a multiple of 4");
  std::vector<float> payload(raw.size() / sizeof(float));
  if (!raw.empty()) std::memcpy(payload.data(), raw.data(), raw.size());
  if (header.contains("payload_hash")) {
    const std::string want = header.at("payload_hash").get<std::string>();
    const std::string got = hash_hex(fnv1a64(raw.data(), raw.size()));
    check_input(want == got, "'", path, "': payload hash mismatch (header ", want,
                ", computed ", got, ")");
  }
  return {std::move(header), std::move(payload)};
}

}  // namespace container

static const char kCheckpointMagic[8] = {'G', 'F', 'T', 'E', 'N', 'S', '1', '\n'};

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& meta) {
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(params.total_numel()));
  nlohmann::json tensors = nlohmann::json::object();
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    nlohmann::json rec;
    rec["shape"] = t.shape;
    rec["offset"] = payload.size() * sizeof(float);
    rec["nbytes"] = t.data.size() * sizeof(float);
    rec["order"] = i;
    tensors[params.names()[i]] = std::move(rec);
    payload.insert(payload.end(), t.data.begin(), t.data.end());
  }
  nlohmann::json header;
  header["format"] = "gf-tensors-v1";
  header["tensors"] = std::move(tensors);
  header["meta"] = meta;
  container::write_file(path, kCheckpointMagic, header, payload);
}

void load_checkpoint(const std::string& path, ParamSet& params) {
  container::Loaded file = container::read_file(path, kCheckpointMagic);
  check_input(file.header.contains("tensors"), "'", path, "': missing tensor table");
  const auto& tensors = file.header.at("tensors");
  check_input(tensors.size() == params.size(), "'", path, "': checkpoint has ",
              tensors.size(), " tensors, model expects ", params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    Tensor& t = params.at(i);
    check_input(tensors.contains(name), "'", path, "': missing tensor '", name, "'");
    const auto& rec = tensors.at(name);
    const std::vector<int> shape = rec.at("shape").get<std::vector<int>>();
    check_input(shape == t.shape, "'", path, "': tensor '", name, "' shape mismatch");
    const uint64_t offset = rec.at("offset").get<uint64_t>();
    const uint64_t nbytes = rec.at("nbytes").get<uint64_t>();
    check_input(offset % sizeof(float) == 0 && nbytes == t.data.size() * sizeof(float) &&
                    (offset + nbytes) / sizeof(float) <= file.payload.size(),
                "'", path, "': tensor '", name, "' payload out of range");
    std::copy_n(file.payload.begin() + static_cast<ptrdiff_t>(offset / sizeof(float)),
                t.data.size(), t.data.begin());
  }
}

nlohmann::json read_checkpoint_meta(const std::string& path) {
  container::Loaded file = container::read_file(path, kCheckpointMagic);
  return file.header.contains("meta") ? file.header.at("meta")
                                      : nlohmann::json::object();
}

}  // namespace gf

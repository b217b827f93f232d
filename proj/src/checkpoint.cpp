#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "acg/errors.hpp"
#include "acg/hash.hpp"
#include "acg/runtime.hpp"

namespace acg::runtime {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

std::string checkpoint_bytes(const Model& model) {
  if (!model.net) throw ContractError("checkpoint of an empty model");
  nlohmann::ordered_json header;
  header["format_version"] = kVersion;
  header["architecture"] = models::to_string(model.arch);
  header["epoch"] = model.epoch;
  header["hyper"] = net::to_json(model.net->hyper());
  header["vocab_hash"] = text::hex64(model.vocab.hash());
  header["vocab"] = model.vocab.words();
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : model.net->params()) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["params"] = std::move(params);
  header["meta"] = model.meta;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& p : model.net->params()) {
    out.append(reinterpret_cast<const char*>(p.value.data()), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

Model parse_checkpoint(std::string_view bytes, const std::string& origin) {
  const auto fail = [&](const std::string& why) { return ParseError(origin + ": corrupt checkpoint: " + why); };
  constexpr std::size_t fixed = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed + sizeof(std::uint64_t)) throw fail("truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw fail("bad magic");
  const auto version = get<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kVersion) throw fail("unsupported version " + std::to_string(version));
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  if (get<std::uint64_t>(bytes, body) != fnv1a(bytes.substr(0, body))) throw fail("checksum mismatch");
  const auto header_len = get<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (header_len > body - fixed) throw fail("header length out of range");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("header: ") + e.what());
  }

  Model m;
  try {
    m.arch = models::parse_architecture(header.at("architecture").get<std::string>());
    m.epoch = header.at("epoch").get<int>();
    m.vocab = text::Vocab::from_words(header.at("vocab").get<std::vector<std::string>>());
    if (text::hex64(m.vocab.hash()) != header.at("vocab_hash").get<std::string>()) throw fail("vocabulary hash mismatch");
    const auto hp = net::hyper_from_json(nlohmann::json(header.at("hyper")));
    net::validate(hp);
    m.meta = header.at("meta");
    auto net = std::make_unique<net::Network<double>>(hp, m.vocab.size());
    const auto& specs = header.at("params");
    if (specs.size() != net->params().size()) throw fail("parameter count mismatch");
    std::size_t offset = fixed + header_len;
    std::size_t i = 0;
    for (auto& p : net->params()) {
      const auto& spec = specs.at(i++);
      if (spec.at("name").get<std::string>() != p.name || spec.at("rows").get<long>() != p.value.rows() ||
          spec.at("cols").get<long>() != p.value.cols()) {
        throw fail("parameter layout mismatch at " + p.name);
      }
      const std::size_t n = static_cast<std::size_t>(p.value.size()) * sizeof(double);
      if (offset + n > body) throw fail("parameter data truncated");
      std::memcpy(p.value.data(), bytes.data() + offset, n);
      offset += n;
    }
    if (offset != body) throw fail("trailing bytes");
    m.net = std::move(net);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("header: ") + e.what());
  } catch (const ContractError& e) {
    throw fail(e.what());
  }
  return m;
}

void save_checkpoint(const std::string& path, const Model& model) {
  const std::string bytes = checkpoint_bytes(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

}  // namespace acg::runtime

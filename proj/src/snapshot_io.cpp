#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "annostudy/error.hpp"
#include "annostudy/hash.hpp"
#include "annostudy/suggester.hpp"

namespace annostudy {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "ANNOSTUDY-SNAPSHOT";

std::string encode_payload(const ModelSnapshot& m) {
  const auto w = m.weights();
  std::string bytes;
  bytes.resize((w.size() + kNumLabels) * 8);
  std::size_t off = 0;
  auto put = [&](double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes[off++] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  };
  for (double v : w) put(v);
  for (double v : m.bias()) put(v);
  return bytes;
}

double decode_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

[[noreturn]] void fail(const std::string& what) { throw ParseError(0, "snapshot: " + what); }

}  // namespace

void write_snapshot(std::ostream& out, const ModelSnapshot& m) {
  const std::string payload = encode_payload(m);
  json labels = json::array();
  for (Label l : kAllLabels) labels.push_back(label_name(l));
  const auto& f = m.features();
  json header = {
      {"format_version", kSnapshotFormatVersion},
      {"hash_algorithm", kHashAlgorithm},
      {"hash_seed", f.hash_seed},
      {"n_buckets", f.n_buckets},
      {"ngram_orders", f.ngram_orders},
      {"lowercase", f.lowercase},
      {"strip_hash_prefix", f.strip_hash_prefix},
      {"labels", labels},
      {"version", m.version()},
      {"train_fingerprint", m.train_fingerprint()},
      {"train_size", m.train_size()},
      {"created_at", format_rfc3339(m.created_at())},
      {"train_config", m.train_config()},
      {"epoch_losses", m.epoch_losses()},
      {"payload_encoding", "f64le"},
      {"payload_values", payload.size() / 8},
      {"payload_crc32c", to_hex(crc32c(payload), 8)},
  };
  out << kMagic << '\n' << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("failed writing snapshot");
}

ModelSnapshot read_snapshot(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != kMagic) fail("missing ANNOSTUDY-SNAPSHOT magic line");
  std::string header_line;
  if (!std::getline(in, header_line)) fail("missing header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    fail(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
    fail("header has no integer format_version");
  }
  const int version = header["format_version"].get<int>();
  if (version != kSnapshotFormatVersion) {
    fail("unsupported format_version " + std::to_string(version) + " (this build reads " +
         std::to_string(kSnapshotFormatVersion) + ")");
  }
  try {
    if (header.at("hash_algorithm").get<std::string>() != kHashAlgorithm) {
      fail("unsupported hash_algorithm '" + header["hash_algorithm"].get<std::string>() + "'");
    }
    if (header.at("payload_encoding").get<std::string>() != "f64le") fail("unsupported payload_encoding");
    const auto labels = header.at("labels").get<std::vector<std::string>>();
    if (labels.size() != kNumLabels) fail("label set mismatch");
    for (std::size_t i = 0; i < kNumLabels; ++i) {
      if (labels[i] != label_name(kAllLabels[i])) fail("label set mismatch at position " + std::to_string(i));
    }

    FeatureConfig fcfg;
    fcfg.n_buckets = header.at("n_buckets").get<std::uint32_t>();
    fcfg.ngram_orders = header.at("ngram_orders").get<std::vector<int>>();
    fcfg.lowercase = header.at("lowercase").get<bool>();
    fcfg.strip_hash_prefix = header.at("strip_hash_prefix").get<bool>();
    fcfg.hash_seed = header.at("hash_seed").get<std::uint64_t>();
    fcfg.validate();

    const std::size_t values = header.at("payload_values").get<std::size_t>();
    const std::size_t expected = kNumLabels * static_cast<std::size_t>(fcfg.n_buckets) + kNumLabels;
    if (values != expected) fail("payload_values does not match n_buckets");
    std::string payload(values * 8, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size()) fail("truncated payload");
    if (to_hex(crc32c(payload), 8) != header.at("payload_crc32c").get<std::string>()) {
      fail("payload checksum mismatch");
    }

    std::vector<double> weights(values - kNumLabels);
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = decode_f64(payload.data() + 8 * i);
    PerLabel<double> bias{};
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      bias[k] = decode_f64(payload.data() + 8 * (weights.size() + k));
    }

    ModelSnapshot m(fcfg, std::move(weights), bias);
    m.set_version(header.at("version").get<std::int64_t>());
    m.set_created_at(parse_rfc3339(header.at("created_at").get<std::string>()));
    m.set_training_info(header.at("train_fingerprint").get<std::string>(),
                        header.at("train_size").get<std::size_t>(),
                        header.at("train_config").get<TrainConfig>(),
                        header.at("epoch_losses").get<std::vector<double>>());
    return m;
  } catch (const json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  } catch (const InvalidArgument& e) {
    fail(std::string("invalid header: ") + e.what());
  }
}

void save_snapshot(const ModelSnapshot& m, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    write_snapshot(out, m);
  }
  std::filesystem::rename(tmp, path);
}

ModelSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open snapshot '" + path.string() + "'");
  return read_snapshot(in);
}

}  // namespace annostudy

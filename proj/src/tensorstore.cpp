#include "routerx/tensorstore.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "routerx/error.hpp"

namespace routerx {
namespace {

constexpr std::array<char, 4> kStoreMagic{'R', 'X', 'H', 'S'};
constexpr std::array<char, 4> kTokenMagic{'R', 'X', 'H', 'T'};
constexpr std::uint64_t kHeaderBytes = 24;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

void put_f32(std::ostream& out, float value) {
  put_le(out, std::bit_cast<std::uint32_t>(value));
}

/// Bounded little-endian reader over an istream of known total size.
class Cursor {
 public:
  Cursor(std::istream& in, std::uint64_t size) : in_(in), size_(size) {}

  std::uint64_t position() const { return pos_; }
  std::uint64_t remaining() const { return size_ - pos_; }

  void bytes(char* dst, std::uint64_t n, const char* what) {
    if (n > remaining()) throw Error(std::string("corrupt dump: truncated ") + what);
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw Error(std::string("corrupt dump: truncated ") + what);
    pos_ += n;
  }

  template <typename U>
  U get(const char* what) {
    std::array<unsigned char, sizeof(U)> raw{};
    bytes(reinterpret_cast<char*>(raw.data()), raw.size(), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(raw[i]) << (8 * i);
    }
    return value;
  }

 private:
  std::istream& in_;
  std::uint64_t size_;
  std::uint64_t pos_ = 0;
};

struct Header {
  std::uint32_t layers = 0;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
};

Header read_header(Cursor& cur, const std::array<char, 4>& magic) {
  if (cur.remaining() < 4) throw Error("unrecognized dump: file too short");
  std::array<char, 4> got{};
  cur.bytes(got.data(), 4, "magic");
  if (got != magic) throw Error("unrecognized dump: bad magic");
  if (cur.remaining() < kHeaderBytes - 4) throw Error("corrupt dump: truncated header");
  const auto version = cur.get<std::uint32_t>("version");
  if (version != kStoreVersion) {
    throw Error("unrecognized dump: unsupported version " + std::to_string(version));
  }
  Header h;
  h.layers = cur.get<std::uint32_t>("header");
  h.dim = cur.get<std::uint32_t>("header");
  h.count = cur.get<std::uint64_t>("header");
  if (h.layers == 0 || h.dim == 0) throw Error("shape mismatch: zero layers or dim");
  return h;
}

std::string read_id(Cursor& cur, std::set<std::string>& seen) {
  const auto len = cur.get<std::uint16_t>("index");
  if (len == 0) throw Error("corrupt dump: empty query id in index");
  std::string id(len, '\0');
  cur.bytes(id.data(), len, "index");
  if (!seen.insert(id).second) throw Error("corrupt dump: duplicate query id '" + id + "'");
  return id;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw Error("corrupt dump: size overflow");
  }
  return a * b;
}

void read_floats(std::istream& in, std::span<float> dst) {
  std::vector<unsigned char> raw(dst.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw Error("corrupt dump: truncated payload");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::uint32_t bits = std::uint32_t{raw[4 * i]} | (std::uint32_t{raw[4 * i + 1]} << 8) |
                               (std::uint32_t{raw[4 * i + 2]} << 16) |
                               (std::uint32_t{raw[4 * i + 3]} << 24);
    dst[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(dst[i])) throw Error("corrupt dump: non-finite activation");
  }
}

std::uint64_t stream_size(std::istream& in) {
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(0, std::ios::beg);
  if (end < 0) throw Error("I/O failure: cannot determine dump size");
  return static_cast<std::uint64_t>(end);
}

void put_id(std::ostream& out, const std::string& id) {
  put_le(out, static_cast<std::uint16_t>(id.size()));
  out.write(id.data(), static_cast<std::streamsize>(id.size()));
}

void check_id(const std::string& id) {
  if (id.empty()) throw ValidationError("invalid store: empty query id");
  if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ValidationError("invalid store: query id longer than 65535 bytes");
  }
}

}  // namespace

void HiddenStateStore::describe(std::string model_name, Pooling pooling) {
  manifest_.model_name = std::move(model_name);
  manifest_.pooling = pooling;
}

HiddenStateStore::HiddenStateStore(std::uint32_t layers, std::uint32_t dim,
                                   std::string model_name) {
  if (layers == 0 || dim == 0) throw ValidationError("shape mismatch: L and D must be positive");
  manifest_.model_name = std::move(model_name);
  manifest_.num_layers = layers;
  manifest_.hidden_dim = dim;
}

void HiddenStateStore::insert(std::string query_id, LayerMatrix states) {
  check_id(query_id);
  if (states.rows() != layers() || states.cols() != dim()) {
    throw ValidationError("shape mismatch: entry '" + query_id + "' is " +
                          std::to_string(states.rows()) + "x" + std::to_string(states.cols()) +
                          ", store is " + std::to_string(layers()) + "x" +
                          std::to_string(dim()));
  }
  for (float v : states.values()) {
    if (!std::isfinite(v)) throw ValidationError("non-finite activation in '" + query_id + "'");
  }
  const auto [it, inserted] = entries_.emplace(std::move(query_id), std::move(states));
  if (!inserted) throw ValidationError("duplicate query id '" + it->first + "'");
}

const LayerMatrix& HiddenStateStore::at(const std::string& query_id) const {
  const auto it = entries_.find(query_id);
  if (it == entries_.end()) throw Error("missing hidden state for query '" + query_id + "'");
  return it->second;
}

Matrix<double> pool_tokens(const TokenStates& states) {
  if (states.tokens == 0) throw ValidationError("empty sequence");
  if (states.values.size() != states.tokens * states.layers * states.dim) {
    throw ValidationError("shape mismatch: token tensor size");
  }
  Matrix<double> pooled(states.layers, states.dim, 0.0);
  for (std::size_t t = 0; t < states.tokens; ++t) {
    for (std::size_t l = 0; l < states.layers; ++l) {
      for (std::size_t d = 0; d < states.dim; ++d) {
        const double v = states.at(t, l, d);
        if (!std::isfinite(v)) throw ValidationError("non-finite activation");
        pooled(l, d) += v;
      }
    }
  }
  const double scale = static_cast<double>(states.tokens);
  for (double& v : pooled.values()) v /= scale;
  return pooled;
}

LayerMatrix to_layer_matrix(const Matrix<double>& pooled) {
  std::vector<float> values(pooled.values().begin(), pooled.values().end());
  return {pooled.rows(), pooled.cols(), std::move(values)};
}

void write_store(const HiddenStateStore& store, std::ostream& out) {
  if (store.layers() == 0 || store.dim() == 0) {
    throw ValidationError("shape mismatch: store has no layer/dim shape");
  }
  const std::uint64_t stride = std::uint64_t{store.layers()} * store.dim() * 4;
  std::uint64_t payload_start = kHeaderBytes;
  for (const auto& [id, _] : store.entries()) {
    check_id(id);
    payload_start += 2 + id.size() + 8;
  }
  out.write(kStoreMagic.data(), 4);
  put_le(out, kStoreVersion);
  put_le(out, store.layers());
  put_le(out, store.dim());
  put_le(out, static_cast<std::uint64_t>(store.size()));
  std::uint64_t offset = payload_start;
  for (const auto& [id, _] : store.entries()) {
    put_id(out, id);
    put_le(out, offset);
    offset += stride;
  }
  for (const auto& [_, m] : store.entries()) {
    for (float v : m.values()) put_f32(out, v);
  }
  if (!out) throw Error("I/O failure: writing dump");
}

void write_store(const HiddenStateStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  write_store(store, out);
  out.flush();
  if (!out) throw Error("I/O failure: writing '" + path.string() + "'");
  if (!store.manifest().model_name.empty()) write_manifest(store.manifest(), manifest_path(path));
}

namespace {

struct ParsedIndex {
  Header header;
  std::vector<std::pair<std::string, std::uint64_t>> records;
};

ParsedIndex parse_store_index(std::istream& in, std::uint64_t size) {
  Cursor cur(in, size);
  ParsedIndex parsed;
  parsed.header = read_header(cur, kStoreMagic);
  const Header& h = parsed.header;
  // Smallest possible record: u16 length, one id byte, u64 offset.
  if (h.count > cur.remaining() / 11) throw Error("corrupt dump: entry count exceeds file");
  std::set<std::string> seen;
  parsed.records.reserve(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    std::string id = read_id(cur, seen);
    const auto offset = cur.get<std::uint64_t>("index");
    parsed.records.emplace_back(std::move(id), offset);
  }
  const std::uint64_t payload_start = cur.position();
  const std::uint64_t stride = checked_mul(std::uint64_t{h.layers} * h.dim, 4);
  const std::uint64_t expected = checked_mul(stride, h.count);

  if (h.count >= 2) {
    const std::uint64_t observed = parsed.records[1].second - parsed.records[0].second;
    if (parsed.records[1].second > parsed.records[0].second && observed != stride &&
        parsed.records[0].second == payload_start) {
      throw Error("shape mismatch: payload stride " + std::to_string(observed) +
                  " bytes, header implies " + std::to_string(stride));
    }
  }
  for (std::uint64_t i = 0; i < h.count; ++i) {
    if (parsed.records[i].second != payload_start + i * stride) {
      throw Error("corrupt dump: bad offset for '" + parsed.records[i].first + "'");
    }
  }
  const std::uint64_t remaining = size - payload_start;
  if (remaining < expected) throw Error("corrupt dump: truncated payload");
  if (remaining > expected) {
    throw Error("shape mismatch: payload holds " + std::to_string(remaining) +
                " bytes, header implies " + std::to_string(expected));
  }
  return parsed;
}

}  // namespace

StoreReader::StoreReader(const std::filesystem::path& path) : path_(path) {
  auto file = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*file) throw Error("I/O failure: cannot open '" + path.string() + "'");
  in_ = std::move(file);
  const std::uint64_t size = stream_size(*in_);
  ParsedIndex parsed = parse_store_index(*in_, size);
  layers_ = parsed.header.layers;
  dim_ = parsed.header.dim;
  for (auto& [id, offset] : parsed.records) {
    order_.push_back(id);
    index_.emplace(std::move(id), offset);
  }
}

LayerMatrix StoreReader::read(const std::string& query_id) {
  const auto it = index_.find(query_id);
  if (it == index_.end()) throw Error("missing hidden state for query '" + query_id + "'");
  LayerMatrix m(layers_, dim_);
  in_->clear();
  in_->seekg(static_cast<std::streamoff>(it->second));
  read_floats(*in_, m.values());
  return m;
}

HiddenStateStore StoreReader::read_all() {
  HiddenStateStore store(layers_, dim_);
  for (const auto& id : order_) store.insert(id, read(id));
  return store;
}

HiddenStateStore read_store(std::span<const std::byte> bytes) {
  std::istringstream in(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                        std::ios::binary);
  ParsedIndex parsed = parse_store_index(in, bytes.size());
  HiddenStateStore store(parsed.header.layers, parsed.header.dim);
  for (auto& [id, offset] : parsed.records) {
    LayerMatrix m(parsed.header.layers, parsed.header.dim);
    in.seekg(static_cast<std::streamoff>(offset));
    read_floats(in, m.values());
    store.insert(std::move(id), std::move(m));
  }
  return store;
}

HiddenStateStore read_store(const std::filesystem::path& path) {
  HiddenStateStore store = StoreReader(path).read_all();
  const auto sidecar = manifest_path(path);
  if (std::filesystem::exists(sidecar)) {
    const StoreManifest m = read_manifest(sidecar);
    if (m.num_layers != store.layers() || m.hidden_dim != store.dim()) {
      throw ValidationError("shape mismatch: manifest says " + std::to_string(m.num_layers) + "x" +
                            std::to_string(m.hidden_dim) + ", dump header says " +
                            std::to_string(store.layers()) + "x" + std::to_string(store.dim()));
    }
    store.describe(m.model_name, m.pooling);
  }
  return store;
}

std::filesystem::path manifest_path(const std::filesystem::path& dump) {
  return std::filesystem::path(dump.string() + ".manifest.json");
}

std::string_view to_string(Pooling p) {
  return p == Pooling::kPrePooled ? "pre_pooled" : "raw_token";
}

void write_manifest(const StoreManifest& manifest, const std::filesystem::path& path) {
  nlohmann::ordered_json j{{"model_name", manifest.model_name},
                           {"num_layers", manifest.num_layers},
                           {"hidden_dim", manifest.hidden_dim},
                           {"pooling", to_string(manifest.pooling)},
                           {"dtype", "float32_le"}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error("I/O failure: writing '" + path.string() + "'");
}

StoreManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  StoreManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.model_name = j.value("model_name", std::string());
    m.num_layers = j.at("num_layers").get<std::uint32_t>();
    m.hidden_dim = j.at("hidden_dim").get<std::uint32_t>();
    const std::string pooling = j.value("pooling", std::string("pre_pooled"));
    if (pooling == "pre_pooled") {
      m.pooling = Pooling::kPrePooled;
    } else if (pooling == "raw_token") {
      m.pooling = Pooling::kRawToken;
    } else {
      throw ValidationError("unknown pooling '" + pooling + "'");
    }
    if (j.value("dtype", std::string("float32_le")) != "float32_le") {
      throw ValidationError("unsupported dtype");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed manifest: " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (m.num_layers == 0 || m.hidden_dim == 0) {
    throw ValidationError(path.string() + ": shape mismatch: manifest L and D must be positive");
  }
  return m;
}

void write_token_states(std::span<const RawTokenEntry> entries, std::uint32_t layers,
                        std::uint32_t dim, const std::filesystem::path& path) {
  if (layers == 0 || dim == 0) throw ValidationError("shape mismatch: L and D must be positive");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("I/O failure: cannot open '" + path.string() + "' for writing");
  std::uint64_t offset = kHeaderBytes;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    check_id(e.query_id);
    if (!seen.insert(e.query_id).second) {
      throw ValidationError("duplicate query id '" + e.query_id + "'");
    }
    if (e.states.layers != layers || e.states.dim != dim ||
        e.states.values.size() != e.states.tokens * layers * dim) {
      throw ValidationError("shape mismatch: token entry '" + e.query_id + "'");
    }
    offset += 2 + e.query_id.size() + 4 + 8;
  }
  out.write(kTokenMagic.data(), 4);
  put_le(out, kStoreVersion);
  put_le(out, layers);
  put_le(out, dim);
  put_le(out, static_cast<std::uint64_t>(entries.size()));
  for (const auto& e : entries) {
    put_id(out, e.query_id);
    put_le(out, static_cast<std::uint32_t>(e.states.tokens));
    put_le(out, offset);
    offset += std::uint64_t{e.states.tokens} * layers * dim * 4;
  }
  for (const auto& e : entries) {
    for (double v : e.states.values) put_f32(out, static_cast<float>(v));
  }
  out.flush();
  if (!out) throw Error("I/O failure: writing '" + path.string() + "'");
}

void read_token_states(const std::filesystem::path& path,
                       const std::function<void(RawTokenEntry&&)>& sink) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  const std::uint64_t size = stream_size(in);
  Cursor cur(in, size);
  const Header h = read_header(cur, kTokenMagic);
  if (h.count > cur.remaining() / 15) throw Error("corrupt dump: entry count exceeds file");
  struct Record {
    std::string id;
    std::uint32_t tokens;
    std::uint64_t offset;
  };
  std::vector<Record> records;
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < h.count; ++i) {
    Record r;
    r.id = read_id(cur, seen);
    r.tokens = cur.get<std::uint32_t>("index");
    r.offset = cur.get<std::uint64_t>("index");
    records.push_back(std::move(r));
  }
  std::uint64_t expected_offset = cur.position();
  const std::uint64_t row_bytes = checked_mul(std::uint64_t{h.layers} * h.dim, 4);
  for (const auto& r : records) {
    if (r.offset != expected_offset) throw Error("corrupt dump: bad offset for '" + r.id + "'");
    expected_offset += checked_mul(row_bytes, r.tokens);
  }
  if (expected_offset > size) throw Error("corrupt dump: truncated payload");
  if (expected_offset < size) throw Error("shape mismatch: trailing payload bytes");

  for (auto& r : records) {
    std::vector<float> raw(std::size_t{r.tokens} * h.layers * h.dim);
    in.seekg(static_cast<std::streamoff>(r.offset));
    read_floats(in, raw);
    RawTokenEntry entry;
    entry.query_id = std::move(r.id);
    entry.states.tokens = r.tokens;
    entry.states.layers = h.layers;
    entry.states.dim = h.dim;
    entry.states.values.assign(raw.begin(), raw.end());
    sink(std::move(entry));
  }
}

HiddenStateStore pool_token_dump(const std::filesystem::path& path) {
  HiddenStateStore store;
  bool initialized = false;
  read_token_states(path, [&](RawTokenEntry&& e) {
    if (!initialized) {
      store = HiddenStateStore(static_cast<std::uint32_t>(e.states.layers),
                               static_cast<std::uint32_t>(e.states.dim));
      store.describe({}, Pooling::kRawToken);
      initialized = true;
    }
    try {
      store.insert(e.query_id, to_layer_matrix(pool_tokens(e.states)));
    } catch (const ValidationError& err) {
      throw ValidationError(std::string(err.what()) + " (query '" + e.query_id + "')");
    }
  });
  if (!initialized) throw ValidationError("empty token-state dump '" + path.string() + "'");
  return store;
}

void validate_token_dump(const TokenDump& dump) {
  if (dump.query_id.empty()) throw ValidationError("token dump with empty query id");
  if (dump.tokens.empty()) throw ValidationError("empty sequence for '" + dump.query_id + "'");
  for (std::size_t i = 0; i < dump.tokens.size(); ++i) {
    const TokenStat& t = dump.tokens[i];
    const bool finite = std::isfinite(t.max_prob) && std::isfinite(t.second_prob) &&
                        std::isfinite(t.entropy) && std::isfinite(t.max_logit);
    const bool ok = finite && t.max_prob > 0.0 && t.max_prob <= 1.0 && t.second_prob >= 0.0 &&
                    t.second_prob <= t.max_prob && t.max_prob + t.second_prob <= 1.0 + 1e-9 &&
                    t.entropy >= 0.0;
    if (!ok) {
      throw ValidationError("invalid token record " + std::to_string(i) + " for '" +
                            dump.query_id + "'");
    }
  }
}

std::map<std::string, TokenDump> read_token_dumps(std::istream& in) {
  std::map<std::string, TokenDump> dumps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    TokenDump dump;
    try {
      const auto obj = nlohmann::json::parse(line);
      dump.query_id = obj.at("query_id").get<std::string>();
      for (const auto& tok : obj.at("tokens")) {
        if (!tok.is_array() || tok.size() != 4) throw ValidationError("token must be 4 numbers");
        dump.tokens.push_back({tok[0].get<double>(), tok[1].get<double>(),
                               tok[2].get<double>(), tok[3].get<double>()});
      }
      validate_token_dump(dump);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + "malformed token dump: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    const std::string id = dump.query_id;
    if (!dumps.emplace(id, std::move(dump)).second) {
      throw ValidationError(where + "duplicate query id '" + id + "'");
    }
  }
  return dumps;
}

std::map<std::string, TokenDump> read_token_dumps(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("I/O failure: cannot open '" + path.string() + "'");
  try {
    return read_token_dumps(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_token_dumps(const std::map<std::string, TokenDump>& dumps, std::ostream& out) {
  for (const auto& [id, dump] : dumps) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : dump.tokens) {
      tokens.push_back({t.max_prob, t.second_prob, t.entropy, t.max_logit});
    }
    out << nlohmann::json{{"query_id", id}, {"tokens", tokens}}.dump() << '\n';
  }
}

}  // namespace routerx

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace routerx {

/// Row-major rows x cols matrix. Rows are layers, columns hidden units.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<const T> values() const { return values_; }
  std::span<T> values() { return values_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

using LayerMatrix = Matrix<float>;

/// T x L x D activations for one query, token-major.
struct TokenStates {
  std::size_t tokens = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t l, std::size_t d) const {
    return values[(t * layers + l) * dim + d];
  }
};

enum class Pooling { kPrePooled, kRawToken };

struct StoreManifest {
  std::string model_name;
  std::uint32_t num_layers = 0;
  std::uint32_t hidden_dim = 0;
  Pooling pooling = Pooling::kPrePooled;
};

/// Per-query L x D pooled activations. Entries iterate in query-id order.
class HiddenStateStore {
 public:
  HiddenStateStore() = default;
  HiddenStateStore(std::uint32_t layers, std::uint32_t dim,
                   std::string model_name = {});

  const StoreManifest& manifest() const { return manifest_; }
  /// Model name and pooling travel in the manifest sidecar, not the dump.
  void describe(std::string model_name, Pooling pooling);
  std::uint32_t layers() const { return manifest_.num_layers; }
  std::uint32_t dim() const { return manifest_.hidden_dim; }
  std::size_t size() const { return entries_.size(); }

  /// Throws ValidationError on empty/duplicate id, wrong shape, or a
  /// non-finite value.
  void insert(std::string query_id, LayerMatrix states);

  bool contains(const std::string& query_id) const {
    return entries_.count(query_id) != 0;
  }
  /// Throws Error("missing hidden state for query '<id>'").
  const LayerMatrix& at(const std::string& query_id) const;

  const std::map<std::string, LayerMatrix>& entries() const { return entries_; }

 private:
  StoreManifest manifest_;
  std::map<std::string, LayerMatrix> entries_;
};

/// Mean over the token axis, accumulated in double.
Matrix<double> pool_tokens(const TokenStates& states);

/// Rounds a pooled matrix to the on-disk float representation.
LayerMatrix to_layer_matrix(const Matrix<double>& pooled);

// Binary dump: "RXHS", u32 version, u32 L, u32 D, u64 count, index records
// (u16 id length, id bytes, u64 absolute payload offset), then contiguous
// row-major little-endian f32 payloads in index order.
inline constexpr std::uint32_t kStoreVersion = 1;

/// Parsed header and index of a dump on disk. Entries are fetched by seeking
/// to their offset, so a single query can be read without touching the
/// other payloads.
class StoreReader {
 public:
  explicit StoreReader(const std::filesystem::path& path);

  std::uint32_t layers() const { return layers_; }
  std::uint32_t dim() const { return dim_; }
  const std::map<std::string, std::uint64_t>& index() const { return index_; }

  LayerMatrix read(const std::string& query_id);
  HiddenStateStore read_all();

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::istream> in_;
  std::uint32_t layers_ = 0;
  std::uint32_t dim_ = 0;
  std::map<std::string, std::uint64_t> index_;
  std::vector<std::string> order_;
};

/// Throws ValidationError("shape mismatch") for a store without a shape.
void write_store(const HiddenStateStore& store, std::ostream& out);
/// Also writes the manifest sidecar when the store names its model.
void write_store(const HiddenStateStore& store, const std::filesystem::path& path);
HiddenStateStore read_store(std::span<const std::byte> bytes);
/// Reads the sidecar when present; its L and D must match the dump header.
HiddenStateStore read_store(const std::filesystem::path& path);

// Manifest sidecar "<dump>.manifest.json":
// {"model_name", "num_layers", "hidden_dim", "pooling": "pre_pooled" | "raw_token",
//  "dtype": "float32_le"}. Extra keys (e.g. a prompt template hash) are kept
// out of the toolkit's way and ignored.
std::filesystem::path manifest_path(const std::filesystem::path& dump);
std::string_view to_string(Pooling p);
void write_manifest(const StoreManifest& manifest, const std::filesystem::path& path);
StoreManifest read_manifest(const std::filesystem::path& path);

/// Raw-token dump, pooled at ingestion: "RXHT", u32 version, u32 L, u32 D,
/// u64 count, index records (u16 id length, id bytes, u32 token count,
/// u64 offset), then T x L x D f32 payloads.
struct RawTokenEntry {
  std::string query_id;
  TokenStates states;
};

void write_token_states(std::span<const RawTokenEntry> entries,
                        std::uint32_t layers, std::uint32_t dim,
                        const std::filesystem::path& path);

/// Streams every entry of a raw-token dump through `sink` without holding
/// more than one query in memory.
void read_token_states(const std::filesystem::path& path,
                       const std::function<void(RawTokenEntry&&)>& sink);

/// Streams a raw-token dump through pool_tokens into a canonical store.
HiddenStateStore pool_token_dump(const std::filesystem::path& path);

struct TokenStat {
  double max_prob = 0.0;
  double second_prob = 0.0;
  double entropy = 0.0;
  double max_logit = 0.0;
};

struct TokenDump {
  std::string query_id;
  std::vector<TokenStat> tokens;
};

/// Throws ValidationError when a token record breaks the probability
/// invariants or the sequence is empty.
void validate_token_dump(const TokenDump& dump);

/// JSON Lines: {"query_id": ..., "tokens": [[max_prob, second_prob,
/// entropy, max_logit], ...]}.
std::map<std::string, TokenDump> read_token_dumps(std::istream& in);
std::map<std::string, TokenDump> read_token_dumps(const std::filesystem::path& path);
void write_token_dumps(const std::map<std::string, TokenDump>& dumps, std::ostream& out);

}  // namespace routerx

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sconf/errors.hpp"
#include "sconf/matrix.hpp"

namespace sconf {

static_assert(std::endian::native == std::endian::little,
              "binary embedding format is little-endian; big-endian hosts unsupported");

// ============================================================================
// Label marginals
// ============================================================================

struct LabelMarginal {
  std::vector<double> probs;

  int num_classes() const { return static_cast<int>(probs.size()); }
};

inline LabelMarginal uniform_marginal(int num_classes) {
  return {std::vector<double>(static_cast<std::size_t>(num_classes),
                              1.0 / static_cast<double>(num_classes))};
}

inline void validate_marginal(const LabelMarginal& m) {
  if (m.probs.empty()) throw DataError("label marginal is empty");
  double sum = 0.0;
  for (std::size_t c = 0; c < m.probs.size(); ++c) {
    double p = m.probs[c];
    if (!std::isfinite(p) || p < 0.0)
      throw DataError("label marginal entry " + std::to_string(c) + " is invalid");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DataError("label marginal sums to " + std::to_string(sum) + ", expected 1");
}

// ============================================================================
// EmbeddingSet
// ============================================================================

// Label value marking "no label for this row" in partially labeled sets.
inline constexpr std::int32_t kAbsentLabel = -1;

// A set of row embeddings on the unit sphere. Features are float32 on disk
// and promoted to doubles here; construction normalizes each row.
// labels empty means the whole set is unlabeled; individual rows may carry
// kAbsentLabel inside an otherwise labeled set.
struct EmbeddingSet {
  Matrix features;                  // N x D, unit-norm rows
  std::vector<std::int32_t> labels; // empty or length N
  std::int32_t num_classes = 0;     // 0 = unknown (unlabeled CSV source)
  bool renormalized = false;        // some input row was off unit norm by > 1e-3

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return !labels.empty(); }

  EmbeddingSet without_labels() const {
    EmbeddingSet out = *this;
    out.labels.clear();
    return out;
  }
};

namespace detail {

// Rows already unit to float32 precision are left untouched so that
// load -> save -> load round-trips bit-exactly.
inline constexpr double kUnitSkipTol = 1e-6;
inline constexpr double kRenormFlagTol = 1e-3;
inline constexpr double kDegenerateNormTol = 1e-12;

inline bool normalize_rows(Matrix& m) {
  bool flagged = false;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double n = l2_norm(row);
    if (n <= kDegenerateNormTol)
      throw DataError("record " + std::to_string(r) + " has near-zero norm");
    if (std::abs(n - 1.0) > kRenormFlagTol) flagged = true;
    if (std::abs(n - 1.0) > kUnitSkipTol)
      for (double& v : row) v /= n;
  }
  return flagged;
}

inline void validate_labels(const std::vector<std::int32_t>& labels,
                            std::int32_t num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::int32_t y = labels[i];
    if (y != kAbsentLabel && (y < 0 || y >= num_classes))
      throw DataError("record " + std::to_string(i) + " has label " +
                      std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
  }
}

}  // namespace detail

// Normalizes rows, validates labels, and assembles the set. num_classes 0 is
// accepted only for unlabeled data.
inline EmbeddingSet make_embedding_set(Matrix features,
                                       std::vector<std::int32_t> labels,
                                       std::int32_t num_classes) {
  if (features.rows() == 0 || features.cols() == 0)
    throw DataError("embedding set must have at least one row and one column");
  if (!labels.empty() && labels.size() != features.rows())
    throw DataError("label count does not match row count");
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (double v : features.row(r))
      if (!std::isfinite(v))
        throw DataError("record " + std::to_string(r) + " has a non-finite feature");
  if (!labels.empty()) {
    if (num_classes < 2) throw DataError("labeled sets need num_classes >= 2");
    detail::validate_labels(labels, num_classes);
  }
  EmbeddingSet set;
  set.renormalized = detail::normalize_rows(features);
  set.features = std::move(features);
  set.labels = std::move(labels);
  set.num_classes = num_classes;
  return set;
}

// Rows [begin, end) as a new set; labels sliced along.
inline EmbeddingSet slice_rows(const EmbeddingSet& set, std::size_t begin, std::size_t end) {
  if (begin >= end || end > set.size()) throw DataError("bad slice bounds");
  Matrix f(end - begin, set.dim());
  for (std::size_t r = begin; r < end; ++r) {
    auto src = set.features.row(r);
    auto dst = f.row(r - begin);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  std::vector<std::int32_t> labels;
  if (set.has_labels())
    labels.assign(set.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  set.labels.begin() + static_cast<std::ptrdiff_t>(end));
  EmbeddingSet out;
  out.features = std::move(f);
  out.labels = std::move(labels);
  out.num_classes = set.num_classes;
  out.renormalized = set.renormalized;
  return out;
}

// ============================================================================
// Binary container:  "EMB1" | u32 N | u32 D | u32 C | u8 has_labels |
//                    N*D float32 row-major | N int32 labels (if present)
// All fields little-endian. The raw reader/writer below do no normalization;
// they are shared by the embedding loader and the classifier store.
// ============================================================================

inline constexpr char kEmbeddingMagic[4] = {'E', 'M', 'B', '1'};

struct RawEmbeddingFile {
  Matrix features;  // promoted to double, otherwise untouched
  std::vector<std::int32_t> labels;
  std::int32_t num_classes = 0;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated file while reading " + what);
  return v;
}

}  // namespace detail

inline void write_embedding_binary(const std::string& path, const Matrix& features,
                                   const std::vector<std::int32_t>& labels,
                                   std::int32_t num_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kEmbeddingMagic, 4);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(features.rows()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(features.cols()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(num_classes));
  detail::write_pod<std::uint8_t>(os, labels.empty() ? 0 : 1);
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (double v : features.row(r))
      detail::write_pod<float>(os, static_cast<float>(v));
  for (std::int32_t y : labels) detail::write_pod<std::int32_t>(os, y);
  if (!os) throw DataError("write failed for " + path);
}

inline RawEmbeddingFile read_embedding_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw DataError(path + ": bad magic, not an embedding file");
  auto n = detail::read_pod<std::uint32_t>(is, "row count");
  auto d = detail::read_pod<std::uint32_t>(is, "dimension");
  auto c = detail::read_pod<std::uint32_t>(is, "class count");
  auto has_labels = detail::read_pod<std::uint8_t>(is, "label flag");
  if (n == 0) throw DataError(path + ": declares zero rows");
  if (d == 0) throw DataError(path + ": declares zero dimensions");
  if (has_labels > 1)
    throw DataError(path + ": label flag must be 0 or 1, got " + std::to_string(has_labels));

  RawEmbeddingFile raw;
  raw.num_classes = static_cast<std::int32_t>(c);
  raw.features = Matrix(n, d);
  for (std::uint32_t r = 0; r < n; ++r) {
    auto row = raw.features.row(r);
    for (std::uint32_t j = 0; j < d; ++j) {
      float v = detail::read_pod<float>(is, "record " + std::to_string(r));
      if (!std::isfinite(v))
        throw DataError(path + ": record " + std::to_string(r) + " has a non-finite feature");
      row[j] = static_cast<double>(v);
    }
  }
  if (has_labels) {
    raw.labels.resize(n);
    for (std::uint32_t r = 0; r < n; ++r)
      raw.labels[r] = detail::read_pod<std::int32_t>(is, "label " + std::to_string(r));
  }
  // Declared sizes must match the payload exactly.
  is.peek();
  if (!is.eof()) throw DataError(path + ": trailing bytes after declared payload");
  return raw;
}

// ============================================================================
// CSV container: header "d0,...,d{D-1}[,label]", one row per sample.
// Convenience interchange; carries no class count for unlabeled data.
// ============================================================================

inline void write_embedding_csv(const std::string& path, const Matrix& features,
                                const std::vector<std::int32_t>& labels) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  for (std::size_t j = 0; j < features.cols(); ++j) {
    if (j) os << ',';
    os << 'd' << j;
  }
  if (!labels.empty()) os << ",label";
  os << '\n';
  char buf[64];
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    for (std::size_t j = 0; j < features.cols(); ++j) {
      // %.9g round-trips the float32 payload exactly.
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<float>(row[j]));
      if (j) os << ',';
      os << buf;
    }
    if (!labels.empty()) os << ',' << labels[r];
    os << '\n';
  }
  if (!os) throw DataError("write failed for " + path);
}

inline RawEmbeddingFile read_embedding_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::string header;
  if (!std::getline(is, header)) throw DataError(path + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();

  std::vector<std::string> cols;
  std::stringstream hs(header);
  std::string tok;
  while (std::getline(hs, tok, ',')) cols.push_back(tok);
  bool has_labels = !cols.empty() && cols.back() == "label";
  std::size_t d = cols.size() - (has_labels ? 1 : 0);
  if (d == 0) throw DataError(path + ": header declares no feature columns");
  for (std::size_t j = 0; j < d; ++j)
    if (cols[j] != "d" + std::to_string(j))
      throw DataError(path + ": malformed header, expected d" + std::to_string(j) +
                      " at column " + std::to_string(j));

  std::vector<std::vector<double>> rows;
  std::vector<std::int32_t> labels;
  std::string line;
  std::size_t record = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    while (std::getline(ls, tok, ',')) fields.push_back(tok);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != cols.size())
      throw DataError(path + ": record " + std::to_string(record) + " has " +
                      std::to_string(fields.size()) + " fields, header declares " +
                      std::to_string(cols.size()));
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) {
      char* end = nullptr;
      float v = std::strtof(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0' || !std::isfinite(v))
        throw DataError(path + ": record " + std::to_string(record) +
                        " has a non-numeric or non-finite feature");
      row[j] = static_cast<double>(v);
    }
    if (has_labels) {
      char* end = nullptr;
      long y = std::strtol(fields[d].c_str(), &end, 10);
      if (end == fields[d].c_str() || *end != '\0')
        throw DataError(path + ": record " + std::to_string(record) + " has a bad label");
      labels.push_back(static_cast<std::int32_t>(y));
    }
    rows.push_back(std::move(row));
    ++record;
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  RawEmbeddingFile raw;
  raw.features = Matrix::from_rows(rows);
  raw.labels = std::move(labels);
  if (has_labels) {
    std::int32_t maxy = kAbsentLabel;
    for (std::int32_t y : raw.labels) maxy = std::max(maxy, y);
    raw.num_classes = maxy + 1;
  }
  return raw;
}

// ============================================================================
// Loader / saver
// ============================================================================

enum class FileFormat { Binary, Csv };

inline FileFormat infer_format(const std::string& path) {
  auto pos = path.rfind('.');
  std::string ext = pos == std::string::npos ? "" : path.substr(pos);
  return ext == ".csv" ? FileFormat::Csv : FileFormat::Binary;
}

inline EmbeddingSet load_embeddings(const std::string& path, FileFormat format) {
  RawEmbeddingFile raw = format == FileFormat::Binary ? read_embedding_binary(path)
                                                      : read_embedding_csv(path);
  if (!raw.labels.empty() && raw.num_classes < 2)
    throw DataError(path + ": labeled data implies fewer than two classes");
  if (format == FileFormat::Binary && raw.num_classes < 2)
    throw DataError(path + ": class count must be >= 2");
  return make_embedding_set(std::move(raw.features), std::move(raw.labels),
                            raw.num_classes);
}

inline EmbeddingSet load_embeddings(const std::string& path) {
  return load_embeddings(path, infer_format(path));
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path,
                            FileFormat format) {
  if (format == FileFormat::Binary)
    write_embedding_binary(path, set.features, set.labels, set.num_classes);
  else
    write_embedding_csv(path, set.features, set.labels);
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  save_embeddings(set, path, infer_format(path));
}

// ============================================================================
// Marginals and joint assembly
// ============================================================================

// Empirical class frequencies of fully observed labels.
inline LabelMarginal empirical_marginal(const std::vector<std::int32_t>& labels,
                                        std::int32_t num_classes) {
  if (labels.empty()) throw DataError("cannot take a marginal of an empty label list");
  if (num_classes < 2) throw DataError("marginal needs num_classes >= 2");
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::int32_t y = labels[i];
    if (y < 0 || y >= num_classes)
      throw DataError("label at index " + std::to_string(i) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  double n = static_cast<double>(labels.size());
  for (double& c : counts) c /= n;
  return {std::move(counts)};
}

struct JointSplit {
  EmbeddingSet joint;                    // cal rows first, then test rows
  std::vector<std::size_t> cal_indices;  // positions of cal rows in joint
  std::vector<std::size_t> test_indices; // positions of test rows in joint
};

// Stacks calibration on top of test. Test labels never enter the joint set:
// their positions are marked absent, so anything consuming the joint cannot
// read them.
inline JointSplit split_concat(const EmbeddingSet& cal, const EmbeddingSet& test) {
  if (cal.dim() != test.dim())
    throw DataError("calibration and test dimensions differ: " +
                    std::to_string(cal.dim()) + " vs " + std::to_string(test.dim()));
  if (test.num_classes != 0 && cal.num_classes != 0 &&
      test.num_classes != cal.num_classes)
    throw DataError("calibration and test class counts differ");
  const std::size_t n = cal.size();
  const std::size_t m = test.size();
  JointSplit out;
  out.joint.features = Matrix(n + m, cal.dim());
  for (std::size_t r = 0; r < n; ++r) {
    auto src = cal.features.row(r);
    std::copy(src.begin(), src.end(), out.joint.features.row(r).begin());
  }
  for (std::size_t r = 0; r < m; ++r) {
    auto src = test.features.row(r);
    std::copy(src.begin(), src.end(), out.joint.features.row(n + r).begin());
  }
  if (cal.has_labels()) {
    out.joint.labels.assign(n + m, kAbsentLabel);
    std::copy(cal.labels.begin(), cal.labels.end(), out.joint.labels.begin());
  }
  out.joint.num_classes = cal.num_classes != 0 ? cal.num_classes : test.num_classes;
  out.joint.renormalized = cal.renormalized || test.renormalized;
  out.cal_indices.resize(n);
  out.test_indices.resize(m);
  for (std::size_t r = 0; r < n; ++r) out.cal_indices[r] = r;
  for (std::size_t r = 0; r < m; ++r) out.test_indices[r] = n + r;
  return out;
}

// Inverse of split_concat: pulls calibration (with labels) and test
// (unlabeled) back out of the joint set, bit-exactly on features.
inline std::pair<EmbeddingSet, EmbeddingSet> reseparate(
    const EmbeddingSet& joint, std::span<const std::size_t> cal_indices,
    std::span<const std::size_t> test_indices) {
  for (std::size_t i : cal_indices)
    if (i >= joint.size()) throw DataError("calibration index out of range");
  for (std::size_t i : test_indices)
    if (i >= joint.size()) throw DataError("test index out of range");
  EmbeddingSet cal;
  cal.features = gather_rows(joint.features, cal_indices);
  if (joint.has_labels()) {
    cal.labels.resize(cal_indices.size());
    for (std::size_t r = 0; r < cal_indices.size(); ++r)
      cal.labels[r] = joint.labels[cal_indices[r]];
  }
  cal.num_classes = joint.num_classes;
  cal.renormalized = joint.renormalized;
  EmbeddingSet test;
  test.features = gather_rows(joint.features, test_indices);
  test.num_classes = joint.num_classes;
  test.renormalized = joint.renormalized;
  return {std::move(cal), std::move(test)};
}

}  // namespace sconf

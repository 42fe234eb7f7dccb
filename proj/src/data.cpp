/*
 * Copyright 2026 The newton-forge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "newton_forge/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string_view>

#include "newton_forge/error.hpp"
#include "newton_forge/random.hpp"

namespace nforge {

Matrix Standardization::apply(const Matrix& raw) const {
  Matrix out = raw;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) = (out.col(c).array() - mean[c]) / sd[c];
  }
  return out;
}

Matrix Standardization::invert(const Matrix& standardized) const {
  Matrix out = standardized;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) = out.col(c).array() * sd[c] + mean[c];
  }
  return out;
}

Batch Dataset::gather(const std::vector<std::size_t>& indices) const {
  Batch b{Matrix(static_cast<Eigen::Index>(indices.size()), features.cols()),
          Matrix(static_cast<Eigen::Index>(indices.size()), targets.cols())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(indices[i]);
    b.features.row(static_cast<Eigen::Index>(i)) = features.row(row);
    b.targets.row(static_cast<Eigen::Index>(i)) = targets.row(row);
  }
  return b;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    cells.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& target_columns,
                 bool standardize) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_csv: '" + path + "' has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::vector<std::string> header;
  for (auto cell : split_commas(line)) header.emplace_back(trim(cell));

  std::vector<bool> is_target(header.size(), false);
  std::vector<std::size_t> target_idx;
  for (const auto& name : target_columns) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw DataError("load_csv: target column '" + name + "' not in header of '" + path + "'");
    }
    const auto idx = static_cast<std::size_t>(it - header.begin());
    is_target[idx] = true;
    target_idx.push_back(idx);
  }
  if (target_idx.empty()) throw DataError("load_csv: no target columns given");
  std::vector<std::size_t> feature_idx;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!is_target[c]) feature_idx.push_back(c);
  }

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError("load_csv: row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, values[c]);
      if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(values[c])) {
        throw DataError("load_csv: non-numeric cell '" + std::string(cell) + "' at row " +
                        std::to_string(line_no) + ", column " + std::to_string(c + 1));
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("load_csv: '" + path + "' contains no data rows");

  Dataset ds;
  ds.name = path;
  ds.task = Task::kRegression;
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.features.resize(n, static_cast<Eigen::Index>(feature_idx.size()));
  ds.targets.resize(n, static_cast<Eigen::Index>(target_idx.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < feature_idx.size(); ++c) {
      ds.features(r, static_cast<Eigen::Index>(c)) = row[feature_idx[c]];
    }
    for (std::size_t c = 0; c < target_idx.size(); ++c) {
      ds.targets(r, static_cast<Eigen::Index>(c)) = row[target_idx[c]];
    }
  }
  if (standardize) {
    Standardization st;
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
      const double mean = ds.features.col(c).mean();
      const double var =
          (ds.features.col(c).array() - mean).square().sum() / static_cast<double>(n);
      const double sd = std::sqrt(var);
      st.mean.push_back(mean);
      st.sd.push_back(sd < 1e-12 ? 1.0 : sd);
    }
    ds.features = st.apply(ds.features);
    ds.feature_scaling = std::move(st);
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_idx: cannot open '" + path + "'");
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw DataError("load_idx: zlib init failed for '" + path + "'");
  }
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  zs.next_in = raw.data();
  zs.avail_in = static_cast<uInt>(raw.size());
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof chunk;
    status = inflate(&zs, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("load_idx: corrupt gzip stream in '" + path + "'");
    }
    out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
    if (status == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("load_idx: truncated gzip stream in '" + path + "'");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw DataError("load_idx: '" + path + "' truncated at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                  const std::string& path) {
  const std::uint32_t got = read_be32(bytes, 0, path);
  if (got != magic) {
    std::ostringstream msg;
    msg << "load_idx: bad magic 0x" << std::hex << got << " at offset 0 of '" << path
        << "' (expected 0x" << magic << ")";
    throw DataError(msg.str());
  }
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<std::size_t> limit) {
  const auto images = read_maybe_gzip(images_path);
  const auto labels = read_maybe_gzip(labels_path);
  expect_magic(images, 0x00000803, images_path);
  expect_magic(labels, 0x00000801, labels_path);

  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (count != label_count) {
    throw DataError("load_idx: " + std::to_string(count) + " images but " +
                    std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels) {
    throw DataError("load_idx: '" + images_path + "' truncated at offset " +
                    std::to_string(images.size()));
  }
  if (labels.size() < 8 + count) {
    throw DataError("load_idx: '" + labels_path + "' truncated at offset " +
                    std::to_string(labels.size()));
  }
  const std::size_t n = limit ? std::min(*limit, count) : count;
  if (n == 0) throw DataError("load_idx: dataset is empty");

  Dataset ds;
  ds.name = images_path;
  ds.task = Task::kClassification;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  ds.targets = Matrix::Zero(static_cast<Eigen::Index>(n), 10);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          images[16 + i * pixels + p] / 255.0;
    }
    const unsigned label = labels[8 + i];
    if (label > 9) {
      throw DataError("load_idx: label " + std::to_string(label) + " at offset " +
                      std::to_string(8 + i) + " is outside 0..9");
    }
    ds.targets(static_cast<Eigen::Index>(i), label) = 1.0;
  }
  return ds;
}

Dataset synth_regression(std::uint64_t seed, std::size_t n, std::size_t d_in,
                         double noise_sd) {
  if (n < 1 || d_in < 1) throw DataError("synth_regression: need N >= 1 and d_in >= 1");
  Rng rng(seed);
  Vector beta(static_cast<Eigen::Index>(d_in));
  for (auto& b : beta) b = rng.normal();
  Dataset ds;
  ds.name = "synth_regression";
  ds.task = Task::kRegression;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      ds.features(i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  ds.targets = ds.features * beta;
  if (noise_sd != 0.0) {
    for (Eigen::Index i = 0; i < ds.targets.rows(); ++i) {
      ds.targets(i, 0) += noise_sd * rng.normal();
    }
  }
  return ds;
}

Dataset synth_classification(std::uint64_t seed, std::size_t n, std::size_t d_in,
                             std::size_t classes, double scale) {
  if (n < 1 || d_in < 1 || classes < 2) {
    throw DataError("synth_classification: need N >= 1, d_in >= 1, classes >= 2");
  }
  Rng rng(seed);
  Matrix hidden(static_cast<Eigen::Index>(d_in), static_cast<Eigen::Index>(classes));
  for (Eigen::Index j = 0; j < hidden.cols(); ++j) {
    for (Eigen::Index i = 0; i < hidden.rows(); ++i) hidden(i, j) = scale * rng.normal();
  }
  Dataset ds;
  ds.name = "synth_classification";
  ds.task = Task::kClassification;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      ds.features(i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  ds.targets = Matrix::Zero(ds.features.rows(), static_cast<Eigen::Index>(classes));
  const Matrix logits = ds.features * hidden;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::RowVectorXd p =
        (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    const double u = rng.uniform() * p.sum();
    double acc = 0.0;
    Eigen::Index label = logits.cols() - 1;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      acc += p(c);
      if (u < acc) {
        label = c;
        break;
      }
    }
    ds.targets(i, label) = 1.0;
  }
  return ds;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::size_t epoch_index,
                                     std::uint64_t base_seed, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(mix_seed(base_seed, epoch_index));
    rng.shuffle(order);
  }
  return order;
}

std::vector<Batch> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                 std::size_t epoch_index, std::uint64_t base_seed,
                                 bool shuffle) {
  if (batch_size < 1) throw ConfigError("epoch_batches: batch_size must be >= 1");
  const auto order = epoch_order(dataset.size(), epoch_index, base_seed, shuffle);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(dataset.gather({order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return batches;
}

Split split_dataset(const Dataset& dataset, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  const std::size_t n = dataset.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) *
                                                          validation_fraction));
  if (n_val >= n) n_val = n - 1;
  // Split permutation is kept apart from the per-epoch shuffles.
  Rng rng(mix_seed(seed, 0xda7a5b17ULL));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (n_val > 0) rng.shuffle(order);

  auto take = [&](std::size_t from, std::size_t to) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(to));
    Batch b = dataset.gather(idx);
    Dataset part;
    part.features = std::move(b.features);
    part.targets = std::move(b.targets);
    part.task = dataset.task;
    part.name = dataset.name;
    part.feature_scaling = dataset.feature_scaling;
    return part;
  };
  Split split{take(n_val, n), std::nullopt};
  if (n_val > 0) split.validation = take(0, n_val);
  return split;
}

}  // namespace nforge

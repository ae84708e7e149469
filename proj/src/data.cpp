#include "coce/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace coce {

namespace {

constexpr std::uint64_t kGenStreamTag = 0xDA7A6E6Eull;
constexpr std::uint64_t kSplitStreamTag = 0x5B117ull;

}  // namespace

void validate(const DataConfig& cfg) {
  if (cfg.num_classes < 2) {
    throw std::invalid_argument("DataConfig: num_classes must be >= 2");
  }
  if (cfg.input_dim < 1) {
    throw std::invalid_argument("DataConfig: input_dim must be positive");
  }
  if (cfg.input_dim < cfg.num_classes) {
    throw std::invalid_argument(
        "DataConfig: input_dim must be >= num_classes (simplex embedding)");
  }
  if (cfg.samples < cfg.num_classes) {
    throw std::invalid_argument("DataConfig: samples < num_classes");
  }
  if (cfg.resolved_test_samples() < 1) {
    throw std::invalid_argument("DataConfig: test_samples must be positive");
  }
  if (!(cfg.class_separation > 0.0)) {
    throw std::invalid_argument("DataConfig: class_separation must be positive");
  }
  if (cfg.s_max < 0) {
    throw std::invalid_argument("DataConfig: s_max must be >= 0");
  }
  if (!(cfg.severity_noise_scale > 0.0)) {
    throw std::invalid_argument("DataConfig: severity_noise_scale must be positive");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw std::invalid_argument("DataConfig: train_fraction must lie in (0, 1)");
  }
}

namespace {

// Unit vectors at the vertices of a regular simplex, embedded in the first
// num_classes coordinates of R^input_dim.
Mat class_directions(int num_classes, int input_dim) {
  Mat dirs = Mat::Zero(num_classes, input_dim);
  const double c = 1.0 / static_cast<double>(num_classes);
  const double norm = std::sqrt(1.0 - c);
  for (int y = 0; y < num_classes; ++y) {
    for (int j = 0; j < num_classes; ++j) {
      dirs(y, j) = ((j == y ? 1.0 : 0.0) - c) / norm;
    }
  }
  return dirs;
}

}  // namespace

double severity_pmf(int s, int s_max) {
  if (s < 0 || s > s_max) return 0.0;
  double cum = 0.0;
  double p = std::exp(-1.0);  // e^-1 / 0!
  for (int k = 0; k < s_max; ++k) {
    if (k == s) return p;
    cum += p;
    p /= static_cast<double>(k + 1);
  }
  return 1.0 - cum;  // tail mass absorbed by s_max
}

int sample_severity(Rng& rng, int s_max) {
  const double u = rng.uniform();
  double cum = 0.0;
  double p = std::exp(-1.0);
  for (int s = 0; s < s_max; ++s) {
    cum += p;
    if (u < cum) return s;
    p /= static_cast<double>(s + 1);
  }
  return s_max;
}

Vec corrupt(const Vec& x, int s, const DataConfig& cfg, Rng& rng) {
  if (s < 0 || s > cfg.s_max) {
    throw std::invalid_argument("corrupt: severity out of range");
  }
  if (s == 0) return x;
  const double scale = cfg.severity_noise_scale * static_cast<double>(s);
  Vec out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] += scale * rng.normal();
  }
  return out;
}

GeneratedData generate_dataset(const DataConfig& cfg) {
  validate(cfg);
  const Mat dirs = class_directions(cfg.num_classes, cfg.input_dim);
  Rng rng(derive_seed(cfg.seed, kGenStreamTag));

  auto draw = [&](bool corrupted_split) {
    LabeledExample ex;
    ex.label = static_cast<int>(rng.uniform_int(cfg.num_classes));
    Vec clean = cfg.class_separation * dirs.row(ex.label).transpose();
    if (!corrupted_split) {
      ex.state = 0;
      for (Eigen::Index i = 0; i < clean.size(); ++i) clean[i] += rng.normal();
      ex.features = clean;
      return ex;
    }
    const int s = sample_severity(rng, cfg.s_max);
    ex.state = s;
    for (Eigen::Index i = 0; i < clean.size(); ++i) clean[i] += rng.normal();
    ex.features = corrupt(clean, s, cfg, rng);
    return ex;
  };

  Dataset pool;
  pool.input_dim = cfg.input_dim;
  pool.examples.reserve(cfg.samples);
  for (int i = 0; i < cfg.samples; ++i) {
    pool.examples.push_back(draw(!cfg.drift_mode));
  }

  Dataset test;
  test.input_dim = cfg.input_dim;
  const int n_test = cfg.resolved_test_samples();
  test.examples.reserve(n_test);
  for (int i = 0; i < n_test; ++i) {
    test.examples.push_back(draw(true));
  }

  GeneratedData out;
  auto [train, val] =
      split(pool, cfg.train_fraction, derive_seed(cfg.seed, kSplitStreamTag));
  out.train = std::move(train);
  out.val = std::move(val);
  out.test = std::move(test);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: train_fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  if (n_train == 0 || n_train >= n) {
    throw std::invalid_argument("split: degenerate split (one side empty)");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_int(i + 1);
    std::swap(order[i], order[j]);
  }

  Dataset train, val;
  train.input_dim = val.input_dim = dataset.input_dim;
  train.examples.reserve(n_train);
  val.examples.reserve(n - n_train);
  for (std::size_t k = 0; k < n; ++k) {
    (k < n_train ? train : val).examples.push_back(dataset.examples[order[k]]);
  }
  return {std::move(train), std::move(val)};
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void parse_error(const std::string& path, std::size_t row,
                              const std::string& what) {
  std::ostringstream os;
  os << path << ": row " << row << ": " << what;
  throw std::runtime_error(os.str());
}

}  // namespace

void save_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out << "state,label";
  for (int j = 0; j < dataset.input_dim; ++j) out << ",f" << j;
  out << "\n";
  for (const LabeledExample& ex : dataset.examples) {
    if (ex.state) out << *ex.state;
    out << ',' << ex.label;
    for (Eigen::Index j = 0; j < ex.features.size(); ++j) {
      out << ',' << format_double(ex.features[j]);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) parse_error(path, 1, "missing header");
  std::vector<std::string> header = split_line(line);

  std::size_t col = 0;
  const bool has_state = !header.empty() && header[0] == "state";
  if (has_state) ++col;
  if (col >= header.size() || header[col] != "label") {
    parse_error(path, 1, "expected 'label' column");
  }
  ++col;
  const int dim = static_cast<int>(header.size() - col);
  if (dim < 1) parse_error(path, 1, "no feature columns");
  for (int j = 0; j < dim; ++j) {
    if (header[col + j] != "f" + std::to_string(j)) {
      parse_error(path, 1, "expected feature column f" + std::to_string(j));
    }
  }

  Dataset ds;
  ds.input_dim = dim;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      parse_error(path, row, "expected " + std::to_string(header.size()) +
                                 " cells, found " + std::to_string(cells.size()));
    }
    LabeledExample ex;
    std::size_t c = 0;
    try {
      if (has_state) {
        if (!cells[c].empty()) {
          const int s = std::stoi(cells[c]);
          if (s < 0) parse_error(path, row, "negative state");
          ex.state = s;
        }
        ++c;
      }
      ex.label = std::stoi(cells[c]);
      ++c;
      ex.features.resize(dim);
      for (int j = 0; j < dim; ++j) {
        ex.features[j] = std::stod(cells[c + j]);
      }
    } catch (const std::invalid_argument&) {
      parse_error(path, row, "malformed numeric cell");
    } catch (const std::out_of_range&) {
      parse_error(path, row, "numeric cell out of range");
    }
    if (!ex.features.allFinite()) parse_error(path, row, "non-finite feature");
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace coce

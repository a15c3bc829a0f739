#include "credtx/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "credtx/errors.hpp"

namespace credtx {

std::string_view split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::full: return "full";
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

ImputationPolicy ImputationPolicy::parse(std::string_view text) {
  ImputationPolicy p;
  if (text == "median") {
    p.kind = Kind::median;
  } else if (text == "mean") {
    p.kind = Kind::mean;
  } else if (text.starts_with("constant(") && text.ends_with(")")) {
    p.kind = Kind::constant;
    const auto inner = text.substr(9, text.size() - 10);
    const auto res = std::from_chars(inner.data(), inner.data() + inner.size(), p.constant);
    if (res.ec != std::errc{} || res.ptr != inner.data() + inner.size()) {
      throw ConfigError("bad imputation constant in '" + std::string(text) + "'");
    }
  } else {
    throw ConfigError("unknown imputation policy '" + std::string(text) +
                      "' (expected median, mean or constant(c))");
  }
  return p;
}

std::string ImputationPolicy::str() const {
  switch (kind) {
    case Kind::median: return "median";
    case Kind::mean: return "mean";
    case Kind::constant: {
      std::ostringstream os;
      os.precision(17);
      os << "constant(" << constant << ")";
      return os.str();
    }
  }
  return "median";
}

void SchemaConfig::validate() const {
  if (label_column.empty()) throw SchemaError("schema: label_column is empty");
  if (std::find(feature_columns.begin(), feature_columns.end(), label_column) !=
      feature_columns.end()) {
    throw SchemaError("schema: label column '" + label_column + "' listed as a feature");
  }
}

// ---------------------------------------------------------------------------

std::size_t FeatureFrame::missing_count() const noexcept {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

std::vector<std::size_t> FeatureFrame::missing_per_column() const {
  std::vector<std::size_t> counts(features(), 0);
  if (missing.empty()) return counts;
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t c = 0; c < features(); ++c) counts[c] += missing[r * features() + c];
  return counts;
}

double FeatureFrame::positive_rate() const noexcept {
  if (y.empty()) return 0.0;
  return static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
}

FeatureFrame FeatureFrame::select_rows(std::span<const std::size_t> idx, SplitTag tag) const {
  if (idx.empty()) throw ConfigError("cannot build a frame with zero rows");
  const std::size_t f = features();
  FeatureFrame out;
  out.feature_names = feature_names;
  out.x = Tensor({idx.size(), f});
  out.y.reserve(idx.size());
  if (!missing.empty()) out.missing.resize(idx.size() * f);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t r = idx[i];
    if (r >= rows()) throw DimensionError("row index out of range in select_rows");
    std::copy_n(x.ptr() + r * f, f, out.x.ptr() + i * f);
    out.y.push_back(y[r]);
    if (!missing.empty()) std::copy_n(missing.begin() + static_cast<std::ptrdiff_t>(r * f), f,
                                      out.missing.begin() + static_cast<std::ptrdiff_t>(i * f));
  }
  if (out.missing_count() == 0) out.missing.clear();
  out.split = tag;
  out.standardized = standardized;
  out.stats = stats;
  return out;
}

void FeatureFrame::validate() const {
  if (x.rank() != 2 || x.dim(0) != y.size() || x.dim(1) != feature_names.size()) {
    throw DataError("frame shape " + shape_str(x.shape()) + " inconsistent with " +
                    std::to_string(y.size()) + " labels and " +
                    std::to_string(feature_names.size()) + " feature names");
  }
  for (int label : y) {
    if (label != 0 && label != 1) throw DataError("label " + std::to_string(label) + " not in {0,1}");
  }
  if (!missing.empty() && missing.size() != x.size()) throw DataError("missing mask has wrong size");
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.emplace_back(trim(cur));
  return fields;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

FeatureFrame parse_csv(std::string_view text, const SchemaConfig& schema,
                       const LoadOptions& options) {
  schema.validate();
  std::vector<std::string_view> lines;
  {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      lines.push_back(text.substr(pos, end - pos));
      pos = end + 1;
    }
  }
  if (lines.empty() || trim(lines.front()).empty()) throw SchemaError("CSV has no header row");

  std::string_view header_line = lines.front();
  if (header_line.starts_with("\xEF\xBB\xBF")) header_line.remove_prefix(3);
  const auto header = split_record(header_line);
  std::unordered_map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index.emplace(header[i], i);

  auto find_col = [&](const std::string& name) {
    auto it = col_index.find(name);
    if (it == col_index.end()) throw SchemaError("CSV header lacks column '" + name + "'");
    return it->second;
  };
  const std::size_t label_idx = find_col(schema.label_column);

  std::vector<std::string> names = schema.feature_columns;
  if (names.empty()) {
    for (const auto& h : header) {
      if (h == schema.label_column) continue;
      if (std::find(schema.ignore_columns.begin(), schema.ignore_columns.end(), h) !=
          schema.ignore_columns.end())
        continue;
      names.push_back(h);
    }
    if (names.empty()) throw SchemaError("CSV has no feature columns besides the label");
  }
  std::vector<std::size_t> feat_idx;
  feat_idx.reserve(names.size());
  for (const auto& n : names) feat_idx.push_back(find_col(n));

  auto is_missing = [&](std::string_view cell) {
    return std::find(schema.missing_markers.begin(), schema.missing_markers.end(), cell) !=
           schema.missing_markers.end();
  };

  const std::size_t f = names.size();
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;
  bool any_missing = false;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_record(lines[ln]);
    const std::string line_no = std::to_string(ln + 1);
    if (cells.size() != header.size()) {
      throw DataError("line " + line_no + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    }
    double label = 0.0;
    if (!parse_double(cells[label_idx], label) || (label != 0.0 && label != 1.0)) {
      throw DataError("line " + line_no + ": label '" + cells[label_idx] + "' is not 0 or 1");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t c = 0; c < f; ++c) {
      const std::string& cell = cells[feat_idx[c]];
      if (is_missing(cell)) {
        values.push_back(0.0);
        mask.push_back(1);
        any_missing = true;
        continue;
      }
      double v = 0.0;
      if (!parse_double(cell, v)) {
        throw DataError("line " + line_no + ": cannot parse '" + cell + "' in column '" +
                        names[c] + "'");
      }
      values.push_back(v);
      mask.push_back(0);
    }
  }
  if (labels.empty()) throw DataError("CSV has no data rows");

  FeatureFrame frame;
  frame.feature_names = std::move(names);
  frame.x = Tensor({labels.size(), f}, std::move(values));
  frame.y = std::move(labels);
  if (any_missing) frame.missing = std::move(mask);

  if (options.subsample > 0 && options.subsample < frame.rows()) {
    std::vector<std::size_t> idx(frame.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(options.subsample_seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(options.subsample);
    std::sort(idx.begin(), idx.end());
    frame = frame.select_rows(idx, SplitTag::full);
  }
  return frame;
}

FeatureFrame load_csv(const std::filesystem::path& path, const SchemaConfig& schema,
                      const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema, options);
}

void write_csv(const FeatureFrame& frame, const std::filesystem::path& path,
               const std::string& label_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& n : frame.feature_names) out << n << ',';
  out << label_column << '\n';
  char buf[64];
  const std::size_t f = frame.features();
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      if (!frame.missing.empty() && frame.missing[r * f + c]) {
        out << "NA,";
        continue;
      }
      auto res = std::to_chars(buf, buf + sizeof buf, frame.x(r, c));
      out.write(buf, res.ptr - buf);
      out << ',';
    }
    out << frame.y[r] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessing statistics

namespace {

void require_fit_on_train(const FeatureFrame& frame, const char* what) {
  if (frame.split != SplitTag::train) {
    throw LeakageError(std::string(what) + " must be fitted on the train split, got a '" +
                       std::string(split_tag_name(frame.split)) + "' frame");
  }
}

void require_train_stats(SplitTag tag, const char* what) {
  if (tag != SplitTag::train) {
    throw LeakageError(std::string(what) + " statistics were fitted on '" +
                       std::string(split_tag_name(tag)) + "', not on the train split");
  }
}

void require_width(const FeatureFrame& frame, std::size_t width, const char* what) {
  if (frame.features() != width) {
    throw SchemaError(std::string(what) + ": statistics cover " + std::to_string(width) +
                      " features, frame has " + std::to_string(frame.features()));
  }
}

bool is_missing(const FeatureFrame& frame, std::size_t r, std::size_t c) {
  return !frame.missing.empty() && frame.missing[r * frame.features() + c];
}

std::vector<double> observed_column(const FeatureFrame& frame, std::size_t c) {
  std::vector<double> col;
  col.reserve(frame.rows());
  for (std::size_t r = 0; r < frame.rows(); ++r)
    if (!is_missing(frame, r, c)) col.push_back(frame.x(r, c));
  return col;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linear interpolation between order statistics.
double quantile_of(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

ImputeStats impute_fit(const FeatureFrame& frame, const ImputationPolicy& policy) {
  require_fit_on_train(frame, "imputation");
  ImputeStats stats{policy, std::vector<double>(frame.features(), policy.constant), SplitTag::train};
  if (policy.kind == ImputationPolicy::Kind::constant) return stats;
  for (std::size_t c = 0; c < frame.features(); ++c) {
    auto col = observed_column(frame, c);
    if (col.empty()) {
      throw DataError("column '" + frame.feature_names[c] + "' is entirely missing; cannot impute by " +
                      policy.str());
    }
    if (policy.kind == ImputationPolicy::Kind::median) {
      stats.fill[c] = median_of(std::move(col));
    } else {
      stats.fill[c] = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    }
  }
  return stats;
}

FeatureFrame impute_apply(const FeatureFrame& frame, const ImputeStats& stats) {
  require_train_stats(stats.fitted_on, "imputation");
  require_width(frame, stats.fill.size(), "impute_apply");
  FeatureFrame out = frame;
  if (out.missing.empty()) return out;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.features(); ++c)
      if (is_missing(frame, r, c)) out.x(r, c) = stats.fill[c];
  out.missing.clear();
  return out;
}

FeatureFrame impute(const FeatureFrame& train, const SchemaConfig& schema) {
  return impute_apply(train, impute_fit(train, schema.imputation));
}

StandardizeStats standardize_fit(const FeatureFrame& frame) {
  require_fit_on_train(frame, "standardization");
  if (frame.missing_count() > 0) throw DataError("standardize_fit: impute missing cells first");
  const std::size_t n = frame.rows(), f = frame.features();
  StandardizeStats stats{std::vector<double>(f, 0.0), std::vector<double>(f, 0.0), SplitTag::train};
  for (std::size_t c = 0; c < f; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += frame.x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (frame.x(r, c) - mean) * (frame.x(r, c) - mean);
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(var / static_cast<double>(n));  // population std
  }
  return stats;
}

FeatureFrame standardize_apply(const FeatureFrame& frame, const StandardizeStats& stats) {
  require_train_stats(stats.fitted_on, "standardization");
  require_width(frame, stats.mean.size(), "standardize_apply");
  if (frame.missing_count() > 0) throw DataError("standardize_apply: impute missing cells first");
  FeatureFrame out = frame;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.features(); ++c) {
      const double s = stats.std[c];
      out.x(r, c) = s < 1e-12 ? 0.0 : (frame.x(r, c) - stats.mean[c]) / s;
    }
  }
  out.standardized = true;
  out.stats = stats;
  return out;
}

WinsorizeStats winsorize_fit(const FeatureFrame& frame, double lower_q, double upper_q) {
  require_fit_on_train(frame, "winsorization");
  if (!(lower_q >= 0.0 && lower_q < upper_q && upper_q <= 1.0)) {
    throw ConfigError("winsorize quantiles must satisfy 0 <= lower < upper <= 1");
  }
  WinsorizeStats stats;
  stats.fitted_on = SplitTag::train;
  for (std::size_t c = 0; c < frame.features(); ++c) {
    auto col = observed_column(frame, c);
    if (col.empty()) throw DataError("column '" + frame.feature_names[c] + "' is entirely missing");
    std::sort(col.begin(), col.end());
    stats.lower.push_back(quantile_of(col, lower_q));
    stats.upper.push_back(quantile_of(col, upper_q));
  }
  return stats;
}

FeatureFrame winsorize_apply(const FeatureFrame& frame, const WinsorizeStats& stats) {
  require_train_stats(stats.fitted_on, "winsorization");
  require_width(frame, stats.lower.size(), "winsorize_apply");
  FeatureFrame out = frame;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.features(); ++c)
      out.x(r, c) = std::clamp(frame.x(r, c), stats.lower[c], stats.upper[c]);
  return out;
}

FeatureFrame Preprocessor::apply(const FeatureFrame& frame) const {
  FeatureFrame out = impute_apply(frame, impute);
  if (winsorize) out = winsorize_apply(out, *winsorize);
  return standardize_apply(out, standardize);
}

Preprocessor fit_preprocessor(const FeatureFrame& train, const PreprocessOptions& options) {
  Preprocessor pre;
  pre.impute = impute_fit(train, options.imputation);
  FeatureFrame filled = impute_apply(train, pre.impute);
  if (options.winsorize) {
    pre.winsorize = winsorize_fit(filled, options.winsorize->first, options.winsorize->second);
    filled = winsorize_apply(filled, *pre.winsorize);
  }
  pre.standardize = standardize_fit(filled);
  return pre;
}

SplitFrames preprocess(const SplitFrames& raw, const Preprocessor& pre) {
  return {pre.apply(raw.train), pre.apply(raw.val), pre.apply(raw.test)};
}

// ---------------------------------------------------------------------------
// Splitting

void SplitSpec::validate() const {
  for (double v : {train, val, test}) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("split fractions must each lie in (0,1)");
  }
  if (std::abs(train + val + test - 1.0) > 1e-12) {
    throw ConfigError("split fractions must sum to 1");
  }
}

namespace {

void allocate(std::vector<std::size_t> pool, const SplitSpec& spec, SplitIndices& out) {
  const double n = static_cast<double>(pool.size());
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * n));
  const auto n_val = std::min(pool.size() - n_train,
                              static_cast<std::size_t>(std::llround(spec.val * n)));
  out.train.insert(out.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.insert(out.val.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_train),
                 pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.insert(out.test.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                  pool.end());
}

}  // namespace

SplitIndices split_indices(std::span<const int> labels, const SplitSpec& spec) {
  spec.validate();
  if (labels.size() < 10) throw ConfigError("split needs at least 10 rows");
  std::mt19937_64 rng(spec.seed);
  SplitIndices out;
  if (spec.stratified) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::shuffle(pos.begin(), pos.end(), rng);
    allocate(std::move(neg), spec, out);
    allocate(std::move(pos), spec, out);
  } else {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    allocate(std::move(all), spec, out);
  }
  for (auto* part : {&out.train, &out.val, &out.test}) {
    if (part->empty()) throw ConfigError("split produced an empty partition; adjust fractions");
    std::sort(part->begin(), part->end());
  }
  return out;
}

SplitFrames split(const FeatureFrame& frame, const SplitSpec& spec) {
  const auto idx = split_indices(frame.y, spec);
  return {frame.select_rows(idx.train, SplitTag::train), frame.select_rows(idx.val, SplitTag::val),
          frame.select_rows(idx.test, SplitTag::test)};
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::vector<std::string> synth_preset_names() {
  return {"noise", "strong-single", "linear", "xor", "long-range", "local-long"};
}

SynthSpec synth_preset(std::string_view name, std::size_t n_features) {
  SynthSpec s;
  s.name = std::string(name);
  s.weights.assign(n_features, 0.0);
  auto need = [&](std::size_t k) {
    if (n_features < k) {
      throw ConfigError("synthetic preset '" + s.name + "' needs at least " + std::to_string(k) +
                        " features");
    }
  };
  if (name == "noise") {
    need(1);
  } else if (name == "strong-single") {
    need(1);
    s.weights[0] = 5.0;
  } else if (name == "linear") {
    need(5);
    const double w[] = {4.0, -3.0, 2.5, -2.0, 1.5};
    std::copy(std::begin(w), std::end(w), s.weights.begin());
  } else if (name == "xor") {
    need(2);
    s.pairs = {{0, 1, 4.0}};
  } else if (name == "long-range") {
    need(6);
    // Feature i interacts with feature i + F/2 for every i in the first half.
    for (std::size_t i = 0; i < n_features / 2; ++i) s.pairs.push_back({i, i + n_features / 2, 1.5});
  } else if (name == "local-long") {
    need(8);
    // The long-range pairs at half strength plus a width-3 product motif
    // straddling the middle of the sequence.
    for (std::size_t i = 0; i < n_features / 2; ++i) s.pairs.push_back({i, i + n_features / 2, 1.0});
    s.motif = SynthSpec::Motif{n_features / 2 - 1, 3, 2.0};
  } else {
    throw ConfigError("unknown synthetic preset '" + s.name + "'");
  }
  return s;
}

double synth_logit(const SynthSpec& spec, std::span<const double> row) {
  double z = spec.bias;
  const std::size_t nw = std::min(spec.weights.size(), row.size());
  for (std::size_t i = 0; i < nw; ++i) z += spec.weights[i] * row[i];
  for (const auto& p : spec.pairs) z += p.coef * row[p.a] * row[p.b];
  if (spec.motif) {
    const auto& m = *spec.motif;
    for (std::size_t t = m.start; t + 1 < m.start + m.width; ++t) z += m.coef * row[t] * row[t + 1];
  }
  return z;
}

SynthData synth_generate(std::size_t n, std::size_t n_features, std::uint64_t seed,
                         const SynthSpec& spec) {
  if (n < 100) throw ConfigError("synth_generate needs n >= 100");
  if (n_features < 1) throw ConfigError("synth_generate needs at least one feature");
  for (const auto& p : spec.pairs) {
    if (p.a >= n_features || p.b >= n_features) throw ConfigError("synthetic interaction pair out of range");
  }
  if (spec.motif && (spec.motif->width < 2 || spec.motif->start + spec.motif->width > n_features)) {
    throw ConfigError("synthetic motif window out of range");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SynthData out;
  auto& frame = out.frame;
  for (std::size_t c = 0; c < n_features; ++c) frame.feature_names.push_back("f" + std::to_string(c));
  frame.x = Tensor({n, n_features});
  frame.y.resize(n);
  out.bayes_logits.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double* row = frame.x.ptr() + r * n_features;
    for (std::size_t c = 0; c < n_features; ++c) row[c] = normal(rng);
    const double z = synth_logit(spec, std::span<const double>(row, n_features));
    out.bayes_logits[r] = z;
    const double p = 1.0 / (1.0 + std::exp(-z));
    frame.y[r] = unif(rng) < p ? 1 : 0;
  }
  return out;
}

}  // namespace credtx

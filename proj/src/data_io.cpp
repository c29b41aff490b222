#include "bgnn/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "bgnn/errors.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

struct CsvRecord {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw LoadError(file.string() + ":" + std::to_string(line) + ": " + what);
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(file.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// RFC 4180 records: quoted fields may hold commas, doubled quotes and newlines.
// Blank lines are dropped unless keep_blank (single-column files use them for
// missing values).
std::vector<CsvRecord> parse_csv(const fs::path& file, bool keep_blank = false) {
  const std::string text = read_file(file);
  std::vector<CsvRecord> records;
  CsvRecord rec{1, {}};
  std::string field;
  std::size_t line = 1;
  bool in_quotes = false, field_started = false;
  auto end_field = [&] {
    rec.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (keep_blank || !(rec.fields.size() == 1 && rec.fields[0].empty())) records.push_back(std::move(rec));
    rec = CsvRecord{line, {}};
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
    } else if (c == '"') {
      if (field_started) fail(file, line, "stray quote inside unquoted field");
      in_quotes = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      ++line;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) fail(file, line, "unterminated quoted field");
  if (field_started || !rec.fields.empty()) end_record();
  return records;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

void expect_header(const fs::path& file, const std::vector<CsvRecord>& recs, const std::vector<std::string>& names) {
  if (recs.empty()) fail(file, 1, "missing header");
  if (recs[0].fields != names) {
    std::string want;
    for (const auto& n : names) want += (want.empty() ? "" : ",") + n;
    fail(file, recs[0].line, "header must be '" + want + "'");
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw LoadError(file.string() + ": cannot write");
  out << text;
  if (!out) throw LoadError(file.string() + ": write failed");
}

std::string task_name(Task t) { return t == Task::Regression ? "regression" : "classification"; }

Task parse_task(const std::string& s) {
  if (s == "regression") return Task::Regression;
  if (s == "classification") return Task::Classification;
  throw LoadError("manifest: unknown task '" + s + "'");
}

std::vector<Edge> canonical_edges(std::vector<Edge> edges) {
  for (Edge& e : edges)
    if (e.src > e.dst) std::swap(e.src, e.dst);
  std::erase_if(edges, [](const Edge& e) { return e.src == e.dst; });
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

}  // namespace

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const Column& c : schema.columns) {
    nlohmann::json jc{{"name", c.name}, {"kind", c.kind == ColumnKind::Numeric ? "numeric" : "categorical"}};
    if (c.kind == ColumnKind::Categorical) jc["categories"] = c.categories;
    cols.push_back(std::move(jc));
  }
  nlohmann::json j{{"format_version", kFormatVersion},
                   {"name", name},
                   {"task", task_name(task)},
                   {"num_classes", num_classes},
                   {"files", {{"features", features_file}, {"edges", edges_file}, {"targets", targets_file}}},
                   {"columns", cols}};
  if (!class_bins.empty()) j["class_bins"] = class_bins;
  if (knn_radius) j["knn_radius"] = *knn_radius;
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) throw LoadError("manifest: unsupported format_version");
    m.name = j.at("name").get<std::string>();
    m.task = parse_task(j.at("task").get<std::string>());
    m.num_classes = j.value("num_classes", 0);
    const auto& files = j.at("files");
    m.features_file = files.at("features").get<std::string>();
    m.edges_file = files.at("edges").get<std::string>();
    m.targets_file = files.at("targets").get<std::string>();
    std::set<std::string> seen;
    for (const auto& jc : j.at("columns")) {
      Column c;
      c.name = jc.at("name").get<std::string>();
      if (!seen.insert(c.name).second) throw LoadError("manifest: duplicate column '" + c.name + "'");
      const auto kind = jc.at("kind").get<std::string>();
      if (kind == "numeric") {
        c.kind = ColumnKind::Numeric;
      } else if (kind == "categorical") {
        c.kind = ColumnKind::Categorical;
        c.categories = jc.value("categories", std::vector<std::string>{});
      } else {
        throw LoadError("manifest: column '" + c.name + "' has unknown kind '" + kind + "'");
      }
      m.schema.columns.push_back(std::move(c));
    }
    m.class_bins = j.value("class_bins", std::vector<double>{});
    if (j.contains("knn_radius")) m.knn_radius = j.at("knn_radius").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("manifest: ") + e.what());
  }
  if (!std::is_sorted(m.class_bins.begin(), m.class_bins.end()))
    throw LoadError("manifest: class_bins must be ascending");
  if (!m.class_bins.empty()) {
    if (m.task != Task::Classification) throw LoadError("manifest: class_bins given for a regression task");
    m.num_classes = static_cast<int>(m.class_bins.size()) + 1;
  }
  if (m.task == Task::Classification && m.num_classes < 2)
    throw LoadError("manifest: classification needs num_classes >= 2");
  return m;
}

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset ds;
  {
    const std::string text = read_file(manifest_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(manifest_path.string() + ": " + e.what());
    }
    try {
      ds.manifest = DatasetManifest::from_json(j);
    } catch (const LoadError& e) {
      throw LoadError(manifest_path.string() + ": " + e.what());
    }
  }
  const fs::path root = manifest_path.parent_path();
  DatasetManifest& m = ds.manifest;

  // Features.
  const fs::path ffile = root / m.features_file;
  const auto frecs = parse_csv(ffile, m.schema.size() == 1);
  std::vector<std::string> names;
  for (const Column& c : m.schema.columns) names.push_back(c.name);
  expect_header(ffile, frecs, names);
  const std::size_t n = frecs.size() - 1;
  const std::size_t d = names.size();
  for (std::size_t r = 1; r < frecs.size(); ++r)
    if (frecs[r].fields.size() != d)
      fail(ffile, frecs[r].line,
           "expected " + std::to_string(d) + " fields, found " + std::to_string(frecs[r].fields.size()));
  for (Column& c : m.schema.columns) {
    if (c.kind != ColumnKind::Categorical || !c.categories.empty()) continue;
    const std::size_t col = &c - m.schema.columns.data();
    std::set<std::string> cats;
    for (std::size_t r = 1; r < frecs.size(); ++r)
      if (!frecs[r].fields[col].empty()) cats.insert(frecs[r].fields[col]);
    c.categories.assign(cats.begin(), cats.end());
  }
  ds.features = FeatureMatrix(m.schema, n);
  for (std::size_t c = 0; c < d; ++c) {
    const Column& col = m.schema.columns[c];
    std::map<std::string_view, std::size_t> codes;
    for (std::size_t k = 0; k < col.categories.size(); ++k) codes.emplace(col.categories[k], k);
    for (std::size_t r = 0; r < n; ++r) {
      const std::string& cell = frecs[r + 1].fields[c];
      if (cell.empty()) {
        ds.features.set_missing(r, c);
      } else if (col.kind == ColumnKind::Numeric) {
        const auto v = parse_double(cell);
        if (!v) fail(ffile, frecs[r + 1].line, "column '" + col.name + "': cannot parse '" + cell + "' as a number");
        ds.features.set(r, c, *v);
      } else {
        const auto it = codes.find(cell);
        if (it == codes.end())
          fail(ffile, frecs[r + 1].line, "column '" + col.name + "': category '" + cell + "' not in dictionary");
        ds.features.set(r, c, static_cast<double>(it->second));
      }
    }
  }

  // Targets.
  const fs::path tfile = root / m.targets_file;
  const auto trecs = parse_csv(tfile, true);
  expect_header(tfile, trecs, {"target"});
  if (trecs.size() - 1 != n)
    fail(tfile, trecs.back().line,
         std::to_string(trecs.size() - 1) + " target rows but " + std::to_string(n) + " feature rows");
  ds.targets.task = m.task;
  ds.targets.num_classes = m.task == Task::Classification ? m.num_classes : 0;
  ds.targets.values.assign(n, 0.0);
  ds.targets.labeled.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = trecs[r + 1];
    if (rec.fields.size() != 1) fail(tfile, rec.line, "expected 1 field");
    if (rec.fields[0].empty()) continue;
    const auto v = parse_double(rec.fields[0]);
    if (!v) fail(tfile, rec.line, "cannot parse target '" + rec.fields[0] + "'");
    double value = *v;
    if (!m.class_bins.empty()) {
      value = bin_targets(std::span<const double>(&value, 1), m.class_bins)[0];
    } else if (m.task == Task::Classification &&
               (value != std::floor(value) || value < 0 || value >= m.num_classes)) {
      fail(tfile, rec.line, "class label '" + rec.fields[0] + "' outside [0, " + std::to_string(m.num_classes) + ")");
    }
    ds.targets.values[r] = value;
    ds.targets.labeled[r] = 1;
  }

  // Edges.
  const fs::path efile = root / m.edges_file;
  const auto erecs = parse_csv(efile);
  expect_header(efile, erecs, {"src", "dst"});
  std::vector<Edge> edges;
  edges.reserve(erecs.size());
  for (std::size_t i = 1; i < erecs.size(); ++i) {
    const auto& rec = erecs[i];
    if (rec.fields.size() != 2) fail(efile, rec.line, "expected 2 fields");
    const auto s = parse_index(rec.fields[0]);
    const auto t = parse_index(rec.fields[1]);
    if (!s || !t) fail(efile, rec.line, "node ids must be non-negative integers");
    if (*s >= n || *t >= n)
      fail(efile, rec.line, "edge endpoint " + std::to_string(std::max(*s, *t)) + " >= node count " + std::to_string(n));
    edges.push_back({*s, *t});
  }
  ds.edges = canonical_edges(std::move(edges));
  ds.graph = build_graph(ds.edges, n);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const DatasetManifest& m = ds.manifest;
  const FeatureMatrix& x = ds.features;
  if (x.schema() != m.schema) throw ContractError("save_dataset: feature schema differs from manifest");
  if (ds.targets.size() != x.rows()) throw ContractError("save_dataset: target count differs from row count");
  write_text(dir / "manifest.json", m.to_json().dump(2) + "\n");

  std::string out;
  for (std::size_t c = 0; c < x.cols(); ++c) out += (c ? "," : "") + csv_field(m.schema.columns[c].name);
  out += '\n';
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (c) out += ',';
      if (x.missing(r, c)) continue;
      if (x.kind(c) == ColumnKind::Numeric) out += format_double(x.value(r, c));
      else out += csv_field(m.schema.columns[c].categories[static_cast<std::size_t>(x.value(r, c))]);
    }
    out += '\n';
  }
  write_text(dir / m.features_file, out);

  out = "target\n";
  for (std::size_t r = 0; r < ds.targets.size(); ++r) {
    if (ds.targets.labeled[r]) out += format_double(ds.targets.values[r]);
    out += '\n';
  }
  write_text(dir / m.targets_file, out);

  out = "src,dst\n";
  for (const Edge& e : ds.edges) out += std::to_string(e.src) + "," + std::to_string(e.dst) + "\n";
  write_text(dir / m.edges_file, out);
}

KnnTable knn_table(const Matrix& coords, std::size_t k) {
  if (k < 1) throw ConfigError("knn: k must be at least 1");
  if (coords.cols() != 2) throw ShapeError("knn: coordinates must have 2 columns");
  const std::size_t n = coords.rows();
  KnnTable t;
  t.k = k;
  t.neighbors.resize(n);
  t.distances.resize(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = coords(i, 0) - coords(j, 0), dy = coords(i, 1) - coords(j, 1);
      cand.emplace_back(std::sqrt(dx * dx + dy * dy), j);
    }
    const std::size_t keep = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
    for (std::size_t q = 0; q < keep; ++q) {
      t.distances[i].push_back(cand[q].first);
      t.neighbors[i].push_back(cand[q].second);
    }
  }
  return t;
}

std::vector<Edge> knn_edges(const KnnTable& table, double radius) {
  if (!(radius > 0.0)) throw ConfigError("knn: radius must be positive");
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < table.neighbors.size(); ++i)
    for (std::size_t q = 0; q < table.neighbors[i].size(); ++q)
      if (table.distances[i][q] <= radius) edges.push_back({i, table.neighbors[i][q]});
  return canonical_edges(std::move(edges));
}

std::vector<Edge> build_knn_graph(const Matrix& coords, std::size_t k, double radius) {
  return knn_edges(knn_table(coords, k), radius);
}

std::optional<double> fit_knn_radius(const KnnTable& table, std::size_t target_directed) {
  // A pair enters the graph once the radius reaches its distance, so the
  // directed edge count at radius r is twice the number of candidate pairs
  // no farther than r.
  std::map<std::pair<std::size_t, std::size_t>, double> pairs;
  for (std::size_t i = 0; i < table.neighbors.size(); ++i)
    for (std::size_t q = 0; q < table.neighbors[i].size(); ++q) {
      const std::size_t j = table.neighbors[i][q];
      pairs.emplace(std::minmax(i, j), table.distances[i][q]);
    }
  std::vector<double> d;
  d.reserve(pairs.size());
  for (const auto& [p, dist] : pairs) d.push_back(dist);
  std::sort(d.begin(), d.end());
  const std::size_t needed = (target_directed + 1) / 2;
  if (needed == 0) return std::nullopt;
  if (needed > d.size()) return std::nullopt;
  return std::max(d[needed - 1], std::numeric_limits<double>::min());
}

std::vector<int> bin_targets(std::span<const double> values, std::span<const double> edges) {
  std::vector<int> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()));
  return out;
}

void SyntheticSpec::validate() const {
  if (n < 2) throw ConfigError("synthetic: n must be at least 2");
  if (k < 1) throw ConfigError("synthetic: k must be at least 1");
  if (n_numeric + n_categorical == 0) throw ConfigError("synthetic: need at least one feature");
  if (n_categorical > 0 && categories < 2) throw ConfigError("synthetic: categorical columns need >= 2 categories");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("synthetic: missing_rate must lie in [0, 1)");
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) throw ConfigError("synthetic: smoothing must lie in [0, 1]");
  if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be non-negative");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n", n},           {"k", k},
          {"n_numeric", n_numeric}, {"n_categorical", n_categorical},
          {"categories", categories}, {"rule_depth", rule_depth},
          {"missing_rate", missing_rate}, {"smoothing", smoothing},
          {"noise", noise},   {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.n = j.value("n", s.n);
    s.k = j.value("k", s.k);
    s.n_numeric = j.value("n_numeric", s.n_numeric);
    s.n_categorical = j.value("n_categorical", s.n_categorical);
    s.categories = j.value("categories", s.categories);
    s.rule_depth = j.value("rule_depth", s.rule_depth);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
    s.smoothing = j.value("smoothing", s.smoothing);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

// Random rule tree: internal nodes test one column, leaves hold N(0, 1) values.
struct RuleNode {
  bool leaf = true;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::vector<std::uint8_t> left_codes;
  bool missing_left = true;
  double value = 0.0;
  std::size_t left = 0, right = 0;
};

bool goes_left(const RuleNode& nd, const FeatureMatrix& x, std::size_t row) {
  if (x.missing(row, nd.feature)) return nd.missing_left;
  if (x.kind(nd.feature) == ColumnKind::Numeric) return x.value(row, nd.feature) <= nd.threshold;
  return nd.left_codes[static_cast<std::size_t>(x.value(row, nd.feature))] != 0;
}

// Numeric thresholds sit at the median of the rows reaching the node, so
// every leaf of the rule covers a similar share of the data.
std::size_t grow_rule(std::vector<RuleNode>& nodes, const FeatureMatrix& x, const SyntheticSpec& spec,
                      const std::vector<std::size_t>& rows, std::size_t depth, CounterRng& rng) {
  const std::size_t id = nodes.size();
  nodes.emplace_back();
  if (depth == spec.rule_depth || rows.size() < 2) {
    nodes[id].value = rng.normal();
    return id;
  }
  RuleNode node;
  node.leaf = false;
  node.feature = rng.below(x.cols());
  node.missing_left = rng.uniform() < 0.5;
  if (x.kind(node.feature) == ColumnKind::Numeric) {
    std::vector<double> present;
    for (std::size_t r : rows)
      if (!x.missing(r, node.feature)) present.push_back(x.value(r, node.feature));
    if (!present.empty()) {
      auto mid = present.begin() + static_cast<std::ptrdiff_t>(present.size() / 2);
      std::nth_element(present.begin(), mid, present.end());
      node.threshold = *mid;
    }
  } else {
    node.left_codes.assign(spec.categories, 0);
    for (std::size_t k = 0; k < spec.categories; ++k) node.left_codes[k] = k % 2;
    rng.shuffle(std::span<std::uint8_t>(node.left_codes));
  }
  std::vector<std::size_t> left_rows, right_rows;
  for (std::size_t r : rows) (goes_left(node, x, r) ? left_rows : right_rows).push_back(r);
  nodes[id] = node;
  const std::size_t l = grow_rule(nodes, x, spec, left_rows, depth + 1, rng);
  const std::size_t r = grow_rule(nodes, x, spec, right_rows, depth + 1, rng);
  nodes[id].left = l;
  nodes[id].right = r;
  return id;
}

double eval_rule(const std::vector<RuleNode>& nodes, const FeatureMatrix& x, std::size_t row) {
  std::size_t i = 0;
  while (!nodes[i].leaf) i = goes_left(nodes[i], x, row) ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.name = "synthetic";
  m.task = Task::Regression;
  for (std::size_t j = 0; j < spec.n_numeric; ++j) m.schema.columns.push_back({"num" + std::to_string(j), ColumnKind::Numeric, {}});
  for (std::size_t j = 0; j < spec.n_categorical; ++j) {
    Column c{"cat" + std::to_string(j), ColumnKind::Categorical, {}};
    for (std::size_t k = 0; k < spec.categories; ++k) c.categories.push_back("c" + std::to_string(k));
    m.schema.columns.push_back(std::move(c));
  }

  const std::size_t n = spec.n;
  ds.features = FeatureMatrix(m.schema, n);
  for (std::size_t c = 0; c < m.schema.size(); ++c) {
    CounterRng rng(spec.seed, 1, c);
    // Numeric columns alternate Gaussian and log-normal draws at scales 10^(c mod 4 - 1).
    const double scale = std::pow(10.0, static_cast<double>(c % 4) - 1.0);
    for (std::size_t r = 0; r < n; ++r) {
      const bool miss = rng.uniform() < spec.missing_rate;
      double v;
      if (m.schema.columns[c].kind == ColumnKind::Numeric) v = c % 2 == 0 ? scale * rng.normal() : scale * std::exp(rng.normal());
      else v = static_cast<double>(rng.below(spec.categories));
      if (miss) ds.features.set_missing(r, c);
      else ds.features.set(r, c, v);
    }
  }

  Matrix coords(n, 2);
  {
    CounterRng rng(spec.seed, 2, 0);
    for (double& v : coords.values()) v = rng.uniform();
  }
  ds.edges = knn_edges(knn_table(coords, spec.k), std::numeric_limits<double>::infinity());
  ds.graph = build_graph(ds.edges, n);

  std::vector<RuleNode> rule;
  {
    CounterRng rng(spec.seed, 3, 0);
    std::vector<std::size_t> all(n);
    for (std::size_t r = 0; r < n; ++r) all[r] = r;
    grow_rule(rule, ds.features, spec, all, 0, rng);
  }
  std::vector<double> raw(n);
  for (std::size_t r = 0; r < n; ++r) raw[r] = eval_rule(rule, ds.features, r);

  std::vector<std::vector<std::size_t>> adj(n);
  for (const Edge& e : ds.edges) {
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  ds.targets.task = Task::Regression;
  ds.targets.values.resize(n);
  ds.targets.labeled.assign(n, 1);
  CounterRng noise(spec.seed, 4, 0);
  for (std::size_t v = 0; v < n; ++v) {
    double nb = raw[v];
    if (!adj[v].empty()) {
      nb = 0.0;
      for (std::size_t u : adj[v]) nb += raw[u];
      nb /= static_cast<double>(adj[v].size());
    }
    double y = (1.0 - spec.smoothing) * raw[v] + spec.smoothing * nb;
    if (spec.noise > 0.0) y += spec.noise * noise.normal();
    ds.targets.values[v] = y;
  }
  return ds;
}

Dataset prepare_house(const fs::path& raw_csv, const HouseOptions& options) {
  const auto recs = parse_csv(raw_csv);
  if (recs.empty()) throw LoadError(raw_csv.string() + ": empty file");
  const bool has_header = !parse_double(recs[0].fields[0]).has_value();
  static const std::vector<std::string> kRaw{"longitude",  "latitude",   "housingMedianAge",
                                             "totalRooms", "totalBedrooms", "population",
                                             "households", "medianIncome", "medianHouseValue"};
  static const std::vector<std::string> kSk{"MedInc",   "HouseAge", "AveRooms",  "AveBedrms",  "Population",
                                            "AveOccup", "Latitude", "Longitude", "MedHouseVal"};
  bool sklearn = false;
  if (has_header) {
    if (recs[0].fields == kSk) sklearn = true;
    else if (recs[0].fields != kRaw) fail(raw_csv, recs[0].line, "unrecognized header");
  }
  const std::size_t first = has_header ? 1 : 0;
  const std::size_t n = recs.size() - first;

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.name = options.classification ? "house_class" : "house";
  m.task = options.classification ? Task::Classification : Task::Regression;
  for (const char* c : {"MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population", "AveOccup"})
    m.schema.columns.push_back({c, ColumnKind::Numeric, {}});
  if (options.classification) m.num_classes = static_cast<int>(kHouseClassBins.size()) + 1;
  ds.features = FeatureMatrix(m.schema, n);
  Matrix coords(n, 2);
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = recs[first + i];
    if (rec.fields.size() != 9) fail(raw_csv, rec.line, "expected 9 fields");
    double f[9];
    for (int k = 0; k < 9; ++k) {
      const auto v = parse_double(rec.fields[k]);
      if (!v) fail(raw_csv, rec.line, "cannot parse '" + rec.fields[k] + "'");
      f[k] = *v;
    }
    double row[6];
    if (sklearn) {
      std::copy(f, f + 6, row);
      coords(i, 0) = f[6];
      coords(i, 1) = f[7];
      target[i] = f[8];
    } else {
      const double households = f[6];
      if (!(households > 0)) fail(raw_csv, rec.line, "households must be positive");
      row[0] = f[7];
      row[1] = f[2];
      row[2] = f[3] / households;
      row[3] = f[4] / households;
      row[4] = f[5];
      row[5] = f[5] / households;
      coords(i, 0) = f[1];
      coords(i, 1) = f[0];
      target[i] = f[8] / 100000.0;
    }
    for (int c = 0; c < 6; ++c) ds.features.set(i, c, row[c]);
  }

  const KnnTable table = knn_table(coords, options.k);
  const auto radius = fit_knn_radius(table, options.target_edges);
  if (!radius) throw LoadError(raw_csv.string() + ": k-NN graph cannot reach the requested edge count");
  m.knn_radius = *radius;
  ds.edges = knn_edges(table, *radius);
  ds.graph = build_graph(ds.edges, n);

  ds.targets.task = m.task;
  ds.targets.num_classes = m.num_classes;
  ds.targets.labeled.assign(n, 1);
  if (options.classification) {
    const auto cls = bin_targets(target, kHouseClassBins);
    ds.targets.values.assign(cls.begin(), cls.end());
  } else {
    ds.targets.values = target;
  }
  return ds;
}

}  // namespace bgnn

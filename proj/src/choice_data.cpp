#include "deephalo/choice_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "deephalo/errors.hpp"

namespace deephalo::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& msg) {
  throw DataError(source + ":" + std::to_string(line) + ": " + msg);
}

int parse_int(const std::string& s, const std::string& source, std::size_t line) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    fail(source, line, "expected an integer id, got '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, const std::string& source, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    fail(source, line, "expected a number, got '" + s + "'");
  }
  return v;
}

std::vector<int> parse_id_list(const std::string& s, const std::string& source,
                               std::size_t line) {
  if (s.empty()) fail(source, line, "empty choice set");
  std::vector<int> ids;
  for (const auto& tok : split(s, ';')) ids.push_back(parse_int(tok, source, line));
  return ids;
}

// Yields (line number, content) for non-blank, non-comment lines.
std::vector<std::pair<std::size_t, std::string>> content_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    out.emplace_back(n, std::move(line));
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(ids[i]);
  }
  return s;
}

void check_set(const std::vector<int>& ids, int chosen, const std::string& source,
               std::size_t line) {
  std::set<int> seen;
  for (int id : ids) {
    if (id < 0) fail(source, line, "negative item id " + std::to_string(id));
    if (!seen.insert(id).second) fail(source, line, "duplicate item id " + std::to_string(id));
  }
  if (!seen.count(chosen)) {
    fail(source, line, "chosen item " + std::to_string(chosen) + " is not in the set");
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

// ---- ChoiceSet / Observation ----------------------------------------------

bool ChoiceSet::contains(int item) const { return slot_of(item) >= 0; }

int ChoiceSet::slot_of(int item) const {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i] == item) return static_cast<int>(i);
  return -1;
}

std::vector<int> ChoiceSet::padded(std::size_t width) const {
  if (width < items.size()) {
    throw DataError("cannot pad a set of " + std::to_string(items.size()) + " items to width " +
                    std::to_string(width));
  }
  std::vector<int> out(items);
  out.resize(width, kNullItem);
  return out;
}

Matrix ChoiceSet::mask(std::size_t width) const {
  if (width < items.size()) {
    throw DataError("mask width " + std::to_string(width) + " smaller than set size " +
                    std::to_string(items.size()));
  }
  Matrix m(1, width);
  for (std::size_t i = 0; i < items.size(); ++i) m[i] = 1.0;
  return m;
}

Matrix Observation::padded_features(std::size_t width) const {
  if (width < set.size()) throw DataError("padding width smaller than set size");
  Matrix out(features.rows(), width);
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (std::size_t c = 0; c < features.cols(); ++c) out(r, c) = features(r, c);
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

// ---- Dataset ----------------------------------------------------------------

bool Dataset::has_split(Split s) const {
  if (splits.empty()) return s == Split::kTrain && !observations.empty();
  return std::find(splits.begin(), splits.end(), s) != splits.end();
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Split tag = splits.empty() ? Split::kTrain : splits[i];
    if (tag == s) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> out(observations.size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

void Dataset::refresh_shape() {
  max_set_size = 0;
  for (const auto& o : observations) max_set_size = std::max(max_set_size, o.set.size());
}

void Dataset::validate() const {
  if (!splits.empty() && splits.size() != observations.size()) {
    throw DataError("split tags do not cover every observation");
  }
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    const std::string where = "observation " + std::to_string(i);
    if (o.set.items.empty()) throw DataError(where + ": empty choice set");
    std::set<int> seen;
    for (int id : o.set.items) {
      if (id < 0 || id >= universe_size) {
        throw DataError(where + ": item id " + std::to_string(id) + " outside universe of " +
                        std::to_string(universe_size));
      }
      if (!seen.insert(id).second) {
        throw DataError(where + ": duplicate item id " + std::to_string(id));
      }
    }
    if (!o.set.contains(o.chosen)) throw DataError(where + ": chosen item not in set");
    if (o.set.size() > max_set_size) throw DataError(where + ": exceeds padded width");
    if (feature_dim > 0) {
      if (o.features.rows() != static_cast<std::size_t>(feature_dim) ||
          o.features.cols() != o.set.size()) {
        throw DataError(where + ": feature matrix " + o.features.shape_string() +
                        " inconsistent with feature_dim " + std::to_string(feature_dim));
      }
    }
  }
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.universe_size = d.universe_size;
  out.feature_dim = d.feature_dim;
  out.item_features = d.item_features;
  for (std::size_t i : indices) {
    out.observations.push_back(d.observations.at(i));
    if (!d.splits.empty()) out.splits.push_back(d.splits[i]);
  }
  out.refresh_shape();
  out.max_set_size = std::max(out.max_set_size, d.max_set_size);
  return out;
}

// ---- featureless CSV ---------------------------------------------------------

Dataset read_featureless_csv(std::istream& in, const std::string& source,
                             std::optional<int> universe_size) {
  auto lines = content_lines(in);
  if (lines.empty()) throw DataError(source + ": empty dataset (no header 'set,choice' and no rows)");
  {
    const auto header = split(lines.front().second, ',');
    if (header.size() != 2 || header[0] != "set" || header[1] != "choice") {
      fail(source, lines.front().first, "expected header 'set,choice'");
    }
  }
  Dataset d;
  int max_id = -1;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [line, text] = lines[k];
    const auto fields = split(text, ',');
    if (fields.size() != 2) fail(source, line, "expected 2 fields, got " + std::to_string(fields.size()));
    Observation o;
    o.set.items = parse_id_list(fields[0], source, line);
    o.chosen = parse_int(fields[1], source, line);
    check_set(o.set.items, o.chosen, source, line);
    for (int id : o.set.items) max_id = std::max(max_id, id);
    d.observations.push_back(std::move(o));
  }
  d.universe_size = universe_size.value_or(max_id + 1);
  if (max_id >= d.universe_size) {
    throw DataError(source + ": item id " + std::to_string(max_id) + " outside universe of " +
                    std::to_string(d.universe_size));
  }
  d.refresh_shape();
  return d;
}

Dataset load_featureless_csv(const std::string& path, std::optional<int> universe_size) {
  auto in = open_input(path);
  return read_featureless_csv(in, path, universe_size);
}

void write_featureless_csv(const Dataset& d, std::ostream& out) {
  out << "set,choice\n";
  for (const auto& o : d.observations) out << join_ids(o.set.items) << ',' << o.chosen << '\n';
}

void save_featureless_csv(const Dataset& d, const std::string& path) {
  auto out = open_output(path);
  write_featureless_csv(d, out);
}

// ---- featured CSV --------------------------------------------------------------

Dataset read_featured_csv(std::istream& items, std::istream& observations,
                          const std::string& source) {
  const std::string items_src = source + " (items)";
  const std::string obs_src = source + " (observations)";

  auto item_lines = content_lines(items);
  if (item_lines.empty()) throw DataError(items_src + ": missing header");
  const auto item_header = split(item_lines.front().second, ',');
  if (item_header.empty() || item_header[0] != "item_id") {
    fail(items_src, item_lines.front().first, "expected header starting with 'item_id'");
  }
  const std::size_t dx = item_header.size() - 1;
  std::map<int, std::vector<double>> table;
  for (std::size_t k = 1; k < item_lines.size(); ++k) {
    const auto& [line, text] = item_lines[k];
    const auto fields = split(text, ',');
    if (fields.size() != dx + 1) {
      fail(items_src, line, "expected " + std::to_string(dx + 1) + " fields, got " +
                                std::to_string(fields.size()));
    }
    const int id = parse_int(fields[0], items_src, line);
    if (id < 0) fail(items_src, line, "negative item id");
    std::vector<double> f;
    for (std::size_t c = 1; c < fields.size(); ++c) f.push_back(parse_double(fields[c], items_src, line));
    if (!table.emplace(id, std::move(f)).second) {
      fail(items_src, line, "duplicate item id " + std::to_string(id));
    }
  }
  if (table.empty()) throw DataError(items_src + ": no items");

  auto obs_lines = content_lines(observations);
  if (obs_lines.empty()) throw DataError(obs_src + ": empty dataset (no header and no rows)");
  const auto obs_header = split(obs_lines.front().second, ',');
  if (obs_header.size() < 2 || obs_header[0] != "set" || obs_header[1] != "choice") {
    fail(obs_src, obs_lines.front().first, "expected header starting with 'set,choice'");
  }
  const std::size_t ds = obs_header.size() - 2;

  Dataset d;
  d.universe_size = table.rbegin()->first + 1;
  d.feature_dim = static_cast<int>(dx + ds);
  d.item_features = Matrix(static_cast<std::size_t>(d.universe_size), dx);
  for (const auto& [id, f] : table)
    for (std::size_t c = 0; c < dx; ++c) d.item_features(static_cast<std::size_t>(id), c) = f[c];

  for (std::size_t k = 1; k < obs_lines.size(); ++k) {
    const auto& [line, text] = obs_lines[k];
    const auto fields = split(text, ',');
    if (fields.size() != ds + 2) {
      fail(obs_src, line, "expected " + std::to_string(ds + 2) + " fields, got " +
                              std::to_string(fields.size()));
    }
    Observation o;
    o.set.items = parse_id_list(fields[0], obs_src, line);
    o.chosen = parse_int(fields[1], obs_src, line);
    check_set(o.set.items, o.chosen, obs_src, line);
    std::vector<double> shared;
    for (std::size_t c = 2; c < fields.size(); ++c) shared.push_back(parse_double(fields[c], obs_src, line));
    o.features = Matrix(dx + ds, o.set.size());
    for (std::size_t slot = 0; slot < o.set.size(); ++slot) {
      const auto it = table.find(o.set.items[slot]);
      if (it == table.end()) {
        fail(obs_src, line, "item " + std::to_string(o.set.items[slot]) +
                                " is missing from the items file");
      }
      for (std::size_t r = 0; r < dx; ++r) o.features(r, slot) = it->second[r];
      for (std::size_t r = 0; r < ds; ++r) o.features(dx + r, slot) = shared[r];
    }
    d.observations.push_back(std::move(o));
  }
  d.refresh_shape();
  return d;
}

Dataset load_featured_csv(const std::string& items_path, const std::string& obs_path) {
  auto items = open_input(items_path);
  auto obs = open_input(obs_path);
  return read_featured_csv(items, obs, obs_path);
}

// ---- probability tables ----------------------------------------------------------

ProbabilityTable read_probability_table(std::istream& in, const std::string& source) {
  auto lines = content_lines(in);
  if (lines.empty()) throw DataError(source + ": missing header 'set,probabilities'");
  const auto header = split(lines.front().second, ',');
  if (header.size() != 2 || header[0] != "set" || header[1] != "probabilities") {
    fail(source, lines.front().first, "expected header 'set,probabilities'");
  }
  ProbabilityTable table;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [line, text] = lines[k];
    const auto fields = split(text, ',');
    if (fields.size() != 2) fail(source, line, "expected 2 fields");
    SetProbabilities row;
    row.items = parse_id_list(fields[0], source, line);
    for (const auto& tok : split(fields[1], ';')) {
      row.probabilities.push_back(parse_double(tok, source, line));
    }
    if (row.probabilities.size() != row.items.size()) {
      fail(source, line, "probability count does not match set size");
    }
    check_set(row.items, row.items.front(), source, line);
    table.push_back(std::move(row));
  }
  return table;
}

ProbabilityTable load_probability_table(const std::string& path) {
  auto in = open_input(path);
  return read_probability_table(in, path);
}

void write_probability_table(const ProbabilityTable& table, std::ostream& out) {
  out << "set,probabilities\n";
  for (const auto& row : table) {
    out << join_ids(row.items) << ',';
    for (std::size_t i = 0; i < row.probabilities.size(); ++i) {
      if (i) out << ';';
      out << format_double(row.probabilities[i]);
    }
    out << '\n';
  }
}

void save_probability_table(const ProbabilityTable& table, const std::string& path) {
  auto out = open_output(path);
  write_probability_table(table, out);
}

// ---- splits -------------------------------------------------------------------------

void apply_split_manifest(Dataset& d, const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("split manifest is not valid JSON: ") + e.what());
  }
  std::vector<Split> tags(d.size(), Split::kTrain);
  std::vector<bool> seen(d.size(), false);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const char* key = split_name(s);
    if (!j.contains(key)) continue;
    for (const auto& v : j.at(key)) {
      const auto i = v.get<long long>();
      if (i < 0 || static_cast<std::size_t>(i) >= d.size()) {
        throw DataError(std::string("split manifest index ") + std::to_string(i) +
                        " out of range in '" + key + "'");
      }
      if (seen[static_cast<std::size_t>(i)]) {
        throw DataError("split manifest lists observation " + std::to_string(i) + " twice");
      }
      seen[static_cast<std::size_t>(i)] = true;
      tags[static_cast<std::size_t>(i)] = s;
    }
  }
  d.splits = std::move(tags);
}

std::string split_manifest_json(const Dataset& d) {
  nlohmann::json j;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) j[split_name(s)] = d.indices(s);
  return j.dump();
}

void assign_random_split(Dataset& d, double train_fraction, double val_fraction,
                         std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw DataError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::size_t> order = d.all_indices();
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  const auto n_val = std::min(order.size() - n_train,
                              static_cast<std::size_t>(std::llround(val_fraction * n)));
  d.splits.assign(d.size(), Split::kTest);
  for (std::size_t k = 0; k < order.size(); ++k) {
    d.splits[order[k]] = k < n_train ? Split::kTrain
                         : k < n_train + n_val ? Split::kVal
                                               : Split::kTest;
  }
}

// ---- fixtures and generators -------------------------------------------------------

ProbabilityTable beverage_fixture() {
  // 0 Pepsi, 1 Coke, 2 7-Up, 3 Sprite.
  return {
      {{0, 1}, {0.98, 0.02}},
      {{0, 2}, {0.50, 0.50}},
      {{0, 3}, {0.50, 0.50}},
      {{1, 2}, {0.50, 0.50}},
      {{1, 3}, {0.50, 0.50}},
      {{2, 3}, {0.90, 0.10}},
      {{0, 1, 2}, {0.49, 0.01, 0.50}},
      {{0, 1, 3}, {0.49, 0.01, 0.50}},
      {{0, 2, 3}, {0.50, 0.45, 0.05}},
      {{1, 2, 3}, {0.50, 0.45, 0.05}},
      {{0, 1, 2, 3}, {0.49, 0.01, 0.45, 0.05}},
  };
}

std::vector<std::string> beverage_names() { return {"Pepsi", "Coke", "7-Up", "Sprite"}; }

Dataset sample_choices(const ProbabilityTable& table, std::size_t n_per_set, std::uint64_t seed,
                       std::optional<int> universe_size) {
  Dataset d;
  int max_id = -1;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& row = table[r];
    if (row.items.size() != row.probabilities.size() || row.items.empty()) {
      throw DataError("probability row " + std::to_string(r) + " is malformed");
    }
    double total = 0.0;
    for (double p : row.probabilities) {
      if (p < 0.0 || !std::isfinite(p)) {
        throw DataError("probability row " + std::to_string(r) + " has a negative entry");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw DataError("probability row " + std::to_string(r) + " sums to " +
                      format_double(total) + ", not 1");
    }
    for (int id : row.items) max_id = std::max(max_id, id);
  }

  std::mt19937_64 rng(seed);
  for (const auto& row : table) {
    std::discrete_distribution<std::size_t> pick(row.probabilities.begin(),
                                                 row.probabilities.end());
    for (std::size_t k = 0; k < n_per_set; ++k) {
      Observation o;
      o.set.items = row.items;
      o.chosen = row.items[pick(rng)];
      d.observations.push_back(std::move(o));
    }
  }
  d.universe_size = universe_size.value_or(max_id + 1);
  d.refresh_shape();
  return d;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

namespace {

std::vector<std::vector<int>> all_subsets_of_size(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k));
  std::iota(cur.begin(), cur.end(), 0);
  if (k == 0) return {{}};
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++cur[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

}  // namespace

SyntheticData gen_synthetic_simplex(int universe, int set_size, std::size_t sets,
                                    std::size_t n_per_set, std::uint64_t seed) {
  if (universe < 1 || universe > 64) throw DataError("universe size must be in [1, 64]");
  if (set_size < 1 || set_size > universe) {
    throw DataError("set size " + std::to_string(set_size) + " must be in [1, " +
                    std::to_string(universe) + "]");
  }
  const std::uint64_t total = binomial(universe, set_size);
  if (sets > total) {
    throw DataError("requested " + std::to_string(sets) + " distinct sets but only " +
                    std::to_string(total) + " subsets of size " + std::to_string(set_size) +
                    " exist");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> chosen_sets;
  if (sets == 0 || total <= (1u << 20)) {
    chosen_sets = all_subsets_of_size(universe, set_size);
    if (sets != 0) {
      std::shuffle(chosen_sets.begin(), chosen_sets.end(), rng);
      chosen_sets.resize(sets);
      std::sort(chosen_sets.begin(), chosen_sets.end());
    }
  } else {
    std::set<std::vector<int>> picked;
    std::vector<int> ids(static_cast<std::size_t>(universe));
    std::iota(ids.begin(), ids.end(), 0);
    while (picked.size() < sets) {
      std::shuffle(ids.begin(), ids.end(), rng);
      std::vector<int> s(ids.begin(), ids.begin() + set_size);
      std::sort(s.begin(), s.end());
      picked.insert(std::move(s));
    }
    chosen_sets.assign(picked.begin(), picked.end());
  }

  std::exponential_distribution<double> exp1(1.0);
  ProbabilityTable truth;
  for (auto& s : chosen_sets) {
    std::vector<double> p(s.size());
    double z = 0.0;
    for (double& v : p) {
      do {
        v = exp1(rng);
      } while (v <= 0.0);
      z += v;
    }
    for (double& v : p) v /= z;
    truth.push_back({std::move(s), std::move(p)});
  }
  SyntheticData out;
  out.dataset = sample_choices(truth, n_per_set, rng(), universe);
  out.truth = std::move(truth);
  return out;
}

ProbabilityTable empirical_frequencies(const Dataset& d) {
  std::map<std::vector<int>, std::vector<double>> counts;
  for (const auto& o : d.observations) {
    std::vector<int> key = o.set.items;
    std::sort(key.begin(), key.end());
    auto& c = counts[key];
    c.resize(key.size(), 0.0);
    const auto pos = std::lower_bound(key.begin(), key.end(), o.chosen) - key.begin();
    c[static_cast<std::size_t>(pos)] += 1.0;
  }
  ProbabilityTable out;
  for (auto& [items, c] : counts) {
    const double n = std::accumulate(c.begin(), c.end(), 0.0);
    for (double& v : c) v /= n;
    out.push_back({items, c});
  }
  return out;
}

}  // namespace deephalo::data

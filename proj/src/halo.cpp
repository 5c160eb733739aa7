#include "deephalo/halo.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "deephalo/errors.hpp"

namespace deephalo::halo {

namespace {

constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

std::vector<int> mask_items(std::uint64_t mask) {
  std::vector<int> out;
  while (mask != 0) {
    out.push_back(std::countr_zero(mask));
    mask &= mask - 1;
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool size_lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace

std::string format_set(const std::vector<int>& set, char sep) {
  std::string s;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(set[i]);
  }
  return s;
}

// ---- sources -----------------------------------------------------------------

ModelSource::ModelSource(ChoiceModel& model, int universe, Matrix item_features)
    : model_(model), universe_(universe), item_features_(std::move(item_features)) {
  if (model_.universe_size() > 0) {
    if (universe_ != 0 && universe_ != model_.universe_size()) {
      throw AnalysisError("universe " + std::to_string(universe_) +
                          " does not match the model universe " +
                          std::to_string(model_.universe_size()));
    }
    universe_ = model_.universe_size();
  }
  if (universe_ < 1) throw AnalysisError("a featured model needs an explicit universe size");
  if (model_.feature_dim() > 0) {
    if (item_features_.rows() < static_cast<std::size_t>(universe_) ||
        item_features_.cols() != static_cast<std::size_t>(model_.feature_dim())) {
      throw AnalysisError("featured model needs a " + std::to_string(universe_) + "x" +
                          std::to_string(model_.feature_dim()) + " item feature table, got " +
                          item_features_.shape_string());
    }
  }
}

std::vector<double> ModelSource::utilities(const std::vector<int>& set) {
  return set_utilities(model_, set, item_features_);
}

// ---- analyzer ------------------------------------------------------------------

Analyzer::Analyzer(UtilitySource& source, Limits limits)
    : source_(source), limits_(limits), universe_(source.universe_size()) {
  if (universe_ < 1 || universe_ > 64) {
    throw AnalysisError("universe size must be in [1, 64], got " + std::to_string(universe_));
  }
}

std::uint64_t Analyzer::to_mask(const std::vector<int>& set, const char* what) const {
  std::uint64_t m = 0;
  for (int id : set) {
    if (id < 0 || id >= universe_) {
      throw AnalysisError(std::string(what) + " contains item " + std::to_string(id) +
                          " outside the universe of " + std::to_string(universe_));
    }
    const std::uint64_t bit = std::uint64_t{1} << id;
    if (m & bit) throw AnalysisError(std::string(what) + " repeats item " + std::to_string(id));
    m |= bit;
  }
  return m;
}

void Analyzer::check_subset_size(std::size_t n) const {
  if (limits_.force || static_cast<int>(n) <= limits_.max_subset_size) return;
  const double evals = std::ldexp(1.0, static_cast<int>(n));
  throw AnalysisError("source set of size " + std::to_string(n) + " needs 2^" +
                      std::to_string(n) + " = " + fmt("%.0f", evals) +
                      " model evaluations, above the cap of size " +
                      std::to_string(limits_.max_subset_size) + "; raise the cap or force");
}

double Analyzer::utility_mask(int j, std::uint64_t mask) {
  auto it = cache_.find(mask);
  if (it == cache_.end()) {
    const std::vector<int> items = mask_items(mask);
    const std::vector<double> u = source_.utilities(items);
    if (u.size() != items.size()) throw AnalysisError("utility source returned the wrong length");
    std::vector<double> full(static_cast<std::size_t>(universe_), kAbsent);
    for (std::size_t i = 0; i < items.size(); ++i) full[static_cast<std::size_t>(items[i])] = u[i];
    ++evaluations_;
    it = cache_.emplace(mask, std::move(full)).first;
  }
  return it->second[static_cast<std::size_t>(j)];
}

double Analyzer::utility(int j, const std::vector<int>& set) {
  const std::uint64_t m = to_mask(set, "set");
  if (j < 0 || j >= universe_ || !(m >> j & 1)) {
    throw AnalysisError("item " + std::to_string(j) + " is not in the set");
  }
  return utility_mask(j, m);
}

double Analyzer::marginal_mask(int j, std::uint64_t t) {
  // Binary counting over the members of T in ascending order.
  const std::vector<int> members = mask_items(t);
  const std::size_t n = members.size();
  const std::uint64_t jbit = std::uint64_t{1} << j;
  double total = 0.0;
  for (std::uint64_t r = 0; r < (std::uint64_t{1} << n); ++r) {
    std::uint64_t set = jbit;
    for (std::size_t i = 0; i < n; ++i)
      if (r >> i & 1) set |= std::uint64_t{1} << members[i];
    const int missing = static_cast<int>(n) - std::popcount(r);
    const double u = utility_mask(j, set);
    total += (missing % 2 == 0) ? u : -u;
  }
  return total;
}

double Analyzer::marginal_v(int j, const std::vector<int>& source_set) {
  if (j < 0 || j >= universe_) throw AnalysisError("item " + std::to_string(j) + " outside the universe");
  const std::uint64_t t = to_mask(source_set, "source set");
  if (t >> j & 1) throw AnalysisError("source set contains the target item " + std::to_string(j));
  check_subset_size(source_set.size());
  return marginal_mask(j, t);
}

double Analyzer::reconstruct_utility(int j, const std::vector<int>& set) {
  const std::uint64_t s = to_mask(set, "set");
  if (j < 0 || j >= universe_ || !(s >> j & 1)) {
    throw AnalysisError("item " + std::to_string(j) + " is not in the set");
  }
  const std::uint64_t rest = s & ~(std::uint64_t{1} << j);
  check_subset_size(static_cast<std::size_t>(std::popcount(rest)));
  const std::vector<int> members = mask_items(rest);
  double total = 0.0;
  for (std::uint64_t r = 0; r < (std::uint64_t{1} << members.size()); ++r) {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < members.size(); ++i)
      if (r >> i & 1) t |= std::uint64_t{1} << members[i];
    total += marginal_mask(j, t);
  }
  return total;
}

double Analyzer::relative_alpha(int j, int k, const std::vector<int>& source_set) {
  if (j == k) throw AnalysisError("relative effect needs two distinct items");
  for (int x : {j, k}) {
    if (x < 0 || x >= universe_) throw AnalysisError("item " + std::to_string(x) + " outside the universe");
  }
  const std::uint64_t t = to_mask(source_set, "source set");
  if ((t >> j & 1) || (t >> k & 1)) throw AnalysisError("source set contains one of the pair");
  check_subset_size(source_set.size() + 1);
  const std::uint64_t tj = t | std::uint64_t{1} << j;
  const std::uint64_t tk = t | std::uint64_t{1} << k;
  return (marginal_mask(j, t) + marginal_mask(j, tk)) - (marginal_mask(k, t) + marginal_mask(k, tj));
}

// ---- tables ------------------------------------------------------------------------

std::vector<std::vector<int>> subsets_by_size(const std::vector<int>& items, int max_size) {
  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::vector<int>> out{{}};
  for (int size = 1; size <= std::min<int>(max_size, static_cast<int>(sorted.size())); ++size) {
    std::vector<int> pos(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) pos[static_cast<std::size_t>(i)] = i;
    const int n = static_cast<int>(sorted.size());
    while (true) {
      std::vector<int> s;
      for (int p : pos) s.push_back(sorted[static_cast<std::size_t>(p)]);
      out.push_back(std::move(s));
      int i = size - 1;
      while (i >= 0 && pos[static_cast<std::size_t>(i)] == n - size + i) --i;
      if (i < 0) break;
      ++pos[static_cast<std::size_t>(i)];
      for (int q = i + 1; q < size; ++q) pos[static_cast<std::size_t>(q)] = pos[static_cast<std::size_t>(q - 1)] + 1;
    }
  }
  return out;
}

namespace {

void check_table_guard(const Analyzer& a, int max_order, const Limits& limits) {
  if (max_order < 0) throw AnalysisError("max order must be non-negative");
  const int j = a.universe_size();
  if (limits.force || j <= limits.max_universe) return;
  double evals = 0.0;
  for (int t = 1; t <= std::min(j, max_order + 2); ++t) {
    evals += static_cast<double>(data::binomial(j, t));
  }
  throw AnalysisError("universe of " + std::to_string(j) + " items exceeds the guard of " +
                      std::to_string(limits.max_universe) + "; full extraction needs about " +
                      fmt("%.0f", evals) + " model evaluations (use --force to proceed)");
}

std::vector<int> universe_without(int universe, std::initializer_list<int> drop) {
  std::vector<int> out;
  for (int i = 0; i < universe; ++i)
    if (std::find(drop.begin(), drop.end(), i) == drop.end()) out.push_back(i);
  return out;
}

}  // namespace

std::optional<double> ContextEffectTable::find(int j, const std::vector<int>& source) const {
  for (const auto& e : entries)
    if (e.j == j && e.source == source) return e.v;
  return std::nullopt;
}

ContextEffectTable context_effect_table(Analyzer& a, int max_order) {
  ContextEffectTable t;
  t.universe = a.universe_size();
  t.max_order = max_order;
  for (int j = 0; j < t.universe; ++j) {
    for (const auto& src : subsets_by_size(universe_without(t.universe, {j}), max_order)) {
      t.entries.push_back({j, src, a.marginal_v(j, src)});
    }
  }
  return t;
}

std::optional<double> RelativeHaloTable::find(int j, int k, const std::vector<int>& source) const {
  const double sign = j < k ? 1.0 : -1.0;
  const int lo = std::min(j, k), hi = std::max(j, k);
  for (const auto& e : entries)
    if (e.j == lo && e.k == hi && e.source == source) return sign * e.alpha;
  return std::nullopt;
}

bool RelativeHaloTable::operator==(const RelativeHaloTable& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& a = entries[i];
    const auto& b = other.entries[i];
    if (a.j != b.j || a.k != b.k || a.source != b.source || a.alpha != b.alpha) return false;
  }
  return true;
}

RelativeHaloTable full_relative_table(Analyzer& a, int max_order,
                                      std::optional<std::pair<int, int>> only_pair) {
  check_table_guard(a, max_order, a.limits());
  RelativeHaloTable t;
  t.universe = a.universe_size();
  t.max_order = max_order;
  if (only_pair) {
    auto [p, q] = *only_pair;
    if (p == q || p < 0 || q < 0 || p >= t.universe || q >= t.universe) {
      throw AnalysisError("pair (" + std::to_string(p) + "," + std::to_string(q) +
                          ") is not two distinct items of the universe");
    }
  }
  for (int j = 0; j < t.universe; ++j) {
    for (int k = j + 1; k < t.universe; ++k) {
      if (only_pair && !((only_pair->first == j && only_pair->second == k) ||
                         (only_pair->first == k && only_pair->second == j))) {
        continue;
      }
      for (const auto& src : subsets_by_size(universe_without(t.universe, {j, k}), max_order)) {
        t.entries.push_back({j, k, src, a.relative_alpha(j, k, src)});
      }
    }
  }
  return t;
}

// ---- CSV -------------------------------------------------------------------------------

void write_alpha_csv(const RelativeHaloTable& table, std::ostream& out) {
  out << "pair_j,pair_k,source_set,alpha\n";
  for (const auto& e : table.entries) {
    out << e.j << ',' << e.k << ',' << format_set(e.source) << ',' << fmt("%.17g", e.alpha) << '\n';
  }
}

void save_alpha_csv(const RelativeHaloTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_alpha_csv(table, out);
  if (!out) throw DataError("failed writing '" + path + "'");
}

RelativeHaloTable read_alpha_csv(std::istream& in, const std::string& source) {
  auto bad = [&](std::size_t line, const std::string& msg) {
    return DataError(source + ":" + std::to_string(line) + ": " + msg);
  };
  auto parse_int = [&](const std::string& s, std::size_t line) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw bad(line, "bad id '" + s + "'");
    return v;
  };
  RelativeHaloTable t;
  std::string line;
  std::size_t n = 0;
  bool header = false;
  int max_id = -1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "pair_j,pair_k,source_set,alpha") throw bad(n, "expected header pair_j,pair_k,source_set,alpha");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 4) throw bad(n, "expected 4 fields");
    RelativeEffect e;
    e.j = parse_int(f[0], n);
    e.k = parse_int(f[1], n);
    if (!f[2].empty()) {
      std::stringstream ids(f[2]);
      std::string id;
      while (std::getline(ids, id, ';')) e.source.push_back(parse_int(id, n));
    }
    auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), e.alpha);
    if (ec != std::errc() || p != f[3].data() + f[3].size()) throw bad(n, "bad alpha '" + f[3] + "'");
    max_id = std::max({max_id, e.j, e.k});
    for (int id : e.source) max_id = std::max(max_id, id);
    t.max_order = std::max(t.max_order, static_cast<int>(e.source.size()));
    t.entries.push_back(std::move(e));
  }
  if (!header) throw DataError(source + ": missing header");
  t.universe = max_id + 1;
  return t;
}

RelativeHaloTable load_alpha_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return read_alpha_csv(in, path);
}

// ---- SVG -----------------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string cell_color(double v, double scale) {
  const double t = scale > 0.0 ? std::min(1.0, std::abs(v) / scale) : 0.0;
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  // Negative: white to blue (fade, fade, 255). Positive: white to red (255, fade, fade).
  char buf[16];
  if (v < 0.0) {
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", fade, fade, 255);
  } else {
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", 255, fade, fade);
  }
  return buf;
}

std::string item_label(int id, const std::vector<std::string>& labels) {
  if (id >= 0 && static_cast<std::size_t>(id) < labels.size()) return labels[static_cast<std::size_t>(id)];
  return std::to_string(id);
}

}  // namespace

std::string render_heatmap_svg(const RelativeHaloTable& table, const std::vector<std::string>& labels) {
  std::vector<std::pair<int, int>> rows;
  std::vector<std::vector<int>> cols;
  double scale = 0.0;
  for (const auto& e : table.entries) {
    if (rows.empty() || rows.back() != std::make_pair(e.j, e.k)) {
      if (std::find(rows.begin(), rows.end(), std::make_pair(e.j, e.k)) == rows.end()) rows.emplace_back(e.j, e.k);
    }
    if (std::find(cols.begin(), cols.end(), e.source) == cols.end()) cols.push_back(e.source);
    scale = std::max(scale, std::abs(e.alpha));
  }
  std::sort(cols.begin(), cols.end(), size_lex_less);

  constexpr int kCellW = 64, kCellH = 28, kLeft = 150, kTop = 70;
  const int width = kLeft + kCellW * static_cast<int>(cols.size()) + 20;
  const int height = kTop + kCellH * static_cast<int>(rows.size()) + 40;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  s << "<text x=\"" << kLeft << "\" y=\"18\" font-size=\"13\">relative context effect alpha_jk(T)</text>\n";
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::string name;
    if (cols[c].empty()) {
      name = "\xE2\x88\x85";  // empty set sign
    } else {
      name = "{";
      for (std::size_t i = 0; i < cols[c].size(); ++i) {
        if (i) name += ",";
        name += item_label(cols[c][i], labels);
      }
      name += "}";
    }
    const int x = kLeft + kCellW * static_cast<int>(c) + kCellW / 2;
    s << "<text x=\"" << x << "\" y=\"" << kTop - 8 << "\" text-anchor=\"middle\">" << xml_escape(name)
      << "</text>\n";
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int y = kTop + kCellH * static_cast<int>(r);
    const std::string name = "(" + item_label(rows[r].first, labels) + ", " + item_label(rows[r].second, labels) + ")";
    s << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + kCellH / 2 + 4 << "\" text-anchor=\"end\">"
      << xml_escape(name) << "</text>\n";
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const int x = kLeft + kCellW * static_cast<int>(c);
      const auto v = table.find(rows[r].first, rows[r].second, cols[c]);
      if (!v) {
        s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellW << "\" height=\"" << kCellH
          << "\" fill=\"#f4f4f4\" stroke=\"#dddddd\"/>\n";
        continue;
      }
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellW << "\" height=\"" << kCellH
        << "\" fill=\"" << cell_color(*v, scale) << "\" stroke=\"#999999\"/>\n";
      s << "<text x=\"" << x + kCellW / 2 << "\" y=\"" << y + kCellH / 2 + 4
        << "\" text-anchor=\"middle\">" << fmt("%.2f", *v) << "</text>\n";
    }
  }
  const int ly = kTop + kCellH * static_cast<int>(rows.size()) + 24;
  s << "<text x=\"" << kLeft << "\" y=\"" << ly << "\">blue &lt; 0 &lt; red, |alpha| max "
    << fmt("%.3f", scale) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

void save_heatmap_svg(const RelativeHaloTable& table, const std::string& path,
                      const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << render_heatmap_svg(table, labels);
  if (!out) throw DataError("failed writing '" + path + "'");
}

// ---- identifiability ------------------------------------------------------------------------

std::uint64_t identifiability_count(int n) {
  if (n < 2) throw AnalysisError("identifiability count needs n >= 2, got " + std::to_string(n));
  std::uint64_t total = 0;
  for (int q = 2; q <= n; ++q) total += data::binomial(n, q) * static_cast<std::uint64_t>(q - 1);
  return total;
}

std::uint64_t identifiability_count_enumerated(int n) {
  if (n < 2 || n > 20) throw AnalysisError("enumeration supports 2 <= n <= 20");
  std::set<std::pair<std::uint32_t, std::pair<int, int>>> differences;
  for (std::uint32_t s = 0; s < (1u << n); ++s) {
    if (std::popcount(s) < 2) continue;
    const int first = std::countr_zero(s);
    for (int k = first + 1; k < n; ++k)
      if (s >> k & 1) differences.insert({s, {first, k}});
  }
  return differences.size();
}

}  // namespace deephalo::halo

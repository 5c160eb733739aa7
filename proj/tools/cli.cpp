#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "deephalo/choice_data.hpp"
#include "deephalo/errors.hpp"
#include "deephalo/featured.hpp"
#include "deephalo/featureless.hpp"
#include "deephalo/halo.hpp"
#include "deephalo/log.hpp"
#include "deephalo/serialization.hpp"
#include "deephalo/training.hpp"

namespace deephalo::cli {

using nlohmann::json;

namespace {

// ---- run manifest ----------------------------------------------------------

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::optional<std::uint64_t> seed;
  json inputs = json::object();
  json outputs = json::object();
  std::string started_at = utc_now();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& path, const std::string& status, const std::string& error) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["version"] = DEEPHALO_VERSION;
    j["git_describe"] = DEEPHALO_GIT_DESCRIBE;
    j["started_at"] = started_at;
    j["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    write_file_atomic(path, j.dump(2) + "\n");
  }
};

std::string manifest_path(const std::string& primary) { return primary + ".manifest.json"; }

// Runs `body`, then writes the manifest whether or not it succeeded.
int with_manifest(Manifest& m, const std::string& primary, std::ostream& err,
                  const std::function<void()>& body) {
  std::string status = "ok", error;
  int code = kExitOk;
  try {
    body();
  } catch (const std::exception& e) {
    status = "error";
    error = e.what();
    code = kExitRuntime;
    err << "error: " << e.what() << "\n";
  }
  if (!primary.empty()) {
    try {
      m.write(manifest_path(primary), status, error);
    } catch (const std::exception& e) {
      err << "error: could not write manifest: " << e.what() << "\n";
      code = kExitRuntime;
    }
  }
  return code;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

// ---- config injection -----------------------------------------------------

// Expands `--config file.json` into `--key=value` arguments placed right after
// the subcommand, so explicit command-line flags (parsed later) win.
std::vector<std::string> inject_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (!path || args.empty()) return args;
  json j;
  try {
    j = json::parse(read_text(*path));
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", std::string("config file is not valid JSON: ") + e.what());
  } catch (const DataError& e) {
    throw CLI::ValidationError("--config", e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError("--config", "config file must hold a JSON object");
  std::vector<std::string> injected;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (char& c : name)
      if (c == '_') c = '-';
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_number() || value.is_null()) {
      text = value.dump();
    } else {
      throw CLI::ValidationError("--config", "unsupported value for '" + key + "'");
    }
    injected.push_back("--" + name + "=" + text);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

// ---- dataset loading -------------------------------------------------------

data::Dataset load_dataset(const std::string& data_path, const std::string& items_path, int universe) {
  data::Dataset d;
  if (!items_path.empty()) {
    d = data::load_featured_csv(items_path, data_path);
  } else {
    d = data::load_featureless_csv(data_path, universe > 0 ? std::optional<int>(universe) : std::nullopt);
  }
  d.validate();
  return d;
}

// ---- gen --------------------------------------------------------------------

struct GenOptions {
  std::string fixture;
  int universe = 0;
  int set_size = 0;
  std::size_t sets = 0;
  std::size_t n_per_set = 100;
  std::uint64_t seed = 0;
  std::string out;
  std::string truth_out;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
  std::string split_out;
};

void register_gen(CLI::App& app, GenOptions& o) {
  auto* fixture = app.add_option("--fixture", o.fixture, "Built-in probability table (beverage)")
                      ->check(CLI::IsMember({"beverage"}));
  auto* universe = app.add_option("--universe", o.universe, "Universe size J for simplex truths");
  app.add_option("--set-size", o.set_size, "Choice set size m")->needs(universe);
  app.add_option("--sets", o.sets, "Distinct m-subsets (0 = all of them)")->capture_default_str();
  app.add_option("--n-per-set", o.n_per_set, "Draws per set")->capture_default_str();
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("-o,--out", o.out, "Dataset CSV to write")->required();
  app.add_option("--truth-out", o.truth_out, "Ground-truth probability table CSV");
  app.add_option("--val-fraction", o.val_fraction, "Validation share for the split manifest");
  app.add_option("--test-fraction", o.test_fraction, "Test share for the split manifest");
  app.add_option("--split-out", o.split_out, "Split manifest JSON to write");
  fixture->excludes(universe);
}

int cmd_gen(const GenOptions& o, Manifest& m, std::ostream& out, std::ostream& err) {
  m.seed = o.seed;
  m.config = {{"fixture", o.fixture},         {"universe", o.universe}, {"set_size", o.set_size},
              {"sets", o.sets},               {"n_per_set", o.n_per_set}, {"val_fraction", o.val_fraction},
              {"test_fraction", o.test_fraction}};
  return with_manifest(m, o.out, err, [&] {
    if (o.fixture.empty() && o.universe == 0) {
      throw DataError("gen needs either --fixture or --universe/--set-size");
    }
    data::ProbabilityTable truth;
    data::Dataset d;
    if (!o.fixture.empty()) {
      truth = data::beverage_fixture();
      d = data::sample_choices(truth, o.n_per_set, o.seed);
    } else {
      if (o.set_size < 1) throw DataError("--set-size is required with --universe");
      auto syn = data::gen_synthetic_simplex(o.universe, o.set_size, o.sets, o.n_per_set, o.seed);
      d = std::move(syn.dataset);
      truth = std::move(syn.truth);
    }
    {
      std::ostringstream s;
      data::write_featureless_csv(d, s);
      write_file_atomic(o.out, s.str());
      m.outputs["dataset"] = o.out;
    }
    if (!o.truth_out.empty()) {
      std::ostringstream s;
      data::write_probability_table(truth, s);
      write_file_atomic(o.truth_out, s.str());
      m.outputs["truth"] = o.truth_out;
    }
    if (!o.split_out.empty()) {
      data::assign_random_split(d, 1.0 - o.val_fraction - o.test_fraction, o.val_fraction, o.seed);
      write_file_atomic(o.split_out, data::split_manifest_json(d) + "\n");
      m.outputs["split"] = o.split_out;
    }
    out << "wrote " << d.size() << " observations over " << truth.size() << " sets to " << o.out << "\n";
  });
}

// ---- train ------------------------------------------------------------------

struct TrainOptions {
  std::string model = "deephalo-fl";
  std::string data;
  std::string items;
  std::string split;
  std::string out = "model.json";
  std::string history;
  int universe = 0;
  int depth = 2;
  int width = 0;
  int heads = 1;
  int dim = 16;
  std::string activation = "quadratic";
  std::string rank = "full";
  std::string variant = "heads";
  std::string aggregation = "mean";
  std::string embedding = "mlp";
  std::string head = "mlp";
  bool no_first_residual = false;
  std::string loss = "nll";
  double lr = 1e-3;
  double lr2 = -1.0;
  std::size_t lr_switch_epoch = 0;
  std::size_t batch = 0;
  std::size_t epochs = 100;
  std::size_t patience = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double max_grad_norm = 0.0;
  double val_fraction = 0.0;
};

void register_train(CLI::App& app, TrainOptions& o) {
  app.add_option("--model", o.model, "Model kind")
      ->check(CLI::IsMember({"mnl", "cmnl", "deephalo-fl", "deephalo-feat"}))
      ->capture_default_str();
  app.add_option("--data", o.data, "Observations CSV")->required();
  app.add_option("--items", o.items, "Item feature CSV (featured data)");
  app.add_option("--split", o.split, "Split manifest JSON");
  app.add_option("--val-fraction", o.val_fraction, "Seeded random validation share when no manifest is given");
  app.add_option("-o,--out", o.out, "Model JSON to write")->capture_default_str();
  app.add_option("--history", o.history, "History CSV (default: <out>.history.csv)");
  app.add_option("--universe", o.universe, "Universe size (default: max id + 1)");
  app.add_option("--depth", o.depth, "Layers L")->capture_default_str();
  app.add_option("--width", o.width, "Featureless width J' (default J)");
  app.add_option("--heads", o.heads, "Interaction heads H")->capture_default_str();
  app.add_option("--dim", o.dim, "Featured embedding size d")->capture_default_str();
  app.add_option("--activation", o.activation, "linear or quadratic")
      ->check(CLI::IsMember({"linear", "quadratic", "identity"}))
      ->capture_default_str();
  app.add_option("--rank", o.rank, "Rank H of each Θ, or full")->capture_default_str();
  app.add_option("--variant", o.variant, "Featured variant (heads or resnet)")
      ->check(CLI::IsMember({"heads", "resnet"}))
      ->capture_default_str();
  app.add_option("--aggregation", o.aggregation, "Context summary (mean or sum)")
      ->check(CLI::IsMember({"mean", "sum"}))
      ->capture_default_str();
  app.add_option("--embedding", o.embedding, "Featured embedding (mlp or identity)")
      ->check(CLI::IsMember({"mlp", "identity"}))
      ->capture_default_str();
  app.add_option("--head", o.head, "Head modulator (mlp or diagonal)")
      ->check(CLI::IsMember({"mlp", "diagonal"}))
      ->capture_default_str();
  app.add_flag("--no-first-residual", o.no_first_residual, "Drop the residual on the first featureless layer");
  app.add_option("--loss", o.loss, "nll or mse_onehot")
      ->check(CLI::IsMember({"nll", "mse_onehot", "mse-onehot", "mse"}))
      ->capture_default_str();
  app.add_option("--lr,--learning-rate", o.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--lr2,--second-rate", o.lr2, "Learning rate after --lr-switch-epoch");
  app.add_option("--lr-switch-epoch,--switch-epoch", o.lr_switch_epoch, "First epoch trained at --lr2");
  app.add_option("--batch,--batch-size", o.batch, "Mini-batch size (0 = full batch)")->capture_default_str();
  app.add_option("--epochs,--max-epochs", o.epochs, "Maximum epochs")->capture_default_str();
  app.add_option("--patience", o.patience, "Early-stopping patience (0 = off)")->capture_default_str();
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", o.threads, "Worker threads")->capture_default_str();
  app.add_option("--max-grad-norm", o.max_grad_norm, "Gradient clipping norm (0 = off)");
}

std::unique_ptr<ChoiceModel> build_model(const TrainOptions& o, const data::Dataset& d) {
  const bool featured_model = o.model == "deephalo-feat";
  if (featured_model != d.featured()) {
    throw ModelError("model kind '" + o.model + "' cannot be trained on " +
                     (d.featured() ? std::string("featured") : std::string("featureless")) +
                     " data");
  }
  const int j = d.universe_size;
  if (o.model == "mnl") return std::make_unique<FeaturelessDeepHalo>(FeaturelessDeepHalo::mnl(j, o.seed));
  if (o.model == "cmnl") return std::make_unique<FeaturelessDeepHalo>(FeaturelessDeepHalo::cmnl(j, o.seed));
  const Activation act = o.activation == "identity" ? Activation::kLinear : parse_activation(o.activation);
  if (o.model == "deephalo-fl") {
    FeaturelessConfig c;
    c.universe = j;
    c.width = o.width;
    c.depth = o.depth;
    c.activation = act;
    if (o.rank != "full") {
      try {
        c.rank = std::stoi(o.rank);
      } catch (const std::exception&) {
        throw ModelError("--rank must be an integer or 'full', got '" + o.rank + "'");
      }
    }
    c.first_layer_residual = !o.no_first_residual;
    return std::make_unique<FeaturelessDeepHalo>(c, o.seed);
  }
  FeaturedConfig c;
  c.input_dim = d.feature_dim;
  c.dim = o.embedding == "identity" ? d.feature_dim : o.dim;
  c.heads = o.heads;
  c.depth = o.depth;
  c.sigma = act;
  c.variant = parse_variant(o.variant);
  c.aggregation = parse_aggregation(o.aggregation);
  c.embedding = parse_embedding(o.embedding);
  c.head = parse_head(o.head);
  return std::make_unique<FeaturedDeepHalo>(c, o.seed);
}

int cmd_train(const TrainOptions& o, Manifest& m, std::ostream& out, std::ostream& err) {
  m.seed = o.seed;
  m.config = {{"model", o.model},         {"depth", o.depth},
              {"width", o.width},         {"heads", o.heads},
              {"dim", o.dim},             {"activation", o.activation},
              {"rank", o.rank},           {"variant", o.variant},
              {"aggregation", o.aggregation}, {"embedding", o.embedding},
              {"head", o.head},           {"first_layer_residual", !o.no_first_residual},
              {"loss", o.loss},           {"learning_rate", o.lr},
              {"second_rate", o.lr2},     {"switch_epoch", o.lr_switch_epoch},
              {"batch_size", o.batch},    {"max_epochs", o.epochs},
              {"patience", o.patience},   {"threads", o.threads},
              {"max_grad_norm", o.max_grad_norm}, {"val_fraction", o.val_fraction},
              {"universe", o.universe}};
  m.inputs["data"] = o.data;
  if (!o.items.empty()) m.inputs["items"] = o.items;
  if (!o.split.empty()) m.inputs["split"] = o.split;
  const std::string history = o.history.empty() ? o.out + ".history.csv" : o.history;
  return with_manifest(m, o.out, err, [&] {
    data::Dataset d = load_dataset(o.data, o.items, o.universe);
    if (d.empty()) throw DataError("dataset '" + o.data + "' has no observations");
    if (!o.split.empty()) {
      data::apply_split_manifest(d, read_text(o.split));
    } else if (o.val_fraction > 0.0) {
      data::assign_random_split(d, 1.0 - o.val_fraction, o.val_fraction, o.seed);
    }
    auto model = build_model(o, d);

    TrainConfig tc;
    tc.loss = parse_loss(o.loss);
    tc.learning_rate = o.lr;
    tc.batch_size = o.batch;
    tc.max_epochs = o.epochs;
    tc.patience = o.patience;
    tc.seed = o.seed;
    tc.threads = o.threads;
    tc.max_grad_norm = o.max_grad_norm;
    if (o.lr2 >= 0.0) {
      if (o.lr_switch_epoch == 0) throw TrainingError("--lr2 needs --lr-switch-epoch");
      tc.lr_schedule = LrSchedule{o.lr2, o.lr_switch_epoch};
    }
    log::info("training " + o.model + " on " + std::to_string(d.size()) + " observations (" +
              std::to_string(model->parameter_count()) + " parameters)");
    const TrainResult r = train(*model, d, tc);

    save_model(*model, o.out);
    m.outputs["model"] = o.out;
    std::ostringstream h;
    write_history_csv(r.history, h);
    write_file_atomic(history, h.str());
    m.outputs["history"] = history;

    const Metrics fit = evaluate(*model, d, d.indices(data::Split::kTrain));
    char line[256];
    std::snprintf(line, sizeof line,
                  "trained %s: %zu epochs, best epoch %zu, train nll %.6f, train accuracy %.4f\n",
                  o.model.c_str(), r.history.size(), r.best_epoch, fit.nll, fit.accuracy);
    out << line;
  });
}

// ---- eval -------------------------------------------------------------------

struct EvalOptions {
  std::string model;
  std::string data;
  std::string items;
  std::string truth;
  std::string out;
  int universe = 0;
  bool frequencies = false;
};

void register_eval(CLI::App& app, EvalOptions& o) {
  app.add_option("--model", o.model, "Model JSON")->required();
  app.add_option("--data", o.data, "Observations CSV")->required();
  app.add_option("--items", o.items, "Item feature CSV (featured data)");
  app.add_option("--truth", o.truth, "Probability table CSV for RMSE");
  app.add_flag("--frequencies", o.frequencies, "RMSE against the data's empirical frequencies");
  app.add_option("--universe", o.universe, "Universe size (default: the model's)");
  app.add_option("-o,--out", o.out, "Metrics JSON to write");
}

int cmd_eval(const EvalOptions& o, Manifest& m, std::ostream& out, std::ostream& err) {
  m.inputs["model"] = o.model;
  m.inputs["data"] = o.data;
  if (!o.truth.empty()) m.inputs["truth"] = o.truth;
  m.config = {{"frequencies", o.frequencies}, {"universe", o.universe}};
  return with_manifest(m, o.out, err, [&] {
    auto model = load_model(o.model);
    const int universe = o.universe > 0 ? o.universe : model->universe_size();
    data::Dataset d = load_dataset(o.data, o.items, universe);
    if (d.empty()) throw DataError("cannot evaluate on an empty dataset ('" + o.data + "')");
    Metrics met = evaluate(*model, d);
    const int u = model->universe_size() > 0 ? model->universe_size() : d.universe_size;
    if (!o.truth.empty()) {
      met.rmse = rmse_vs_frequencies(*model, data::load_probability_table(o.truth), u, d.item_features);
    } else if (o.frequencies) {
      met.rmse = rmse_vs_frequencies(*model, data::empirical_frequencies(d), u, d.item_features);
    }
    json j;
    j["nll"] = met.nll;
    j["accuracy"] = met.accuracy;
    j["count"] = met.count;
    if (met.rmse) j["rmse"] = *met.rmse;
    const std::string text = j.dump(2) + "\n";
    out << text;
    if (!o.out.empty()) {
      write_file_atomic(o.out, text);
      m.outputs["metrics"] = o.out;
    }
  });
}

// ---- halo -------------------------------------------------------------------

struct HaloOptions {
  std::string model;
  std::string out;
  std::string svg;
  std::string pair;
  std::string labels;
  std::string items;
  std::string alpha_in;
  int max_order = 2;
  int universe = 0;
  int max_universe = 10;
  bool force = false;
  bool render_only = false;
};

void register_halo(CLI::App& app, HaloOptions& o) {
  app.add_option("--model", o.model, "Model JSON");
  app.add_option("-o,--out", o.out, "Alpha CSV to write");
  app.add_option("--svg", o.svg, "Heatmap SVG to write");
  app.add_option("--max-order", o.max_order, "Largest source-set size")->capture_default_str();
  app.add_option("--pair", o.pair, "Restrict to one pair, e.g. 1,2");
  app.add_option("--labels", o.labels, "Comma-separated item names for the heatmap");
  app.add_option("--items", o.items, "Item feature CSV (featured models)");
  app.add_option("--universe", o.universe, "Universe size (featured models)");
  app.add_option("--max-universe", o.max_universe, "Universe guard")->capture_default_str();
  app.add_flag("--force", o.force, "Ignore the universe guard and subset cap");
  app.add_flag("--render-only", o.render_only, "Render --svg from an existing alpha CSV (--alpha)");
  app.add_option("--alpha", o.alpha_in, "Alpha CSV to render with --render-only");
}

Matrix read_item_features(const std::string& path) {
  // Reuse the featured loader with an empty observation stream.
  std::ifstream items(path);
  if (!items) throw DataError("cannot open '" + path + "' for reading");
  std::istringstream obs("set,choice\n");
  return data::read_featured_csv(items, obs, path).item_features;
}

int cmd_halo(const HaloOptions& o, Manifest& m, std::ostream& out, std::ostream& err) {
  m.config = {{"max_order", o.max_order}, {"pair", o.pair}, {"force", o.force},
              {"render_only", o.render_only}, {"max_universe", o.max_universe}};
  const std::vector<std::string> labels = o.labels.empty() ? std::vector<std::string>{} : split_list(o.labels, ',');
  if (o.render_only) {
    if (o.alpha_in.empty() || o.svg.empty()) {
      err << "error: --render-only needs --alpha and --svg\n";
      return kExitUsage;
    }
    m.inputs["alpha"] = o.alpha_in;
    return with_manifest(m, o.svg, err, [&] {
      const auto table = halo::load_alpha_csv(o.alpha_in);
      write_file_atomic(o.svg, halo::render_heatmap_svg(table, labels));
      m.outputs["svg"] = o.svg;
      out << "rendered " << table.entries.size() << " cells to " << o.svg << "\n";
    });
  }
  if (o.model.empty() || o.out.empty()) {
    err << "error: halo needs --model and -o (or --render-only)\n";
    return kExitUsage;
  }
  m.inputs["model"] = o.model;
  return with_manifest(m, o.out, err, [&] {
    auto model = load_model(o.model);
    Matrix features;
    if (model->feature_dim() > 0) {
      if (o.items.empty()) throw AnalysisError("featured models need --items for context extraction");
      features = read_item_features(o.items);
      m.inputs["items"] = o.items;
    }
    const int universe = model->universe_size() > 0 ? model->universe_size()
                         : o.universe > 0           ? o.universe
                                                    : static_cast<int>(features.rows());
    halo::ModelSource source(*model, universe, features);
    halo::Limits limits;
    limits.max_universe = o.max_universe;
    limits.force = o.force;
    halo::Analyzer analyzer(source, limits);
    std::optional<std::pair<int, int>> pair;
    if (!o.pair.empty()) {
      const auto parts = split_list(o.pair, ',');
      if (parts.size() != 2) throw AnalysisError("--pair expects two ids like 1,2");
      try {
        pair = std::make_pair(std::stoi(parts[0]), std::stoi(parts[1]));
      } catch (const std::exception&) {
        throw AnalysisError("--pair expects two integer ids, got '" + o.pair + "'");
      }
    }
    const auto table = halo::full_relative_table(analyzer, o.max_order, pair);
    std::ostringstream csv;
    halo::write_alpha_csv(table, csv);
    write_file_atomic(o.out, csv.str());
    m.outputs["alpha"] = o.out;
    if (!o.svg.empty()) {
      write_file_atomic(o.svg, halo::render_heatmap_svg(table, labels));
      m.outputs["svg"] = o.svg;
    }
    out << "wrote " << table.entries.size() << " relative effects (" << analyzer.evaluations()
        << " set evaluations) to " << o.out << "\n";
  });
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-dependent choice modelling toolkit", "deephalo"};
  app.set_version_flag("--version", std::string(DEEPHALO_VERSION) + " (" + DEEPHALO_GIT_DESCRIBE + ")");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenOptions gen;
  TrainOptions tr;
  EvalOptions ev;
  HaloOptions ha;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a choice dataset");
  auto* train_cmd = app.add_subcommand("train", "Fit a model");
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on data");
  auto* halo_cmd = app.add_subcommand("halo", "Extract relative context effects");
  for (auto* sub : {gen_cmd, train_cmd, eval_cmd, halo_cmd}) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", "JSON file supplying any flag");
  }
  register_gen(*gen_cmd, gen);
  register_train(*train_cmd, tr);
  register_eval(*eval_cmd, ev);
  register_halo(*halo_cmd, ha);

  std::vector<std::string> args;
  try {
    args = inject_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  Manifest m;
  m.argv = raw_args;
  try {
    if (*gen_cmd) {
      m.command = "gen";
      return cmd_gen(gen, m, out, err);
    }
    if (*train_cmd) {
      m.command = "train";
      return cmd_train(tr, m, out, err);
    }
    if (*eval_cmd) {
      m.command = "eval";
      return cmd_eval(ev, m, out, err);
    }
    m.command = "halo";
    return cmd_halo(ha, m, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace deephalo::cli

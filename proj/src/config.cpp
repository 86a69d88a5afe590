#include "flexcast/config.hpp"

#include <fstream>
#include <sstream>

#include "flexcast/csv.hpp"
#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_number(const std::string& v, const std::string& ctx) {
    try {
        return csv::to_double(v, ctx);
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
}

std::size_t to_size(const std::string& v, const std::string& ctx) {
    long long n = 0;
    try {
        n = csv::to_int(v, ctx);
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    if (n < 0) throw ConfigError(ctx + " must be non-negative");
    return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& v, const std::string& ctx) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(ctx + ": expected true or false, got '" + v + "'");
}

std::string kernel_list(const std::vector<std::size_t>& ks) {
    std::string s;
    for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "," : "") + std::to_string(ks[i]);
    return s;
}

std::vector<std::size_t> parse_kernels(const std::string& v, const std::string& ctx) {
    std::vector<std::size_t> ks;
    for (const auto& f : csv::split_line(v)) ks.push_back(to_size(trim(f), ctx));
    return ks;
}

SplitMode parse_mode(const std::string& v) {
    if (v == "inductive") return SplitMode::inductive;
    if (v == "transductive") return SplitMode::transductive;
    throw ConfigError("split mode must be inductive or transductive, got '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    split.validate();
    if (!(graph.kappa_km > 0.0)) throw ConfigError("kappa_km must be positive");
    if (graph.max_degree == 0) throw ConfigError("max_degree must be positive");
}

void RunConfig::apply_seed(std::uint64_t s) {
    seed = s;
    split.seed = s;
    train.seed = s;
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, {0x696e6974ULL}); }

std::string RunConfig::to_ini() const {
    std::ostringstream o;
    auto num = [](double v) { return csv::format_double(v); };
    o << "[data]\n"
      << "stations = " << data.stations << "\n"
      << "tiles = " << data.tiles << "\n"
      << "traffic = " << data.traffic << "\n\n"
      << "[graph]\n"
      << "kappa_km = " << num(graph.kappa_km) << "\n"
      << "max_degree = " << graph.max_degree << "\n"
      << "k = " << graph.k << "\n\n"
      << "[model]\n"
      << "history = " << model.history << "\n"
      << "horizon = " << model.horizon << "\n"
      << "channels = " << model.channels << "\n"
      << "layers = " << model.layers << "\n"
      << "kernels = " << kernel_list(model.kernels) << "\n"
      << "dilation = " << model.dilation_factor << "\n"
      << "pooling = " << to_string(model.pooling) << "\n"
      << "graph_free = " << (model.graph_free ? "true" : "false") << "\n\n"
      << "[train]\n"
      << "learning_rate = " << num(train.learning_rate) << "\n"
      << "weight_decay = " << num(train.weight_decay) << "\n"
      << "batch_size = " << train.batch_size << "\n"
      << "edge_dropout = " << num(train.edge_dropout) << "\n"
      << "max_epochs = " << train.max_epochs << "\n"
      << "patience = " << train.patience << "\n"
      << "max_train_samples = " << train.max_train_samples << "\n"
      << "max_val_samples = " << train.max_val_samples << "\n"
      << "eval_batch_size = " << train.eval_batch_size << "\n"
      << "micro_batch_nodes = " << train.micro_batch_nodes << "\n\n"
      << "[split]\n"
      << "train = " << num(split.train_fraction) << "\n"
      << "val = " << num(split.val_fraction) << "\n"
      << "test = " << num(split.test_fraction) << "\n"
      << "mode = " << to_string(split.mode) << "\n"
      << "scarcity = " << num(split.scarcity) << "\n\n"
      << "[run]\n"
      << "seed = " << seed << "\n"
      << "variant = " << variant << "\n";
    return o.str();
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig c;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    bool seed_set = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno);
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "data" && section != "graph" && section != "model" && section != "train" &&
                section != "split" && section != "run")
                throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        const std::string ctx = where + " " + section + "." + key;
        auto unknown = [&] { throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]"); };

        if (section == "data") {
            if (key == "stations") c.data.stations = v;
            else if (key == "tiles") c.data.tiles = v;
            else if (key == "traffic") c.data.traffic = v;
            else unknown();
        } else if (section == "graph") {
            if (key == "kappa_km") c.graph.kappa_km = to_number(v, ctx);
            else if (key == "max_degree") c.graph.max_degree = to_size(v, ctx);
            else if (key == "k") c.graph.k = to_size(v, ctx);
            else unknown();
        } else if (section == "model") {
            if (key == "history") c.model.history = to_size(v, ctx);
            else if (key == "horizon") c.model.horizon = to_size(v, ctx);
            else if (key == "channels") c.model.channels = to_size(v, ctx);
            else if (key == "layers") c.model.layers = to_size(v, ctx);
            else if (key == "kernels") c.model.kernels = parse_kernels(v, ctx);
            else if (key == "dilation") c.model.dilation_factor = to_size(v, ctx);
            else if (key == "pooling") c.model.pooling = parse_pooling(v);
            else if (key == "graph_free") c.model.graph_free = to_bool(v, ctx);
            else unknown();
        } else if (section == "train") {
            if (key == "learning_rate") c.train.learning_rate = to_number(v, ctx);
            else if (key == "weight_decay") c.train.weight_decay = to_number(v, ctx);
            else if (key == "batch_size") c.train.batch_size = to_size(v, ctx);
            else if (key == "edge_dropout") c.train.edge_dropout = to_number(v, ctx);
            else if (key == "max_epochs") c.train.max_epochs = to_size(v, ctx);
            else if (key == "patience") c.train.patience = to_size(v, ctx);
            else if (key == "max_train_samples") c.train.max_train_samples = to_size(v, ctx);
            else if (key == "max_val_samples") c.train.max_val_samples = to_size(v, ctx);
            else if (key == "eval_batch_size") c.train.eval_batch_size = to_size(v, ctx);
            else if (key == "micro_batch_nodes") c.train.micro_batch_nodes = to_size(v, ctx);
            else unknown();
        } else if (section == "split") {
            if (key == "train") c.split.train_fraction = to_number(v, ctx);
            else if (key == "val") c.split.val_fraction = to_number(v, ctx);
            else if (key == "test") c.split.test_fraction = to_number(v, ctx);
            else if (key == "mode") c.split.mode = parse_mode(v);
            else if (key == "scarcity") c.split.scarcity = to_number(v, ctx);
            else unknown();
        } else if (section == "run") {
            if (key == "seed") {
                c.apply_seed(static_cast<std::uint64_t>(to_size(v, ctx)));
                seed_set = true;
            } else if (key == "variant") {
                c.variant = v;
            } else {
                unknown();
            }
        } else {
            throw ConfigError(where + ": key outside of any section");
        }
    }
    if (!seed_set) c.apply_seed(c.seed);
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

}  // namespace flexcast

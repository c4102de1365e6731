#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "ticketforge/experiment.hpp"
#include "ticketforge/io.hpp"

namespace ticketforge {

namespace {

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected an integer, got `" + v + "`");
    }
}

double parse_f64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected a number, got `" + v + "`");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + key + ": expected true/false, got `" + v + "`");
}

std::string format_double_cfg(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& where) {
    ExperimentConfig cfg;
    cfg.domains.clear();
    std::string section;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);

        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(where + ":" + std::to_string(line_no) + ": malformed section");
            }
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ":" + std::to_string(line_no) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string ctx = section + "." + key;

        if (section == "experiment") {
            if (key == "out") cfg.out = value;
            else if (key == "seeds") {
                cfg.seeds.clear();
                for (const auto& s : split_list(value)) cfg.seeds.push_back(parse_u64(s, ctx));
            } else if (key == "threads") cfg.threads = parse_u64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "data") {
            if (key == "mode") cfg.data_mode = value;
            else if (key == "domains") {
                cfg.domains.clear();
                for (const auto& item : split_list(value)) {
                    const auto sep = item.find('=');
                    if (sep == std::string::npos) cfg.domains.emplace_back(item, "");
                    else cfg.domains.emplace_back(item.substr(0, sep), item.substr(sep + 1));
                }
            } else if (key == "train_size") cfg.sizes.train = parse_u64(value, ctx);
            else if (key == "val_size") cfg.sizes.validation = parse_u64(value, ctx);
            else if (key == "test_size") cfg.sizes.test = parse_u64(value, ctx);
            else if (key == "max_len") cfg.max_len = parse_u64(value, ctx);
            else if (key == "data_seed") cfg.data_seed = parse_u64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "synthetic") {
            if (key == "topic_tokens") cfg.synth_topic_tokens = parse_u64(value, ctx);
            else if (key == "noise") cfg.synth_noise = parse_f64(value, ctx);
            else if (key == "neutral") cfg.synth_neutral = parse_f64(value, ctx);
            else if (key == "records") cfg.synth_records = parse_u64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "vocab") {
            if (key == "path") cfg.vocab_path = value;
            else if (key == "size") cfg.vocab_size = parse_u64(value, ctx);
            else if (key == "coverage") cfg.vocab_coverage = parse_f64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "model") {
            if (key == "embed_dim") cfg.model.embed_dim = parse_u64(value, ctx);
            else if (key == "heights") {
                cfg.model.filter_heights.clear();
                for (const auto& h : split_list(value))
                    cfg.model.filter_heights.push_back(parse_u64(h, ctx));
            } else if (key == "channels") cfg.model.channels = parse_u64(value, ctx);
            else if (key == "hidden") cfg.model.mlp_hidden = parse_u64(value, ctx);
            else if (key == "classes") cfg.model.num_classes = parse_u64(value, ctx);
            else if (key == "dropout") cfg.model.dropout_p = parse_f64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "prune") {
            if (key == "fraction") cfg.prune.fraction = parse_f64(value, ctx);
            else if (key == "rounds") cfg.prune.total_rounds = static_cast<int>(parse_u64(value, ctx));
            else if (key == "rule") {
                if (value == "keep-fraction") cfg.prune.rule = PruneRule::KeepFraction;
                else if (value == "paper-literal") cfg.prune.rule = PruneRule::PaperLiteral;
                else throw ConfigError("config: " + ctx + ": expected keep-fraction or paper-literal");
            } else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "train") {
            if (key == "batch") cfg.train.batch_size = parse_u64(value, ctx);
            else if (key == "epochs") cfg.train.max_epochs = static_cast<int>(parse_u64(value, ctx));
            else if (key == "lr") cfg.train.learning_rate = parse_f64(value, ctx);
            else if (key == "l2") cfg.train.l2_weight = parse_f64(value, ctx);
            else if (key == "beta1") cfg.train.beta1 = parse_f64(value, ctx);
            else if (key == "beta2") cfg.train.beta2 = parse_f64(value, ctx);
            else if (key == "eps") cfg.train.epsilon = parse_f64(value, ctx);
            else if (key == "patience") cfg.train.patience = static_cast<int>(parse_u64(value, ctx));
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "obtain") {
            if (key == "strategies") cfg.obtain_strategies = split_list(value);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "transfer") {
            if (key == "pairs") {
                cfg.transfer_pairs.clear();
                if (value != "all") {
                    for (const auto& item : split_list(value)) {
                        const auto sep = item.find(':');
                        if (sep == std::string::npos) {
                            throw ConfigError("config: " + ctx + ": expected source:target");
                        }
                        cfg.transfer_pairs.emplace_back(item.substr(0, sep), item.substr(sep + 1));
                    }
                }
            } else if (key == "strategies") cfg.transfer_strategies = split_list(value);
            else if (key == "runs") cfg.transfer_runs = value;
            else if (key == "window") cfg.scan_window = parse_u64(value, ctx);
            else if (key == "margin") cfg.scan_margin = parse_f64(value, ctx);
            else if (key == "var_factor") cfg.scan_var_factor = parse_f64(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else if (section == "divergence") {
            if (key == "scale_1e5") cfg.divergence_scale_1e5 = parse_bool(value, ctx);
            else throw ConfigError(where + ": unknown key " + ctx);
        } else {
            throw ConfigError(where + ":" + std::to_string(line_no) + ": unknown section [" +
                              section + "]");
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    return parse_config_text(read_file(path), path.string());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[experiment]\n";
    os << "out = " << cfg.out.string() << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? "," : "") << cfg.seeds[i];
    os << "\nthreads = " << cfg.threads << "\n\n";

    os << "[data]\n";
    os << "mode = " << cfg.data_mode << "\n";
    os << "domains = ";
    for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
        os << (i ? "," : "") << cfg.domains[i].first;
        if (!cfg.domains[i].second.empty()) os << "=" << cfg.domains[i].second;
    }
    os << "\ntrain_size = " << cfg.sizes.train << "\n";
    os << "val_size = " << cfg.sizes.validation << "\n";
    os << "test_size = " << cfg.sizes.test << "\n";
    os << "max_len = " << cfg.max_len << "\n";
    os << "data_seed = " << cfg.data_seed << "\n\n";

    os << "[synthetic]\n";
    os << "topic_tokens = " << cfg.synth_topic_tokens << "\n";
    os << "noise = " << format_double_cfg(cfg.synth_noise) << "\n";
    os << "neutral = " << format_double_cfg(cfg.synth_neutral) << "\n";
    os << "records = " << cfg.synth_records << "\n\n";

    os << "[vocab]\n";
    if (!cfg.vocab_path.empty()) os << "path = " << cfg.vocab_path.string() << "\n";
    os << "size = " << cfg.vocab_size << "\n";
    os << "coverage = " << format_double_cfg(cfg.vocab_coverage) << "\n\n";

    os << "[model]\n";
    os << "embed_dim = " << cfg.model.embed_dim << "\n";
    os << "heights = ";
    for (std::size_t i = 0; i < cfg.model.filter_heights.size(); ++i)
        os << (i ? "," : "") << cfg.model.filter_heights[i];
    os << "\nchannels = " << cfg.model.channels << "\n";
    os << "hidden = " << cfg.model.mlp_hidden << "\n";
    os << "classes = " << cfg.model.num_classes << "\n";
    os << "dropout = " << format_double_cfg(cfg.model.dropout_p) << "\n\n";

    os << "[prune]\n";
    os << "fraction = " << format_double_cfg(cfg.prune.fraction) << "\n";
    os << "rounds = " << cfg.prune.total_rounds << "\n";
    os << "rule = "
       << (cfg.prune.rule == PruneRule::KeepFraction ? "keep-fraction" : "paper-literal")
       << "\n\n";

    os << "[train]\n";
    os << "batch = " << cfg.train.batch_size << "\n";
    os << "epochs = " << cfg.train.max_epochs << "\n";
    os << "lr = " << format_double_cfg(cfg.train.learning_rate) << "\n";
    os << "l2 = " << format_double_cfg(cfg.train.l2_weight) << "\n";
    os << "beta1 = " << format_double_cfg(cfg.train.beta1) << "\n";
    os << "beta2 = " << format_double_cfg(cfg.train.beta2) << "\n";
    os << "eps = " << format_double_cfg(cfg.train.epsilon) << "\n";
    os << "patience = " << cfg.train.patience << "\n\n";

    os << "[obtain]\n";
    os << "strategies = ";
    for (std::size_t i = 0; i < cfg.obtain_strategies.size(); ++i)
        os << (i ? "," : "") << cfg.obtain_strategies[i];
    os << "\n\n";

    os << "[transfer]\n";
    os << "pairs = ";
    if (cfg.transfer_pairs.empty()) {
        os << "all";
    } else {
        for (std::size_t i = 0; i < cfg.transfer_pairs.size(); ++i)
            os << (i ? "," : "") << cfg.transfer_pairs[i].first << ":"
               << cfg.transfer_pairs[i].second;
    }
    os << "\nstrategies = ";
    for (std::size_t i = 0; i < cfg.transfer_strategies.size(); ++i)
        os << (i ? "," : "") << cfg.transfer_strategies[i];
    os << "\n";
    if (!cfg.transfer_runs.empty()) os << "runs = " << cfg.transfer_runs.string() << "\n";
    os << "window = " << cfg.scan_window << "\n";
    os << "margin = " << format_double_cfg(cfg.scan_margin) << "\n";
    os << "var_factor = " << format_double_cfg(cfg.scan_var_factor) << "\n\n";

    os << "[divergence]\n";
    os << "scale_1e5 = " << (cfg.divergence_scale_1e5 ? "true" : "false") << "\n";
    return os.str();
}

void ExperimentConfig::validate() const {
    if (out.empty()) throw ConfigError("config: experiment.out must be set");
    if (seeds.empty()) throw ConfigError("config: experiment.seeds must be non-empty");
    if (data_mode != "synthetic" && data_mode != "jsonl") {
        throw ConfigError("config: data.mode must be synthetic or jsonl, got `" + data_mode + "`");
    }
    if (domains.empty()) throw ConfigError("config: data.domains must be non-empty");
    for (const auto& [name, path] : domains) {
        if (name.empty()) throw ConfigError("config: empty domain name");
        if (data_mode == "jsonl") {
            if (path.empty()) {
                throw ConfigError("config: domain " + name + " needs a jsonl path (name=path)");
            }
            if (!std::filesystem::exists(path)) {
                throw ConfigError("config: domain " + name + ": input path does not exist: " +
                                  path);
            }
        }
    }
    if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0) {
        throw ConfigError("config: split sizes must be positive");
    }
    if (model.embed_dim == 0 || model.channels == 0 || model.mlp_hidden == 0 ||
        model.num_classes < 2 || model.filter_heights.empty()) {
        throw ConfigError("config: model dimensions must be positive");
    }
    for (std::size_t h : model.filter_heights) {
        if (h == 0 || h > max_len) {
            throw ConfigError("config: filter height " + std::to_string(h) +
                              " exceeds max_len " + std::to_string(max_len));
        }
    }
    if (model.dropout_p < 0.0 || model.dropout_p >= 1.0) {
        throw ConfigError("config: model.dropout must be in [0,1)");
    }
    prune.validate();
    train.validate();
    for (const auto& s : obtain_strategies) {
        if (s != "reset" && s != "random") {
            throw ConfigError("config: obtain.strategies: unknown strategy `" + s + "`");
        }
    }
    for (const auto& s : transfer_strategies) {
        if (s != "masks-reset" && s != "masks-random" && s != "ticket-target") {
            throw ConfigError("config: transfer.strategies: unknown strategy `" + s + "`");
        }
    }
    for (const auto& [src, dst] : transfer_pairs) {
        auto known = [&](const std::string& d) {
            return std::any_of(domains.begin(), domains.end(),
                               [&](const auto& kv) { return kv.first == d; });
        };
        if (!known(src) || !known(dst)) {
            throw ConfigError("config: transfer pair " + src + ":" + dst +
                              " references an unknown domain");
        }
    }
    if (scan_window == 0) throw ConfigError("config: transfer.window must be >= 1");
}

void apply_paper_preset(ExperimentConfig& cfg) {
    cfg.vocab_size = 8000;
    cfg.vocab_coverage = 0.9995;
    cfg.sizes = SplitSizes{20000, 10000, 10000};
    cfg.max_len = 500;
    cfg.model.embed_dim = 417;
    cfg.model.filter_heights = {3, 4, 5};
    cfg.model.channels = 127;
    cfg.model.mlp_hidden = 117;
    cfg.model.num_classes = 2;
    cfg.model.dropout_p = 0.285;
    cfg.prune.fraction = 0.35;
    cfg.prune.total_rounds = 20;
    cfg.train.batch_size = 32;
    cfg.train.max_epochs = 15;
    cfg.train.learning_rate = 1e-3;
    cfg.train.l2_weight = 1e-5;
}

void apply_synthetic_preset(ExperimentConfig& cfg) {
    cfg.data_mode = "synthetic";
    if (cfg.domains.empty()) {
        cfg.domains = {{"alpha", ""}, {"beta", ""}};
    }
}

std::size_t effective_threads(const ExperimentConfig& cfg) {
    std::size_t n = cfg.threads;
    if (n == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n = hw ? hw : 1;
    }
    if (const char* env = std::getenv("TICKETFORGE_THREADS")) {
        const std::uint64_t cap = parse_u64(env, "TICKETFORGE_THREADS");
        if (cap >= 1) n = std::min<std::size_t>(n, cap);
    }
    return std::max<std::size_t>(n, 1);
}

}  // namespace ticketforge

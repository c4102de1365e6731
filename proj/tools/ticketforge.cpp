#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ticketforge/experiment.hpp"
#include "ticketforge/io.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out;
    std::string seed_list;
    bool paper = false;
    bool synthetic = false;
    bool force = false;
};

ticketforge::ExperimentConfig resolve_config(const GlobalOpts& opts) {
    ticketforge::ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = ticketforge::load_config(opts.config_path);
    }
    if (opts.paper) ticketforge::apply_paper_preset(cfg);
    if (opts.synthetic) ticketforge::apply_synthetic_preset(cfg);
    if (!opts.out.empty()) cfg.out = opts.out;
    if (!opts.seed_list.empty()) {
        cfg.seeds.clear();
        for (const auto& s : ticketforge::split_list(opts.seed_list)) {
            try {
                cfg.seeds.push_back(std::stoull(s));
            } catch (const std::exception&) {
                throw ticketforge::ConfigError("--seed-list: bad seed `" + s + "`");
            }
        }
    }
    return cfg;
}

void add_global_flags(CLI::App* cmd, GlobalOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config file");
    cmd->add_option("--out", opts.out, "output directory (overrides config)");
    cmd->add_option("--seed-list", opts.seed_list, "comma-separated seeds (overrides config)");
    cmd->add_flag("--paper", opts.paper, "apply the full-scale protocol preset");
    cmd->add_flag("--synthetic", opts.synthetic, "use the built-in synthetic domains");
    cmd->add_flag("--force", opts.force, "recompute cells even if their outputs exist");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ticketforge: lottery-ticket training and cross-domain transfer for a text CNN"};
    app.require_subcommand(1);

    GlobalOpts opts;
    std::vector<std::string> report_dirs;
    std::string report_out;

    CLI::App* build_vocab = app.add_subcommand("build-vocab",
                                               "train the shared subword vocabulary");
    add_global_flags(build_vocab, opts);

    CLI::App* divergence = app.add_subcommand("divergence",
                                              "pairwise Jensen-Shannon divergence matrix");
    add_global_flags(divergence, opts);

    CLI::App* obtain = app.add_subcommand("obtain", "run the lottery grid and persist tickets");
    add_global_flags(obtain, opts);

    CLI::App* transfer = app.add_subcommand("transfer", "re-train tickets across domains");
    add_global_flags(transfer, opts);

    CLI::App* report = app.add_subcommand("report", "aggregate records into summary tables");
    report->add_option("dirs", report_dirs, "run directories holding records CSVs")
        ->required();
    report->add_option("--out", report_out, "directory for summary outputs (default: first dir)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(build_vocab)) {
            ticketforge::cmd_build_vocab(resolve_config(opts));
        } else if (app.got_subcommand(divergence)) {
            ticketforge::cmd_divergence(resolve_config(opts));
        } else if (app.got_subcommand(obtain)) {
            const auto stats = ticketforge::cmd_obtain(resolve_config(opts), opts.force);
            std::cout << "obtain: " << stats.cells_run << " cells run, " << stats.cells_skipped
                      << " skipped\n";
        } else if (app.got_subcommand(transfer)) {
            const auto stats = ticketforge::cmd_transfer(resolve_config(opts), opts.force);
            std::cout << "transfer: " << stats.cells_run << " cells run, " << stats.cells_skipped
                      << " skipped\n";
        } else if (app.got_subcommand(report)) {
            std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
            const std::filesystem::path out =
                report_out.empty() ? dirs.front() : std::filesystem::path(report_out);
            ticketforge::cmd_report(dirs, out);
        }
    } catch (const ticketforge::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ticketforge::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ticketforge::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

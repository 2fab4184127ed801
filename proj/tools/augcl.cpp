// augcl: run experiments, single-augmentation baselines and reports.

#include <CLI11.hpp>

#include <iostream>

#include "augcl/errors.hpp"
#include "augcl/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kLogError = 4;
constexpr int kFailure = 1;

int guarded(auto&& body) {
    try {
        return body();
    } catch (const augcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const augcl::DataMissingError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const augcl::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const augcl::LengthError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const augcl::LogError& e) {
        std::cerr << "corrupt log: " << e.what() << '\n';
        return kLogError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}

void print_summary(const augcl::RunReport& report) {
    std::cout << "records: " << report.records.size() << ", single-augmentation rows: " << report.single_aug.size()
              << '\n';
    for (const std::string& f : report.failures) std::cout << "failed " << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    augcl::tune_allocator();
    CLI::App app{"Augmentation-as-task continual self-supervised learning"};
    app.set_version_flag("--version", std::string(augcl::library_version()));
    app.require_subcommand(1);

    std::string config_path;
    std::size_t parallel = 1;
    auto* run = app.add_subcommand("run", "Train CL and MTL for every seed and write the report");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--parallel-runs", parallel, "Seeds trained concurrently")->check(CLI::PositiveNumber);

    std::string kind_name;
    auto* single = app.add_subcommand("single-aug", "Train with one augmentation family and probe");
    single->add_option("--config", config_path, "Experiment config (JSON)")->required();
    single->add_option("--kind", kind_name, "Augmentation family")->required();
    single->add_option("--parallel-runs", parallel, "Seeds trained concurrently")->check(CLI::PositiveNumber);

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Regenerate report files from a run directory's logs");
    report->add_option("run_dir", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (run->parsed()) {
        return guarded([&] {
            const augcl::ExperimentConfig config = augcl::load_config(config_path);
            const augcl::DatasetPair data = augcl::load_experiment_data(config);
            const augcl::RunReport rep = augcl::run_experiment(config, data, parallel);
            print_summary(rep);
            std::cout << "report written to " << config.output_dir << '\n';
            return rep.failures.empty() ? kOk : kFailure;
        });
    }
    if (single->parsed()) {
        return guarded([&] {
            const augcl::ExperimentConfig config = augcl::load_config(config_path);
            const auto kind = augcl::parse_kind(kind_name);
            if (!kind) throw augcl::ConfigError("kind", "unknown augmentation '" + kind_name + "'");
            if (!augcl::kind_valid_for(*kind, config.train.dataset))
                throw augcl::ConfigError("kind", std::string(augcl::to_string(*kind)) + " is not an augmentation for " +
                                                     std::string(augcl::to_string(config.train.dataset)));
            const augcl::DatasetPair data = augcl::load_experiment_data(config);
            for (const auto& r : augcl::run_single_aug_experiment(config, data, *kind, parallel))
                std::cout << augcl::to_string(r.kind) << " seed " << r.seed << ": " << r.probe_accuracy << "%\n";
            return kOk;
        });
    }
    return guarded([&] {
        print_summary(augcl::regenerate_report(run_dir));
        return kOk;
    });
}

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ichscnet/train.hpp"

namespace {

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ichscnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ichscnet::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ichscnet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const ichscnet::ShapeError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ICH-SCNet: multi-task hemorrhage segmentation and prognosis"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    int64_t gen_n = 0;
    uint64_t gen_seed = 0;
    std::string gen_out;
    int64_t gen_size = 128;
    gen->add_option("--n", gen_n, "number of cases")->required();
    gen->add_option("--seed", gen_seed, "generator seed")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--size", gen_size, "square image size");

    auto* train_cmd = app.add_subcommand("train", "run cross-validated training");
    std::string train_config;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", train_config, "run config JSON")->required();
    train_cmd->add_option("--override", overrides, "key=value config overrides");

    auto* ablate_cmd = app.add_subcommand("ablate", "train every mode, emit the table");
    std::string ablate_config;
    std::vector<std::string> ablate_overrides;
    ablate_cmd->add_option("--config", ablate_config, "base config JSON")->required();
    ablate_cmd->add_option("--override", ablate_overrides, "key=value config overrides");

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
    std::string eval_ckpt, eval_data;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();

    auto* report_cmd = app.add_subcommand("report", "render a run directory");
    std::string report_dir;
    report_cmd->add_option("--run-dir", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    if (gen->parsed())
        return guarded([&] {
            const auto m = ichscnet::generate_dataset(gen_n, gen_seed, gen_out, gen_size);
            std::cout << "wrote " << (m.n_good + m.n_poor) << " cases (" << m.n_poor
                      << " poor) to " << gen_out << '\n';
        });

    if (train_cmd->parsed())
        return guarded([&] {
            ichscnet::RunConfig cfg = ichscnet::RunConfig::load(train_config);
            for (const auto& kv : overrides) cfg.apply_override(kv);
            const ichscnet::RunReport r = ichscnet::train(cfg);
            std::cout << ichscnet::render_run_report(r);
        });

    if (ablate_cmd->parsed())
        return guarded([&] {
            ichscnet::RunConfig cfg = ichscnet::RunConfig::load(ablate_config);
            for (const auto& kv : ablate_overrides) cfg.apply_override(kv);
            std::cout << ichscnet::render_ablation(ichscnet::ablate(cfg));
        });

    if (eval_cmd->parsed())
        return guarded([&] {
            std::cout << ichscnet::render_run_report(ichscnet::evaluate(eval_ckpt, eval_data));
        });

    if (report_cmd->parsed())
        return guarded([&] { std::cout << ichscnet::render_run_dir(report_dir); });

    return 2;
}

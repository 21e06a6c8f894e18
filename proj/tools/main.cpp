// vclab: train, evaluate, and compare vibration-compensating controllers on a
// simulated flexible feed-drive axis.
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vclab/harness.hpp"

namespace {

using vclab::harness::RunConfig;

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> mirrored;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file (sections of key = value)");
    cmd->add_option("--set", args.overrides, "Override a key: section.key=value (repeatable)");
    // Every config key is also a flag of the same name.
    for (const auto& key : vclab::harness::config_keys()) {
        const std::string name = key.name;
        cmd->add_option_function<std::string>(
            "--" + name, [&args, name](const std::string& v) { args.mirrored[name] = v; });
    }
}

RunConfig build_config(const ConfigArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = vclab::harness::load_config_file(args.config_path);
    for (const auto& [key, value] : args.mirrored) {
        vclab::harness::apply_config_value(cfg, key, value);
    }
    for (const std::string& assignment : args.overrides) {
        vclab::harness::apply_override(cfg, assignment);
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vibration-compensation lab for a simulated flexible feed drive"};
    app.require_subcommand(1);

    ConfigArgs train_args, eval_args, baseline_args, simulate_args;

    CLI::App* train = app.add_subcommand("train", "run PPO training and emit run artifacts");
    add_config_options(train, train_args);
    bool quiet = false;
    train->add_flag("--quiet", quiet, "suppress per-update progress lines");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
    add_config_options(eval, eval_args);
    std::string checkpoint;
    int episodes = 50;
    std::string eval_out;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--episodes", episodes, "number of evaluation episodes");
    eval->add_option("--out", eval_out, "output directory (default: <out_dir>/eval)");

    CLI::App* baseline =
        app.add_subcommand("baseline", "compare unshaped vs shaped point-to-point moves");
    add_config_options(baseline, baseline_args);
    vclab::harness::MoveSpec move;
    std::string schemes = "none,zv,zvd";
    double design_omega_scale = 1.0;
    std::string baseline_out;
    baseline->add_option("--distance", move.distance, "move distance, mm");
    baseline->add_option("--vel", move.v_cruise, "cruise velocity, mm/s");
    baseline->add_option("--accel", move.accel, "acceleration, mm/s^2");
    baseline->add_option("--schemes", schemes, "comma list of none,zv,zvd");
    baseline->add_option("--design-omega-scale", design_omega_scale,
                         "shaper design frequency / true modal frequency");
    baseline->add_option("--out", baseline_out, "CSV path (default: <out_dir>/baseline.csv)");

    CLI::App* simulate = app.add_subcommand("simulate", "open-loop trace of a command file");
    add_config_options(simulate, simulate_args);
    std::string command_file;
    std::string trace_out;
    simulate->add_option("--commands", command_file, "one velocity command per control step")
        ->required();
    simulate->add_option("--out", trace_out, "trace CSV path (default: <out_dir>/trace.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const RunConfig cfg = build_config(train_args);
            const vclab::harness::TrainResult res =
                vclab::harness::cmd_train(cfg, quiet ? nullptr : &std::cout);
            std::cout << "run directory: " << res.run_dir << "\n"
                      << "steps: " << res.steps << ", updates: " << res.updates
                      << ", episodes: " << res.episodes << "\n"
                      << "final checkpoint: " << res.final_checkpoint << "\n";
        } else if (eval->parsed()) {
            const RunConfig cfg = build_config(eval_args);
            const std::string out = eval_out.empty() ? cfg.out_dir + "/eval" : eval_out;
            const vclab::harness::EvalReport report =
                vclab::harness::cmd_eval(checkpoint, cfg, episodes, out);
            std::cout << "episodes: " << report.episodes.size() << "\n"
                      << "mean final position error: " << report.mean_final_pos_error
                      << " mm\n"
                      << "mean residual envelope: " << report.mean_residual_envelope << " mm\n"
                      << "mean return: " << report.mean_return << "\n"
                      << "mean in-band fraction (last 100 steps): "
                      << report.mean_in_band_last100 << "\n"
                      << "episodes with >= 60% in-band tail: "
                      << report.fraction_episodes_in_band60 << "\n"
                      << "report: " << out << "\n";
        } else if (baseline->parsed()) {
            const RunConfig cfg = build_config(baseline_args);
            const std::string out =
                baseline_out.empty() ? cfg.out_dir + "/baseline.csv" : baseline_out;
            const auto rows =
                vclab::harness::cmd_baseline(cfg, move, schemes, design_omega_scale, out);
            std::printf("%-6s %12s %22s %20s\n", "scheme", "duration_s", "residual_envelope_mm",
                        "trajectory_loss_mm2");
            for (const auto& r : rows) {
                std::printf("%-6s %12.4f %22.6g %20.6g\n", r.scheme.c_str(), r.duration_s,
                            r.residual_envelope_mm, r.trajectory_loss_mm2);
            }
            std::cout << "table: " << out << "\n";
        } else if (simulate->parsed()) {
            const RunConfig cfg = build_config(simulate_args);
            const std::string out = trace_out.empty() ? cfg.out_dir + "/trace.csv" : trace_out;
            vclab::harness::cmd_simulate(cfg, command_file, out);
            std::cout << "trace: " << out << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

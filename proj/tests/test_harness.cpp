#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vclab/harness.hpp"

using namespace vclab;
using namespace vclab::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Small, fast configuration for harness-level runs.
RunConfig tiny_run(const std::string& out_dir) {
    RunConfig cfg;
    cfg.net_dense1 = 8;
    cfg.net_dense2 = 8;
    cfg.net_lstm = 8;
    cfg.episode.horizon = 50;
    cfg.ppo.n_envs = 2;
    cfg.ppo.n_steps = 64;
    cfg.ppo.seq_len = 32;
    cfg.ppo.minibatches = 2;
    cfg.ppo.total_steps = 512;
    cfg.out_dir = out_dir;
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path("harness_test_out") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("config serialization round-trips exactly") {
    RunConfig cfg;
    cfg.axis.omega_n = 2.0 * pi * 12.5;
    cfg.ppo.learning_rate = 2.5e-4;
    cfg.seed = 42;
    cfg.out_dir = "runs/example";
    std::ostringstream first;
    save_config(cfg, first);

    std::istringstream in(first.str());
    const RunConfig loaded = load_config(in);
    std::ostringstream second;
    save_config(loaded, second);
    REQUIRE(first.str() == second.str());
}

TEST_CASE("config overrides apply and unknown keys are rejected") {
    RunConfig cfg;
    apply_override(cfg, "axis.xi=0.05");
    REQUIRE(cfg.axis.xi == 0.05);
    apply_override(cfg, "ppo.optimizer=sgd");
    REQUIRE(cfg.ppo.optimizer == "sgd");
    REQUIRE_THROWS_AS(apply_override(cfg, "axis.bogus=1"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_override(cfg, "no_equals_sign"), std::invalid_argument);
}

TEST_CASE("config parse errors carry line numbers") {
    std::istringstream in("[axis]\nomega_n = not_a_number\n");
    try {
        load_config(in, "test.ini");
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("test.ini:2") != std::string::npos);
    }
}

TEST_CASE("a zero-step training run emits the checkpoint and empty series") {
    const fs::path dir = fresh_dir("train_zero");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.ppo.total_steps = 0;
    const TrainResult res = cmd_train(cfg);
    REQUIRE(res.steps == 0);
    REQUIRE(fs::exists(res.final_checkpoint));
    const std::string metrics = slurp(fs::path(res.run_dir) / "metrics.csv");
    REQUIRE(metrics.find('\n') == metrics.size() - 1); // header only
    REQUIRE(fs::exists(fs::path(res.run_dir) / "config.ini"));
    REQUIRE(fs::exists(fs::path(res.run_dir) / "probe_deflection.csv"));
    REQUIRE(fs::exists(fs::path(res.run_dir) / "probe_action.csv"));

    auto [net, meta] = neural::load_checkpoint(res.final_checkpoint);
    REQUIRE(meta.step == 0);
    REQUIRE(meta.spec == cfg.layer_spec());
}

TEST_CASE("identical config and seed reproduce metrics byte for byte") {
    const fs::path dir = fresh_dir("train_repro");
    RunConfig a = tiny_run((dir / "a").string());
    RunConfig b = tiny_run((dir / "b").string());
    cmd_train(a);
    cmd_train(b);
    REQUIRE(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    REQUIRE(slurp(dir / "a" / "episode_reward.csv") == slurp(dir / "b" / "episode_reward.csv"));
    REQUIRE(slurp(dir / "a" / "probe_deflection.csv") ==
            slurp(dir / "b" / "probe_deflection.csv"));
}

TEST_CASE("the archived config reproduces the run it came from") {
    const fs::path dir = fresh_dir("train_archive");
    RunConfig cfg = tiny_run((dir / "orig").string());
    cfg.axis.xi = 0.03;
    cfg.seed = 7;
    cmd_train(cfg);

    RunConfig replay = load_config_file((dir / "orig" / "config.ini").string());
    replay.out_dir = (dir / "replay").string();
    cmd_train(replay);
    REQUIRE(slurp(dir / "orig" / "metrics.csv") == slurp(dir / "replay" / "metrics.csv"));
}

TEST_CASE("training appends checkpoints at the configured interval") {
    const fs::path dir = fresh_dir("train_ckpt");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.ppo.total_steps = 512; // 4 updates
    cfg.checkpoint_interval = 2;
    cmd_train(cfg);
    int checkpoints = 0;
    for (const auto& entry : fs::directory_iterator(dir / "run")) {
        if (entry.path().filename().string().rfind("checkpoint_0", 0) == 0) ++checkpoints;
    }
    REQUIRE(checkpoints == 2);
}

TEST_CASE("evaluating zero episodes yields an empty report") {
    const fs::path dir = fresh_dir("eval_empty");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.ppo.total_steps = 0;
    const TrainResult res = cmd_train(cfg);
    const EvalReport report = cmd_eval(res.final_checkpoint, cfg, 0, (dir / "eval").string());
    REQUIRE(report.episodes.empty());
    const std::string csv = slurp(dir / "eval" / "eval.csv");
    REQUIRE(csv.find('\n') == csv.size() - 1);
    REQUIRE(fs::exists(dir / "eval" / "summary.json"));
}

TEST_CASE("a zero-weight policy stays put and reports the goal distance") {
    const fs::path dir = fresh_dir("eval_zero_policy");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.episode.start_min = cfg.episode.start_max = 0.0; // rest at the origin
    cfg.ppo.total_steps = 0;
    const TrainResult res = cmd_train(cfg);

    auto [net, meta] = neural::load_checkpoint(res.final_checkpoint);
    for (neural::Param& p : net.params().params) {
        if (p.name != "log_std") std::fill(p.value.begin(), p.value.end(), 0.0);
    }
    const std::string zero_ckpt = (dir / "zero.txt").string();
    neural::save_checkpoint(zero_ckpt, net, meta);

    const EvalReport report = cmd_eval(zero_ckpt, cfg, 4, (dir / "eval").string());
    REQUIRE(report.episodes.size() == 4);
    for (const EvalEpisode& e : report.episodes) {
        REQUIRE(e.final_pos_error == Catch::Approx(std::abs(e.goal)));
        REQUIRE(e.residual_envelope == 0.0);
        REQUIRE(e.settling_step == cfg.episode.horizon); // never in band
        REQUIRE(e.in_band_last100 == 0.0);
        REQUIRE(e.episode_return == Catch::Approx(-double(cfg.episode.horizon)));
    }
}

TEST_CASE("evaluation rejects a checkpoint with a different architecture") {
    const fs::path dir = fresh_dir("eval_mismatch");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.ppo.total_steps = 0;
    const TrainResult res = cmd_train(cfg);
    RunConfig other = cfg;
    other.net_lstm = 16;
    try {
        cmd_eval(res.final_checkpoint, other, 1, (dir / "eval").string());
        FAIL("expected an architecture mismatch error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("lstm=8") != std::string::npos);
        REQUIRE(msg.find("lstm=16") != std::string::npos);
    }
}

TEST_CASE("baseline: shaped moves settle cleaner and take the shaper tail longer") {
    const fs::path dir = fresh_dir("baseline");
    RunConfig cfg = tiny_run((dir / "run").string());
    MoveSpec move; // defaults: 200 mm at 300 mm/s, 4000 mm/s^2
    const auto rows = cmd_baseline(cfg, move, "none,zv,zvd", 1.0,
                                   (dir / "baseline.csv").string());
    REQUIRE(rows.size() == 3);
    const BaselineRow& unshaped = rows[0];
    const BaselineRow& zv = rows[1];
    const BaselineRow& zvd = rows[2];
    REQUIRE(unshaped.residual_envelope_mm > 0.0);
    REQUIRE(zvd.residual_envelope_mm <= 0.01 * unshaped.residual_envelope_mm);
    REQUIRE(zv.residual_envelope_mm <= 0.01 * unshaped.residual_envelope_mm);

    const double half_period = pi / cfg.axis.omega_d();
    REQUIRE(std::abs((zv.duration_s - unshaped.duration_s) - half_period) <=
            cfg.axis.dt_control);
    REQUIRE(std::abs((zvd.duration_s - zv.duration_s) - half_period) <= cfg.axis.dt_control);
    REQUIRE(fs::exists(dir / "baseline.csv"));
}

TEST_CASE("baseline: under frequency mismatch ZVD stays at or below ZV") {
    const fs::path dir = fresh_dir("baseline_mismatch");
    RunConfig cfg = tiny_run((dir / "run").string());
    for (double scale : {0.8, 1.2}) {
        const auto rows = cmd_baseline(cfg, MoveSpec{}, "none,zv,zvd", scale, "");
        REQUIRE(rows[2].residual_envelope_mm <= rows[1].residual_envelope_mm + 1e-12);
        REQUIRE(rows[1].residual_envelope_mm < rows[0].residual_envelope_mm);
    }
}

TEST_CASE("baseline rejects infeasible moves") {
    RunConfig cfg = tiny_run("harness_test_out/baseline_bad");
    MoveSpec fast;
    fast.v_cruise = cfg.axis.v_max + 1.0;
    REQUIRE_THROWS_AS(cmd_baseline(cfg, fast), std::invalid_argument);
    MoveSpec far;
    far.distance = cfg.axis.travel_span() + 1.0;
    REQUIRE_THROWS_AS(cmd_baseline(cfg, far), std::invalid_argument);
    REQUIRE_THROWS_AS(cmd_baseline(cfg, MoveSpec{}, "none,warp"), std::invalid_argument);
}

TEST_CASE("simulate: an all-zero command file gives an all-zero trace") {
    const fs::path dir = fresh_dir("simulate_zero");
    std::ofstream(dir / "cmds.txt") << "0\n0\n0\n0\n";
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.episode.start_min = 0.0;
    cmd_simulate(cfg, (dir / "cmds.txt").string(), (dir / "trace.csv").string());
    std::ifstream in(dir / "trace.csv");
    std::string line;
    std::getline(in, line); // header
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        double t, x, v, y;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &t, &x, &v, &y) == 4);
        REQUIRE(x == 0.0);
        REQUIRE(v == 0.0);
        REQUIRE(y == 0.0);
    }
    REQUIRE(n == 4);
}

TEST_CASE("simulate: a step command follows the lag and oscillator closed forms") {
    const fs::path dir = fresh_dir("simulate_step");
    const double u0 = 100.0;
    {
        std::ofstream cmds(dir / "cmds.txt");
        for (int i = 0; i < 50; ++i) cmds << u0 << "\n";
    }
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.axis.xi = 0.0; // clean closed form for the driven mode
    cfg.episode.start_min = 0.0;
    cmd_simulate(cfg, (dir / "cmds.txt").string(), (dir / "trace.csv").string());

    const double tau = cfg.axis.tau_v;
    const double w = cfg.axis.omega_n;
    const double k = cfg.axis.coupling_k;
    // Driven mode: y'' + w^2 y = -k u0/tau e^{-t/tau} from rest.
    const double amp = -k * u0 * tau / (1.0 + w * w * tau * tau);

    std::ifstream in(dir / "trace.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        double t, x, v, y;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &t, &x, &v, &y) == 4);
        const double v_exact = u0 * (1.0 - std::exp(-t / tau));
        const double x_exact = u0 * (t - tau * (1.0 - std::exp(-t / tau)));
        const double y_exact =
            amp * (std::exp(-t / tau) - std::cos(w * t) + std::sin(w * t) / (tau * w));
        REQUIRE(v == Catch::Approx(v_exact).margin(1e-6 * u0));
        REQUIRE(x == Catch::Approx(x_exact).margin(1e-6 * u0));
        REQUIRE(y == Catch::Approx(y_exact).margin(1e-4 * std::abs(amp)));
    }
}

TEST_CASE("simulate: malformed command files fail with a line number") {
    const fs::path dir = fresh_dir("simulate_bad");
    std::ofstream(dir / "cmds.txt") << "10\nnonsense\n20\n";
    RunConfig cfg = tiny_run((dir / "run").string());
    try {
        cmd_simulate(cfg, (dir / "cmds.txt").string(), (dir / "trace.csv").string());
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("simulate: an empty command file produces an empty trace") {
    const fs::path dir = fresh_dir("simulate_empty");
    std::ofstream(dir / "cmds.txt") << "";
    RunConfig cfg = tiny_run((dir / "run").string());
    cmd_simulate(cfg, (dir / "cmds.txt").string(), (dir / "trace.csv").string());
    const std::string trace = slurp(dir / "trace.csv");
    REQUIRE(trace == "t,x,v,y\n");
}

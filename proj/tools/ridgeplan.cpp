// ridgeplan command-line front end.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ridgeplan/bench.hpp"

using namespace ridgeplan;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;
    bool smoke = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "key=value config file");
        cmd->add_option("--set", sets, "override, e.g. --set trainer.lr=0.001");
        cmd->add_flag("--smoke", smoke, "desk-scale training preset (applied before file and overrides)");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (smoke) cfg.apply_smoke_preset();
        if (!file.empty()) cfg.load_file(file);
        for (const auto& s : sets) cfg.set_assignment(s);
        cfg.finalize();
        return cfg;
    }
};

Cell parse_cell(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw ParameterError("cell must be COL,ROW: '" + s + "'");
    try {
        return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw ParameterError("cell must be COL,ROW: '" + s + "'");
    }
}

std::vector<Task> tasks_from(const bench::MapSet& maps, const std::string& file, int count, std::uint64_t seed) {
    if (!file.empty()) return bench::load_tasks(maps, file);
    return bench::random_tasks(maps, count, seed);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"2.5D terrain path planning: attention deep-Q planner, baselines and benchmarks"};
    app.require_subcommand(1);
    int status = 0;

    // gen-maps
    auto* gen = app.add_subcommand("gen-maps", "generate random terrain maps");
    int count = 50, size = 100;
    double max_h = 5.0;
    std::uint64_t seed = 7;
    std::string out;
    bool force = false;
    gen->add_option("--count", count, "number of maps")->capture_default_str();
    gen->add_option("--size", size, "map side in cells")->capture_default_str();
    gen->add_option("--max-h", max_h, "maximum height in units")->capture_default_str();
    gen->add_option("--seed", seed, "seed of the first map")->capture_default_str();
    gen->add_option("--out", out, "output directory")->required();
    gen->add_flag("--force", force, "allow a non-empty output directory");
    gen->callback([&] {
        bench::gen_maps(count, size, max_h, seed, out, force);
        RunConfig cfg;
        cfg.finalize();
        bench::echo_config(out, cfg, {{"first_seed", seed}, {"count", count}});
        std::cout << "wrote " << count << " maps to " << out << '\n';
    });

    // train
    auto* train = app.add_subcommand("train", "train a Q-network");
    std::string arch = "lopa", maps_path, train_tasks, eval_tasks;
    std::int64_t episodes = 0;
    bool resume = false, verbose = false;
    ConfigArgs train_cfg;
    train->add_option("--arch", arch, "lopa | ldqn | dueling-baseline")
        ->check(CLI::IsMember({"lopa", "ldqn", "dueling-baseline"}))
        ->capture_default_str();
    train->add_option("--maps", maps_path, "map directory or map file")->required();
    train->add_option("--episodes", episodes, "total episodes")->required();
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--train-tasks", train_tasks, "fixed start/goal task file");
    train->add_option("--eval-tasks", eval_tasks, "task file evaluated every trainer.eval_every episodes");
    train->add_flag("--resume", resume, "continue from the checkpoint in --out");
    train->add_flag("--force", force, "allow a non-empty output directory");
    train->add_flag("--verbose", verbose, "print evaluation progress");
    train_cfg.attach(train);
    train->callback([&] {
        RunConfig cfg = train_cfg.resolve();
        const auto maps = bench::load_map_set(maps_path);
        bench::TrainRunOptions opt;
        opt.arch = arch;
        opt.episodes = episodes;
        opt.out = out;
        opt.resume = resume;
        opt.force = force;
        opt.quiet = !verbose;
        if (!train_tasks.empty()) opt.train_tasks = bench::load_tasks(maps, train_tasks);
        if (!eval_tasks.empty()) opt.eval_tasks = bench::load_tasks(maps, eval_tasks);
        for (const auto& t : opt.train_tasks)
            if (t.start == t.goal) throw ParameterError("training task with start equal to goal");
        const auto r = bench::train_run(cfg, maps, opt);
        std::cout << "trained " << arch << " to episode " << r.episodes_done << " in " << r.wall_s << " s\n";
    });

    // eval
    auto* eval = app.add_subcommand("eval", "greedy rollouts of a checkpoint");
    std::string checkpoint, tasks_file, expect_arch;
    int n_tasks = 20;
    std::uint64_t task_seed = 1;
    ConfigArgs eval_cfg;
    eval->add_option("--checkpoint", checkpoint, "checkpoint manifest (.json)")->required();
    eval->add_option("--maps", maps_path, "map directory or map file")->required();
    eval->add_option("--tasks", tasks_file, "task file; random tasks when omitted");
    eval->add_option("--num-tasks", n_tasks, "random task count")->capture_default_str();
    eval->add_option("--task-seed", task_seed, "random task seed")->capture_default_str();
    eval->add_option("--arch", expect_arch, "required checkpoint architecture");
    eval->add_option("--out", out, "output directory")->required();
    eval->add_flag("--force", force, "allow a non-empty output directory");
    eval_cfg.attach(eval);
    eval->callback([&] {
        RunConfig cfg = eval_cfg.resolve();
        auto ck = expect_arch.empty() ? nn::load_checkpoint(checkpoint) : nn::load_checkpoint_expect(checkpoint, expect_arch);
        const auto maps = bench::load_map_set(maps_path);
        const auto tasks = tasks_from(maps, tasks_file, n_tasks, task_seed);
        bench::prepare_out_dir(out, force);
        bench::echo_config(out, cfg, {{"task_seed", task_seed}, {"maps", maps.seed_json()}});
        const auto r = bench::eval_run(ck.net, maps, tasks, cfg.env, fs::path(out) / "eval.csv");
        std::cout << "success rate " << r.success_rate << " over " << r.rows - r.errors << " tasks\n";
        if (r.errors) {
            std::cerr << r.errors << " task(s) rejected\n";
            status = 2;
        }
    });

    // compare
    auto* cmp = app.add_subcommand("compare", "run planners on the same cases");
    std::string methods = "ASTAR,RRT";
    std::vector<std::string> checkpoints;
    int cases_per_map = 1;
    std::uint64_t case_seed = 1;
    ConfigArgs cmp_cfg;
    cmp->add_option("--methods", methods, "comma list of LOPA,LDQN,ASTAR,RRT")->capture_default_str();
    cmp->add_option("--maps", maps_path, "map directory or map file")->required();
    cmp->add_option("--cases", cases_per_map, "cases per map")->capture_default_str();
    cmp->add_option("--case-seed", case_seed, "case generation seed")->capture_default_str();
    cmp->add_option("--case-file", tasks_file, "explicit case list instead of generated cases");
    cmp->add_option("--checkpoint", checkpoints, "METHOD=manifest, e.g. LOPA=run/checkpoint.json");
    cmp->add_option("--out", out, "output directory")->required();
    cmp->add_flag("--force", force, "allow a non-empty output directory");
    cmp_cfg.attach(cmp);
    cmp->callback([&] {
        RunConfig cfg = cmp_cfg.resolve();
        bench::CompareOptions opt;
        std::stringstream ss(methods);
        for (std::string m; std::getline(ss, m, ',');)
            if (!m.empty()) opt.methods.push_back(m);
        for (const auto& c : checkpoints) {
            const auto eq = c.find('=');
            const std::string m = eq == std::string::npos ? "" : c.substr(0, eq);
            if (m == "LOPA") opt.lopa_checkpoint = c.substr(eq + 1);
            else if (m == "LDQN") opt.ldqn_checkpoint = c.substr(eq + 1);
            else throw ConfigError("--checkpoint expects LOPA=... or LDQN=..., got '" + c + "'");
        }
        opt.out = out;
        opt.force = force;
        const auto maps = bench::load_map_set(maps_path);
        const auto cases = tasks_file.empty() ? bench::far_tasks(maps, cases_per_map, case_seed)
                                              : bench::load_tasks(maps, tasks_file);
        const auto r = bench::compare_run(cfg, maps, cases, opt);
        std::cout << r.rows.size() << " rows, " << r.failures << " failed plans\n";
        if (r.failures) status = 3;
    });

    // inspect-obs
    auto* insp = app.add_subcommand("inspect-obs", "dump the global and local views of one state");
    std::string map_file, agent_s, goal_s;
    insp->add_option("--map", map_file, "map file")->required();
    insp->add_option("--agent", agent_s, "COL,ROW")->required();
    insp->add_option("--goal", goal_s, "COL,ROW")->required();
    insp->add_option("--out", out, "output directory")->required();
    insp->add_flag("--force", force, "allow a non-empty output directory");
    insp->callback([&] {
        const TerrainMap map = load_map(map_file);
        bench::inspect_obs(map, parse_cell(agent_s), parse_cell(goal_s), out, force);
        RunConfig cfg;
        cfg.finalize();
        bench::echo_config(out, cfg, nlohmann::json::object());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const CompatibilityError& e) {
        std::cerr << "compatibility error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return status;
}

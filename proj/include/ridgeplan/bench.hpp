#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ridgeplan/attention.hpp"
#include "ridgeplan/config.hpp"
#include "ridgeplan/nn/checkpoint.hpp"
#include "ridgeplan/planners.hpp"
#include "ridgeplan/terrain.hpp"
#include "ridgeplan/trainer.hpp"

namespace ridgeplan::bench {

namespace fs = std::filesystem;
using MapPtr = std::shared_ptr<const TerrainMap>;

// ---- small I/O helpers -------------------------------------------------

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string csv_cell(Cell c) { return "\"" + to_string(c) + "\""; }

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed for " + p.string());
}

inline void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw Error("output directory " + dir.string() + " is not empty (use --force)");
    }
    fs::create_directories(dir);
}

// Resolved config and seeds, written into every output directory.
inline void echo_config(const fs::path& dir, RunConfig& cfg, const nlohmann::json& seeds) {
    write_text(dir / "config.txt", cfg.dump());
    write_text(dir / "seeds.json", seeds.dump(2) + "\n");
}

// ---- map sets -----------------------------------------------------------

struct MapSet {
    std::vector<MapPtr> maps;
    std::vector<std::string> ids;    // file stems
    std::vector<std::string> files;  // paths as given
    std::vector<std::int64_t> seeds; // -1 when unknown

    nlohmann::json seed_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (std::size_t i = 0; i < ids.size(); ++i) j.push_back({{"id", ids[i]}, {"seed", seeds[i]}});
        return j;
    }
};

inline std::string map_file_name(std::uint64_t seed) { return "map_" + std::to_string(seed) + ".json"; }

// Writes maps for seeds seed..seed+count-1 and a manifest listing them.
inline std::vector<fs::path> gen_maps(int count, int size, double max_h, std::uint64_t seed,
                                      const fs::path& out, bool force) {
    if (count < 1) throw ParameterError("gen-maps: count must be >= 1");
    prepare_out_dir(out, force);
    nlohmann::json manifest{{"version", 1}, {"size", size}, {"max_h", max_h}, {"maps", nlohmann::json::array()}};
    std::vector<fs::path> written;
    for (int i = 0; i < count; ++i) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
        const TerrainMap m = generate(s, size, size, max_h);
        const fs::path p = out / map_file_name(s);
        save_map(m, p.string());
        manifest["maps"].push_back({{"file", p.filename().string()}, {"seed", s}});
        written.push_back(p);
    }
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    return written;
}

// `path` is a directory holding manifest.json, or a single map file.
inline MapSet load_map_set(const fs::path& path) {
    MapSet set;
    auto add = [&](const fs::path& file, std::int64_t seed) {
        set.maps.push_back(std::make_shared<const TerrainMap>(load_map(file.string())));
        set.ids.push_back(file.stem().string());
        set.files.push_back(file.string());
        set.seeds.push_back(seed);
    };
    if (fs::is_directory(path)) {
        std::ifstream in(path / "manifest.json");
        if (!in) throw FormatError(path.string() + ": no manifest.json");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path.string() + "/manifest.json: " + e.what());
        }
        if (!j.contains("maps") || !j["maps"].is_array()) throw FormatError(path.string() + ": manifest lacks 'maps'");
        for (const auto& e : j["maps"]) add(path / e.at("file").get<std::string>(), e.value("seed", std::int64_t{-1}));
    } else {
        add(path, -1);
    }
    if (set.maps.empty()) throw FormatError(path.string() + ": no maps");
    return set;
}

// ---- task lists ---------------------------------------------------------

inline constexpr const char* kTaskHeader = "map,start_col,start_row,goal_col,goal_row";

inline std::vector<Task> random_tasks(const MapSet& set, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Task> out;
    for (int i = 0; i < n; ++i) out.push_back(random_task(set.maps, rng));
    return out;
}

// Start/goal pairs at least `min_frac` of the map side apart (Chebyshev).
inline std::vector<Task> far_tasks(const MapSet& set, int per_map, std::uint64_t seed, double min_frac = 0.5) {
    Rng rng(seed);
    std::vector<Task> out;
    for (std::size_t mi = 0; mi < set.maps.size(); ++mi) {
        const auto& m = set.maps[mi];
        const int need = static_cast<int>(min_frac * std::min(m->width(), m->height()));
        for (int k = 0; k < per_map; ++k) {
            Task t{m, {}, {}, static_cast<int>(mi)};
            do {
                t.start = {uniform_int(rng, 0, m->width() - 1), uniform_int(rng, 0, m->height() - 1)};
                t.goal = {uniform_int(rng, 0, m->width() - 1), uniform_int(rng, 0, m->height() - 1)};
            } while (chebyshev(t.start, t.goal) < std::max(1, need));
            out.push_back(t);
        }
    }
    return out;
}

inline void save_tasks(const std::vector<Task>& tasks, const fs::path& p) {
    std::ostringstream os;
    os << kTaskHeader << '\n';
    for (const Task& t : tasks)
        os << t.map_index << ',' << t.start.col << ',' << t.start.row << ',' << t.goal.col << ',' << t.goal.row << '\n';
    write_text(p, os.str());
}

// Cells are bounds-checked here; start == goal is left for the caller to
// report per row.
inline std::vector<Task> load_tasks(const MapSet& set, const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open task file " + p.string());
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTaskHeader) throw FormatError(p.string() + ": header must be '" + std::string(kTaskHeader) + "'");
    std::vector<Task> out;
    for (int no = 2; std::getline(in, line); ++no) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<int> v;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stoi(f, &used));
                if (used != f.size()) throw std::invalid_argument(f);
            } catch (const std::exception&) {
                throw FormatError(p.string() + ":" + std::to_string(no) + ": bad integer '" + f + "'");
            }
        }
        if (v.size() != 5) throw FormatError(p.string() + ":" + std::to_string(no) + ": expected 5 fields");
        if (v[0] < 0 || v[0] >= static_cast<int>(set.maps.size()))
            throw FormatError(p.string() + ":" + std::to_string(no) + ": map index out of range");
        Task t{set.maps[v[0]], {v[1], v[2]}, {v[3], v[4]}, v[0]};
        t.map->check_bounds(t.start);
        t.map->check_bounds(t.goal);
        out.push_back(t);
    }
    return out;
}

// ---- training -----------------------------------------------------------

inline constexpr const char* kTrainHeader = "episode,return,steps,success,mean_loss,p_random,p_heuristic,p_policy";
inline constexpr const char* kCurveHeader = "episode,success_rate,mean_return,mean_steps";

struct TrainRunOptions {
    std::string arch = "lopa";
    std::int64_t episodes = 0;      // total episode count, resumed runs included
    fs::path out;
    bool resume = false;
    bool force = false;
    std::vector<Task> train_tasks;  // empty -> random tasks on the map set
    std::vector<Task> eval_tasks;   // evaluated every eval_every episodes
    // Called after each evaluation; returning true stops training early.
    std::function<bool(std::int64_t episode, const EvalReport&)> on_eval;
    bool quiet = true;
};

struct TrainRunResult {
    std::int64_t episodes_done = 0;
    std::optional<EvalReport> last_eval;
    double wall_s = 0.0;
};

inline fs::path checkpoint_path(const fs::path& out) { return out / "checkpoint.json"; }

inline TrainRunResult train_run(RunConfig& cfg, const MapSet& maps, const TrainRunOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const nn::ArchSpec arch = nn::arch_by_name(opt.arch);
    if (opt.episodes <= 0) throw ConfigError("train: episode count must be positive");
    cfg.train.max_episodes = opt.episodes;
    cfg.finalize();

    std::int64_t start_episode = 0;
    std::optional<nn::LoadedCheckpoint> ck;
    if (opt.resume) {
        ck = nn::load_checkpoint_expect(checkpoint_path(opt.out), opt.arch);
        start_episode = ck->meta.at("episode").get<std::int64_t>();
        if (start_episode > opt.episodes) throw ConfigError("train: checkpoint is past the requested episode count");
    } else {
        prepare_out_dir(opt.out, opt.force);
    }
    echo_config(opt.out, cfg, {{"trainer.seed", cfg.train.seed}, {"maps", maps.seed_json()}});

    Trainer trainer(arch, cfg.train, cfg.env, cfg.replay, maps.maps, opt.train_tasks);
    if (ck) trainer.resume_from(ck->net, start_episode, ck->meta.value("gradient_steps", std::int64_t{0}));

    // Keep training rows written before the checkpoint, drop the rest.
    std::vector<std::string> kept;
    if (opt.resume) {
        std::ifstream in(opt.out / "training.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line))
            if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < start_episode) kept.push_back(line);
    }
    std::ofstream log(opt.out / "training.csv", std::ios::trunc);
    log << kTrainHeader << '\n';
    for (const auto& l : kept) log << l << '\n';
    const bool had_curve = opt.resume && fs::exists(opt.out / "eval_curve.csv");
    std::ofstream curve(opt.out / "eval_curve.csv", std::ios::app);
    if (!had_curve) curve << kCurveHeader << '\n';

    TrainRunResult res;
    auto save = [&](std::int64_t ep) {
        nn::save_checkpoint(trainer.online(), checkpoint_path(opt.out),
                            {{"episode", ep}, {"gradient_steps", trainer.gradient_steps()}, {"arch", opt.arch}});
    };
    for (std::int64_t ep = start_episode; ep < opt.episodes; ++ep) {
        const EpisodeReport r = trainer.train_episode();
        log << r.episode << ',' << fmt(r.episode_return) << ',' << r.steps << ',' << (r.success ? 1 : 0) << ','
            << fmt(r.mean_loss) << ',' << fmt(r.probs.random) << ',' << fmt(r.probs.heuristic) << ','
            << fmt(r.probs.policy) << '\n';
        res.episodes_done = ep + 1;
        if ((ep + 1) % cfg.train.eval_every == 0 || ep + 1 == opt.episodes) {
            log.flush();
            save(ep + 1);
            if (!opt.eval_tasks.empty()) {
                res.last_eval = evaluate_policy(trainer.online(), opt.eval_tasks, cfg.env);
                curve << ep + 1 << ',' << fmt(res.last_eval->success_rate) << ',' << fmt(res.last_eval->mean_return)
                      << ',' << fmt(res.last_eval->mean_steps) << '\n';
                curve.flush();
                if (!opt.quiet)
                    std::cerr << opt.arch << " episode " << ep + 1 << " eval success " << res.last_eval->success_rate
                              << '\n';
                if (opt.on_eval && opt.on_eval(ep + 1, *res.last_eval)) break;
            }
        }
    }
    res.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---- evaluation ---------------------------------------------------------

inline constexpr const char* kEvalHeader = "task,map,start,goal,success,return,steps,energy_u,distance_m,sum,error";

struct EvalRunResult {
    int rows = 0;
    int errors = 0;
    double success_rate = 0.0;
};

inline EvalRunResult eval_run(nn::QNetwork<float>& net, const MapSet& maps, const std::vector<Task>& tasks,
                              const EnvParams& env, const fs::path& csv) {
    std::ostringstream os;
    os << kEvalHeader << '\n';
    EvalRunResult res;
    int ok = 0, valid = 0;
    double ret = 0, steps = 0, energy = 0, dist = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Task& t = tasks[i];
        os << i << ',' << maps.ids[t.map_index] << ',' << csv_cell(t.start) << ',' << csv_cell(t.goal) << ',';
        if (t.start == t.goal) {
            os << "0,,,,,,start equals goal\n";
            ++res.errors;
            ++res.rows;
            continue;
        }
        const RolloutResult r = policy_rollout(net, t, env);
        const PathMetrics m = r.cells.size() > 1 ? path_metrics(*t.map, r.cells, env) : PathMetrics{};
        os << (r.success ? 1 : 0) << ',' << fmt(r.episode_return) << ',' << r.steps << ',' << fmt(m.energy_u) << ','
           << fmt(m.distance_m) << ',' << fmt(m.sum) << ",\n";
        ++valid;
        ok += r.success;
        ret += r.episode_return;
        steps += r.steps;
        energy += m.energy_u;
        dist += m.distance_m;
        ++res.rows;
    }
    const double n = std::max(1, valid);
    res.success_rate = ok / n;
    os << "all,,,," << fmt(res.success_rate) << ',' << fmt(ret / n) << ',' << fmt(steps / n) << ',' << fmt(energy / n)
       << ',' << fmt(dist / n) << ',' << fmt((energy + dist) / n) << ',' << (res.errors ? std::to_string(res.errors) + " rejected" : "")
       << '\n';
    write_text(csv, os.str());
    return res;
}

// ---- planner comparison -------------------------------------------------

inline constexpr const char* kCompareHeader =
    "method,map_id,case_id,start,goal,energy_u,distance_m,sum,time_s,steps,success";

struct CompareRow {
    std::string method;
    std::string map_id;
    int case_id = 0;
    Cell start;
    Cell goal;
    double energy_u = 0.0;
    double distance_m = 0.0;
    double sum = 0.0;
    double time_s = 0.0;
    int steps = 0;
    bool success = false;

    void validate() const {
        static const std::vector<std::string> methods{"LOPA", "LDQN", "ASTAR", "RRT"};
        if (std::find(methods.begin(), methods.end(), method) == methods.end())
            throw FormatError("compare row: unknown method '" + method + "'");
        if (map_id.empty() || map_id.find_first_of(",\"\n") != std::string::npos)
            throw FormatError("compare row: bad map id '" + map_id + "'");
        if (case_id < 0 || steps < 0 || !(time_s >= 0) || !(energy_u >= 0) || !(distance_m >= 0) ||
            !(sum >= 0) || std::abs(sum - (energy_u + distance_m)) > 1e-6 * std::max(1.0, sum))
            throw FormatError("compare row: inconsistent values for " + method + " case " + std::to_string(case_id));
    }

    std::string csv() const {
        validate();
        std::ostringstream os;
        os << method << ',' << map_id << ',' << case_id << ',' << csv_cell(start) << ',' << csv_cell(goal) << ','
           << fmt(energy_u) << ',' << fmt(distance_m) << ',' << fmt(sum) << ',' << fmt(time_s) << ',' << steps << ','
           << (success ? 1 : 0);
        return os.str();
    }
};

struct CompareOptions {
    std::vector<std::string> methods;  // LOPA, LDQN, ASTAR, RRT
    std::optional<fs::path> lopa_checkpoint;
    std::optional<fs::path> ldqn_checkpoint;
    fs::path out;
    bool force = false;
};

struct CompareResult {
    std::vector<CompareRow> rows;
    int failures = 0;
};

inline CompareResult compare_run(RunConfig& cfg, const MapSet& maps, const std::vector<Task>& cases,
                                 const CompareOptions& opt) {
    cfg.finalize();
    std::optional<nn::LoadedCheckpoint> lopa, ldqn;
    for (const auto& m : opt.methods) {
        if (m == "LOPA") {
            if (!opt.lopa_checkpoint) throw ConfigError("compare: LOPA needs a checkpoint");
            lopa = nn::load_checkpoint_expect(*opt.lopa_checkpoint, "lopa");
        } else if (m == "LDQN") {
            if (!opt.ldqn_checkpoint) throw ConfigError("compare: LDQN needs a checkpoint");
            ldqn = nn::load_checkpoint_expect(*opt.ldqn_checkpoint, "ldqn");
        } else if (m != "ASTAR" && m != "RRT") {
            throw ConfigError("compare: unknown method '" + m + "'");
        }
    }
    prepare_out_dir(opt.out, opt.force);
    fs::create_directories(opt.out / "paths");
    fs::create_directories(opt.out / "curves");
    echo_config(opt.out, cfg, {{"planners.rrt_seed", cfg.rrt_seed}, {"maps", maps.seed_json()}});
    save_tasks(cases, opt.out / "cases.csv");

    CompareResult res;
    std::vector<int> case_no(maps.maps.size(), 0);
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const Task& t = cases[ci];
        const int case_id = case_no[t.map_index]++;
        const TerrainMap& map = *t.map;
        for (const auto& method : opt.methods) {
            PlanResult pr;
            try {
                if (method == "ASTAR") pr = astar_plan(map, t.start, t.goal, cfg.env);
                else if (method == "RRT") pr = rrt_plan(map, t.start, t.goal, cfg.rrt_seed + ci, cfg.env, cfg.rrt);
                else pr = policy_plan(method == "LOPA" ? lopa->net : ldqn->net, t, cfg.env);
            } catch (const Error&) {
                pr = PlanResult{};
            }
            CompareRow row{method, maps.ids[t.map_index], case_id, t.start, t.goal};
            row.time_s = pr.time_s;
            row.success = pr.success;
            if (pr.success && pr.path) {
                row.energy_u = pr.energy_u;
                row.distance_m = pr.distance_m;
                row.sum = pr.sum;
                row.steps = static_cast<int>(pr.path->per_step.size());
                const std::string stem = method + "_" + row.map_id + "_" + std::to_string(case_id);
                write_text(opt.out / "paths" / (stem + ".json"),
                           path_to_json(maps.files[t.map_index], t.start, t.goal, *pr.path).dump() + "\n");
                std::ostringstream cv;
                cv << "step,cum_energy_u,cum_distance_m\n0,0,0\n";
                double ce = 0, cd = 0;
                for (std::size_t k = 0; k < pr.path->per_step.size(); ++k) {
                    ce += pr.path->per_step[k].energy_u;
                    cd += pr.path->per_step[k].distance_m;
                    cv << k + 1 << ',' << fmt(ce) << ',' << fmt(cd) << '\n';
                }
                write_text(opt.out / "curves" / (stem + ".csv"), cv.str());
            } else {
                ++res.failures;
            }
            res.rows.push_back(row);
        }
    }
    std::ostringstream os;
    os << kCompareHeader << '\n';
    for (const auto& r : res.rows) os << r.csv() << '\n';
    write_text(opt.out / "compare.csv", os.str());
    return res;
}

// ---- observation dumps --------------------------------------------------

inline void write_grid(const fs::path& p, const std::vector<float>& v, int rows, int cols, std::size_t offset = 0) {
    std::ostringstream os;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) os << ',';
            os << v[offset + static_cast<std::size_t>(r) * cols + c];
        }
        os << '\n';
    }
    write_text(p, os.str());
}

inline void inspect_obs(const TerrainMap& map, Cell agent, Cell goal, const fs::path& out, bool force) {
    map.check_bounds(agent);
    map.check_bounds(goal);
    const std::vector<float> g = build_global_view(map, agent, goal);
    const std::vector<float> l = build_local_view(map, agent);
    prepare_out_dir(out, force);
    const std::size_t layer = static_cast<std::size_t>(kCanvas) * kCanvas;
    write_grid(out / "global_terrain.csv", g, kCanvas, kCanvas, 0);
    write_grid(out / "global_agent.csv", g, kCanvas, kCanvas, layer);
    write_grid(out / "global_goal.csv", g, kCanvas, kCanvas, 2 * layer);
    write_grid(out / "local.csv", l, kLocal, kLocal);
    const Rect r = attention_rect(map, agent, goal);
    const Cell off = canvas_offset(r);
    nlohmann::json j{{"agent", {agent.col, agent.row}},
                     {"goal", {goal.col, goal.row}},
                     {"rect", {{"col_min", r.col_min}, {"row_min", r.row_min}, {"col_max", r.col_max}, {"row_max", r.row_max}}},
                     {"canvas_offset", {off.col, off.row}}};
    write_text(out / "rect.json", j.dump(2) + "\n");
}

}  // namespace ridgeplan::bench

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ridgeplan/common.hpp"
#include "ridgeplan/env.hpp"
#include "ridgeplan/planners.hpp"
#include "ridgeplan/replay.hpp"
#include "ridgeplan/trainer.hpp"

namespace ridgeplan {

// Every tunable constant under a dotted key. Files are `key = value` lines,
// '#' starts a comment.
struct RunConfig {
    EnvParams env;
    TrainConfig train;
    ReplayParams replay;
    RrtParams rrt;
    std::uint64_t rrt_seed = 1;
    std::string schedule_preset = "table";  // "table" or "prose"

    static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t keys are stored as uint64");
    using Slot = std::variant<double*, int*, std::int64_t*, std::uint64_t*, std::string*>;

    std::vector<std::pair<std::string, Slot>> fields() {
        auto& s = train.schedule;
        return {
            {"env.k1", &env.k1},
            {"env.k2_up", &env.k2_up},
            {"env.k3_down", &env.k3_down},
            {"env.w_d", &env.w_d},
            {"env.w_e", &env.w_e},
            {"env.r_goal", &env.r_goal},
            {"env.invalid_penalty", &env.invalid_penalty},
            {"env.max_steps", &env.max_steps},
            {"trainer.lr", &train.lr},
            {"trainer.gamma", &train.gamma},
            {"trainer.batch", &train.batch},
            {"trainer.max_episodes", &train.max_episodes},
            {"trainer.batches_per_training", &train.batches_per_training},
            {"trainer.n_success", &train.n_success},
            {"trainer.target_sync_every", &train.target_sync_every},
            {"trainer.eval_every", &train.eval_every},
            {"trainer.huber_delta", &train.huber_delta},
            {"trainer.grad_clip", &train.grad_clip},
            {"trainer.beta0", &train.beta0},
            {"trainer.beta1", &train.beta1},
            {"trainer.success_capacity", &train.success_capacity},
            {"trainer.seed", &train.seed},
            {"trainer.schedule.preset", &schedule_preset},
            {"trainer.schedule.p_random0", &s.p_random0},
            {"trainer.schedule.p_heuristic0", &s.p_heuristic0},
            {"trainer.schedule.p_policy0", &s.p_policy0},
            {"trainer.schedule.p_policy_final", &s.p_policy_final},
            {"trainer.schedule.decay_fraction", &s.decay_fraction},
            {"trainer.schedule.max_episodes", &s.max_episodes},
            {"replay.capacity", &replay.capacity},
            {"replay.alpha", &replay.alpha},
            {"replay.priority_eps", &replay.priority_eps},
            {"planners.rrt_goal_bias", &rrt.goal_bias},
            {"planners.rrt_accept_scale", &rrt.accept_scale},
            {"planners.rrt_max_step", &rrt.max_step},
            {"planners.rrt_max_iterations", &rrt.max_iterations},
            {"planners.rrt_seed", &rrt_seed},
        };
    }

    std::vector<std::string> keys() {
        std::vector<std::string> out;
        for (auto& [k, _] : fields()) out.push_back(k);
        return out;
    }

    // Raw assignment; finalize() afterwards applies presets and checks.
    void set(const std::string& key, const std::string& value) {
        for (auto& [k, slot] : fields()) {
            if (k != key) continue;
            std::visit([&](auto* p) { parse_into(key, value, *p); }, slot);
            explicit_.insert(key);
            return;
        }
        throw ConfigError("unknown config key '" + key + "'");
    }

    std::string get(const std::string& key) {
        for (auto& [k, slot] : fields())
            if (k == key) return std::visit([](auto* p) { return format(*p); }, slot);
        throw ConfigError("unknown config key '" + key + "'");
    }

    // `key=value` form used by --set.
    void set_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        std::string line;
        for (int no = 1; std::getline(in, line); ++no) {
            if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
            line = trim(line);
            if (line.empty()) continue;
            try {
                set_assignment(line);
            } catch (const ConfigError& e) {
                throw ConfigError(path + ":" + std::to_string(no) + ": " + e.what());
            }
        }
    }

    // Applies the schedule preset, the RIDGEPLAN_SEED override and range checks.
    void finalize() {
        if (schedule_preset == "prose") {
            const auto p = ExplorationSchedule::prose_variant(train.schedule.max_episodes);
            const std::pair<const char*, double> preset[] = {{"trainer.schedule.p_random0", p.p_random0},
                                                             {"trainer.schedule.p_heuristic0", p.p_heuristic0},
                                                             {"trainer.schedule.p_policy0", p.p_policy0},
                                                             {"trainer.schedule.p_policy_final", p.p_policy_final}};
            // A resolved dump repeats the preset values, which is fine.
            for (const auto& [k, v] : preset)
                if (explicit_.count(k) && std::stod(get(k)) != v)
                    throw ConfigError(std::string("conflict: ") + k + " contradicts trainer.schedule.preset=prose");
            train.schedule.p_random0 = p.p_random0;
            train.schedule.p_heuristic0 = p.p_heuristic0;
            train.schedule.p_policy0 = p.p_policy0;
            train.schedule.p_policy_final = p.p_policy_final;
        } else if (schedule_preset != "table") {
            throw ConfigError("trainer.schedule.preset must be 'table' or 'prose', got '" + schedule_preset + "'");
        }
        if (const char* env_seed = std::getenv("RIDGEPLAN_SEED"); env_seed && *env_seed)
            parse_into("RIDGEPLAN_SEED", env_seed, train.seed);
        if (env.k1 < 0 || env.k2_up < 0 || env.k3_down < 0 || env.w_d < 0 || env.w_e < 0 || env.max_steps <= 0)
            throw ConfigError("env constants out of range");
        if (replay.capacity == 0 || replay.alpha < 0 || !(replay.priority_eps > 0))
            throw ConfigError("replay constants out of range");
        if (rrt.goal_bias < 0 || rrt.goal_bias > 1 || !(rrt.accept_scale > 0) || rrt.max_step < 1 ||
            rrt.max_iterations < 1)
            throw ConfigError("planner constants out of range");
        train.validate();
    }

    std::string dump() {
        std::ostringstream os;
        for (auto& [k, slot] : fields()) os << k << " = " << std::visit([](auto* p) { return format(*p); }, slot) << '\n';
        return os.str();
    }

    // Desk-scale training settings used for the small-map smoke runs.
    void apply_smoke_preset() {
        train.batch = 32;
        train.batches_per_training = 4;
        train.n_success = 3;
        train.target_sync_every = 200;
        train.lr = 5e-4;
        train.schedule.max_episodes = 1000;
    }

private:
    std::set<std::string> explicit_;

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    template <typename T>
    static void parse_into(const std::string& key, const std::string& v, T& out) {
        if constexpr (std::is_same_v<T, std::string>) {
            out = v;
        } else {
            T tmp{};
            const auto* end = v.data() + v.size();
            auto [ptr, ec] = std::from_chars(v.data(), end, tmp);
            if (v.empty() || ec != std::errc() || ptr != end)
                throw ConfigError("value '" + v + "' for " + key + " is not a valid " +
                                  (std::is_floating_point_v<T> ? "number" : "integer"));
            if constexpr (std::is_floating_point_v<T>)
                if (!std::isfinite(tmp)) throw ConfigError("value for " + key + " must be finite");
            out = tmp;
        }
    }

    template <typename T>
    static std::string format(const T& v) {
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_floating_point_v<T>) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        } else {
            return std::to_string(v);
        }
    }
};

}  // namespace ridgeplan

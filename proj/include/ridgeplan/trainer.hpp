#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ridgeplan/attention.hpp"
#include "ridgeplan/common.hpp"
#include "ridgeplan/env.hpp"
#include "ridgeplan/nn/boxed.hpp"
#include "ridgeplan/nn/network.hpp"
#include "ridgeplan/planners.hpp"
#include "ridgeplan/replay.hpp"
#include "ridgeplan/terrain.hpp"

namespace ridgeplan {

struct ActionProbs {
    double random = 0.0;
    double heuristic = 0.0;
    double policy = 0.0;
};

// Three-way mixture, linearly interpolated from the initial to the final
// probabilities over the first `decay_fraction * max_episodes` episodes.
// The final non-policy mass is split equally between random and heuristic.
struct ExplorationSchedule {
    double p_random0 = 0.4;
    double p_heuristic0 = 0.4;
    double p_policy0 = 0.2;
    double p_policy_final = 0.99;
    double decay_fraction = 0.8;
    std::int64_t max_episodes = 50000;

    // Alternative start: 0.5/0.5/0 easing to 0.01/0.01/0.98.
    static ExplorationSchedule prose_variant(std::int64_t max_episodes) {
        return {0.5, 0.5, 0.0, 0.98, 0.8, max_episodes};
    }

    double horizon() const { return decay_fraction * static_cast<double>(max_episodes); }

    ActionProbs probs(std::int64_t episode) const {
        if (episode < 0) throw ParameterError("schedule: negative episode");
        const double h = horizon();
        const double t = h <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(episode) / h);
        const double rest = (1.0 - p_policy_final) / 2.0;
        ActionProbs p;
        p.random = (1.0 - t) * p_random0 + t * rest;
        p.policy = (1.0 - t) * p_policy0 + t * p_policy_final;
        p.heuristic = 1.0 - p.random - p.policy;
        // Nudge the heuristic share until random + heuristic + policy == 1
        // holds exactly in left-to-right double arithmetic.
        for (int i = 0; i < 8 && p.random + p.heuristic + p.policy != 1.0; ++i) {
            const double s = p.random + p.heuristic + p.policy;
            p.heuristic = std::nextafter(p.heuristic, s > 1.0 ? 0.0 : 1.0);
        }
        return p;
    }
};

struct TrainConfig {
    double lr = 0.0005;
    double gamma = 0.99;
    int batch = 128;
    std::int64_t max_episodes = 50000;
    int batches_per_training = 20;
    int n_success = 10;
    std::int64_t target_sync_every = 2000;
    std::int64_t eval_every = 250;
    double huber_delta = 1.0;
    double grad_clip = 10.0;
    double beta0 = 0.4;
    double beta1 = 1.0;
    std::size_t success_capacity = 5000;
    std::uint64_t seed = 1;
    ExplorationSchedule schedule;

    void validate() const {
        if (!(lr > 0) || !(gamma > 0 && gamma <= 1) || batch <= 0 || max_episodes <= 0 ||
            batches_per_training <= 0 || n_success < 0 || n_success > batch ||
            target_sync_every <= 0 || eval_every <= 0 || !(huber_delta > 0) || !(grad_clip > 0))
            throw ConfigError("trainer configuration out of range");
        if (schedule.p_random0 < 0 || schedule.p_heuristic0 < 0 || schedule.p_policy0 < 0 ||
            std::abs(schedule.p_random0 + schedule.p_heuristic0 + schedule.p_policy0 - 1.0) > 1e-9 ||
            schedule.p_policy_final < 0 || schedule.p_policy_final > 1 || schedule.decay_fraction < 0)
            throw ConfigError("exploration schedule probabilities must form a distribution");
    }
};

// One start/goal query on a map.
struct Task {
    std::shared_ptr<const TerrainMap> map;
    Cell start;
    Cell goal;
    int map_index = 0;
};

struct Transition {
    EnvState obs;
    int action = 0;
    double reward = 0.0;
    EnvState next;
    bool terminal = false;       // goal reached; time-outs still bootstrap
    bool goal_episode = false;   // set on copies kept in the success buffer
};

// Writes the network input for each state into `batch`, according to which
// channels the architecture has.
// The global view goes through the boxed route unless `dense_global`.
inline void encode_states(const nn::ArchSpec& arch, std::span<const EnvState* const> states,
                          nn::InputBatch<float>& batch, bool dense_global = false) {
    const int n = static_cast<int>(states.size());
    batch.n = n;
    batch.boxed = !dense_global && !arch.global.empty();
    const bool full_map = arch.name == "dueling-baseline";
    if (batch.boxed) {
        if (!(arch.global_input() == nn::Shape{kGlobalLayers, kCanvas, kCanvas}))
            throw ArchitectureError("global view size does not match network input");
        std::vector<nn::Box> boxes(n);
        std::vector<Rect> rects(n);
        for (int i = 0; i < n; ++i) {
            const EnvState& s = *states[i];
            detail::check_canvas_fit(*s.map);
            rects[i] = full_map ? Rect{0, 0, s.map->width() - 1, s.map->height() - 1}
                                : attention_rect(*s.map, s.agent, s.goal);
            const Cell off = canvas_offset(rects[i]);
            boxes[i] = {off.row, off.row + rects[i].height(), off.col, off.col + rects[i].width()};
        }
        auto& g = batch.global_boxed;
        g.allocate(n, arch.global_input(), std::move(boxes));
        for (int i = 0; i < n; ++i) {
            const EnvState& s = *states[i];
            const Rect& r = rects[i];
            float* blk = g.block(i);
            const std::size_t area = static_cast<std::size_t>(r.width()) * r.height();
            for (int row = r.row_min; row <= r.row_max; ++row)
                for (int col = r.col_min; col <= r.col_max; ++col)
                    blk[static_cast<std::size_t>(row - r.row_min) * r.width() + (col - r.col_min)] =
                        detail::normalized(*s.map, {col, row});
            blk[area + static_cast<std::size_t>(s.agent.row - r.row_min) * r.width() + (s.agent.col - r.col_min)] = 1.0f;
            blk[2 * area + static_cast<std::size_t>(s.goal.row - r.row_min) * r.width() + (s.goal.col - r.col_min)] = 1.0f;
        }
    } else if (!arch.global.empty()) {
        batch.global.resize(n, arch.global_input());
        for (int i = 0; i < n; ++i) {
            const EnvState& s = *states[i];
            const auto view = full_map ? build_full_map_view(*s.map, s.agent, s.goal)
                                       : build_global_view(*s.map, s.agent, s.goal);
            if (view.size() != batch.global.stride())
                throw ArchitectureError("global view size does not match network input");
            std::copy(view.begin(), view.end(), batch.global.sample(i));
        }
    }
    if (!arch.local.empty()) {
        batch.local.resize(n, arch.local_input());
        for (int i = 0; i < n; ++i) {
            const auto view = build_local_view(*states[i]->map, states[i]->agent);
            if (view.size() != batch.local.stride())
                throw ArchitectureError("local view size does not match network input");
            std::copy(view.begin(), view.end(), batch.local.sample(i));
        }
    }
    if (arch.scalar_features) {
        if (arch.scalar_features != 3) throw ArchitectureError("scalar features must be 3");
        batch.scalars.resize(n, nn::Shape{3, 1, 1});
        for (int i = 0; i < n; ++i) {
            const GoalFeatures f = goal_features(states[i]->agent, states[i]->goal);
            float* dst = batch.scalars.sample(i);
            dst[0] = static_cast<float>(f.distance / kCanvas);
            dst[1] = static_cast<float>(f.dir_col);
            dst[2] = static_cast<float>(f.dir_row);
        }
    }
}

inline int argmax_action(std::span<const float> q) {
    return static_cast<int>(std::max_element(q.begin(), q.begin() + kNumActions) - q.begin());
}

inline std::array<float, kNumActions> q_values(nn::QNetwork<float>& net, const EnvState& s) {
    nn::InputBatch<float> in;
    const EnvState* ptr = &s;
    encode_states(net.arch(), std::span<const EnvState* const>(&ptr, 1), in);
    const auto& q = net.forward(in);
    std::array<float, kNumActions> out{};
    std::copy_n(q.begin(), kNumActions, out.begin());
    return out;
}

inline Action greedy_action(nn::QNetwork<float>& net, const EnvState& s) {
    const auto q = q_values(net, s);
    return static_cast<Action>(argmax_action(q));
}

inline Action select_action(nn::QNetwork<float>& net, const EnvState& s, const ActionProbs& probs,
                            Rng& rng, const EnvParams& env = {}) {
    const double u = uniform01(rng);
    if (u < probs.random) return static_cast<Action>(uniform_int(rng, 0, kNumActions - 1));
    if (u < probs.random + probs.heuristic) return heuristic_action(*s.map, s.agent, s.goal, env);
    return greedy_action(net, s);
}

// y = r for terminal transitions, else r + gamma * max_a Q_target(next, a).
inline std::vector<double> td_targets(std::span<const Transition* const> batch,
                                      nn::QNetwork<float>& target, double gamma) {
    std::vector<const EnvState*> next;
    for (const Transition* t : batch) next.push_back(&t->next);
    nn::InputBatch<float> in;
    encode_states(target.arch(), next, in);
    const auto& q = target.forward(in);
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Transition& t = *batch[i];
        if (t.terminal || gamma == 0.0) {
            y[i] = t.reward;
            continue;
        }
        const float* row = q.data() + i * kNumActions;
        y[i] = t.reward + gamma * static_cast<double>(*std::max_element(row, row + kNumActions));
    }
    return y;
}

inline void sync_target(nn::QNetwork<float>& online, nn::QNetwork<float>& target) {
    target.copy_params_from(online);
}

struct EpisodeReport {
    std::int64_t episode = 0;
    double episode_return = 0.0;
    int steps = 0;
    bool success = false;
    double mean_loss = 0.0;
    int updates = 0;
    ActionProbs probs;
};

struct RolloutResult {
    std::vector<Cell> cells;  // visited cells, invalid moves excluded
    double episode_return = 0.0;
    int steps = 0;
    bool success = false;
    double time_s = 0.0;
};

// Greedy rollout with no exploration.
inline RolloutResult policy_rollout(nn::QNetwork<float>& net, const Task& task, const EnvParams& env) {
    const auto t0 = std::chrono::steady_clock::now();
    RolloutResult r;
    EnvState s = reset(task.map, task.start, task.goal);
    r.cells.push_back(s.agent);
    while (!is_terminal(s, env)) {
        const StepOutcome o = step(s, greedy_action(net, s), env);
        r.episode_return += o.reward;
        if (o.valid_move) r.cells.push_back(o.next.agent);
        s = o.next;
        ++r.steps;
    }
    r.success = s.agent == task.goal;
    r.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// Plans with the greedy policy and scores the resulting path like the
// classical planners.
inline PlanResult policy_plan(nn::QNetwork<float>& net, const Task& task, const EnvParams& env) {
    const RolloutResult ro = policy_rollout(net, task, env);
    PlanResult r;
    r.time_s = ro.time_s;
    r.nodes_expanded = ro.steps;
    if (ro.success) fill_result(r, *task.map, ro.cells, env);
    return r;
}

struct EvalReport {
    double success_rate = 0.0;
    double mean_return = 0.0;
    double mean_steps = 0.0;
    std::vector<RolloutResult> per_task;
};

inline EvalReport evaluate_policy(nn::QNetwork<float>& net, const std::vector<Task>& tasks,
                                  const EnvParams& env) {
    EvalReport rep;
    if (tasks.empty()) return rep;
    int ok = 0;
    for (const Task& t : tasks) {
        rep.per_task.push_back(policy_rollout(net, t, env));
        const auto& r = rep.per_task.back();
        ok += r.success;
        rep.mean_return += r.episode_return;
        rep.mean_steps += r.steps;
    }
    const double n = static_cast<double>(tasks.size());
    rep.success_rate = ok / n;
    rep.mean_return /= n;
    rep.mean_steps /= n;
    return rep;
}

inline Task random_task(const std::vector<std::shared_ptr<const TerrainMap>>& maps, Rng& rng) {
    if (maps.empty()) throw ParameterError("random_task: no maps");
    const int mi = static_cast<int>(uniform_index(rng, maps.size()));
    const auto& m = maps[mi];
    Task t{m, {}, {}, mi};
    t.start = {uniform_int(rng, 0, m->width() - 1), uniform_int(rng, 0, m->height() - 1)};
    do {
        t.goal = {uniform_int(rng, 0, m->width() - 1), uniform_int(rng, 0, m->height() - 1)};
    } while (t.goal == t.start);
    return t;
}

// Single-threaded episode -> update loop. Bit-reproducible for a fixed
// (seed, config, maps, tasks).
class Trainer {
public:
    Trainer(nn::ArchSpec arch, TrainConfig cfg, EnvParams env, ReplayParams replay,
            std::vector<std::shared_ptr<const TerrainMap>> maps, std::vector<Task> fixed_tasks = {})
        : cfg_(cfg), env_(env), maps_(std::move(maps)), tasks_(std::move(fixed_tasks)),
          online_(arch), target_(arch), replay_(replay), success_(cfg.success_capacity), rng_(cfg.seed) {
        cfg_.validate();
        if (maps_.empty() && tasks_.empty()) throw ParameterError("trainer: no training maps");
        online_.init(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
        sync_target(online_, target_);
    }

    const TrainConfig& config() const { return cfg_; }
    const EnvParams& env() const { return env_; }
    nn::QNetwork<float>& online() { return online_; }
    nn::QNetwork<float>& target() { return target_; }
    const PrioritizedReplay<Transition>& replay() const { return replay_; }
    const SuccessBuffer<Transition>& success_buffer() const { return success_; }
    std::int64_t episode() const { return episode_; }
    std::int64_t gradient_steps() const { return grad_steps_; }
    std::int64_t target_syncs() const { return syncs_; }

    // Continue numbering after a resumed checkpoint.
    // Adam moments and buffers start empty again; the sampler is reseeded
    // from (seed, episode) so a resumed run is itself reproducible.
    void resume_from(nn::QNetwork<float>& weights, std::int64_t episode, std::int64_t grad_steps) {
        online_.copy_params_from(weights);
        episode_ = episode;
        grad_steps_ = grad_steps;
        rng_.seed(cfg_.seed ^ (static_cast<std::uint64_t>(episode) * 0xD1B54A32D192ED03ULL));
        sync_target(online_, target_);
    }

    double beta() const {
        const double t = std::min(1.0, static_cast<double>(episode_) / static_cast<double>(cfg_.max_episodes));
        return cfg_.beta0 + (cfg_.beta1 - cfg_.beta0) * t;
    }

    EpisodeReport train_episode() {
        EpisodeReport rep;
        rep.episode = episode_;
        rep.probs = cfg_.schedule.probs(episode_);

        const Task task = tasks_.empty() ? random_task(maps_, rng_) : tasks_[uniform_index(rng_, tasks_.size())];
        EnvState s = reset(task.map, task.start, task.goal);
        std::vector<Transition> episode;
        while (!is_terminal(s, env_)) {
            const Action a = select_action(online_, s, rep.probs, rng_, env_);
            const StepOutcome o = step(s, a, env_);
            Transition t{s, static_cast<int>(a), o.reward, o.next, o.terminal == Terminal::goal_reached, false};
            replay_.push(t);
            episode.push_back(std::move(t));
            rep.episode_return += o.reward;
            ++rep.steps;
            s = o.next;
        }
        rep.success = s.agent == s.goal;
        if (rep.success) {
            for (auto& t : episode) t.goal_episode = true;
            success_.push_episode(episode);
        }

        double loss_sum = 0.0;
        if (replay_.size() >= static_cast<std::size_t>(cfg_.batch)) {
            for (int b = 0; b < cfg_.batches_per_training; ++b) {
                loss_sum += update();
                ++rep.updates;
            }
        }
        rep.mean_loss = rep.updates ? loss_sum / rep.updates : 0.0;
        ++episode_;
        return rep;
    }

    // One sampled minibatch step; returns the weighted Huber loss.
    double update() {
        auto batch = sample_mixed(replay_, success_, static_cast<std::size_t>(cfg_.batch),
                                  static_cast<std::size_t>(cfg_.n_success), beta(), rng_);
        const std::vector<double> y = td_targets(batch.items, target_, cfg_.gamma);

        std::vector<const EnvState*> obs;
        for (const Transition* t : batch.items) obs.push_back(&t->obs);
        nn::InputBatch<float> in;
        encode_states(online_.arch(), obs, in);
        const auto& q = online_.forward(in);

        const std::size_t n = batch.items.size();
        std::vector<float> dq(n * kNumActions, 0.0f);
        std::vector<double> td(batch.n_prioritized);
        double loss = 0.0;
        const double delta = cfg_.huber_delta;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = batch.items[i]->action;
            const double err = static_cast<double>(q[i * kNumActions + a]) - y[i];
            const double w = batch.weights[i];
            const double abs_err = std::abs(err);
            loss += w * (abs_err <= delta ? 0.5 * err * err : delta * (abs_err - 0.5 * delta));
            dq[i * kNumActions + a] = static_cast<float>(w * std::clamp(err, -delta, delta) / n);
            if (i < batch.n_prioritized) td[i] = err;
        }
        online_.zero_grad();
        online_.backward(dq);
        online_.clip_grad_norm(cfg_.grad_clip);
        online_.adam_step(cfg_.lr);
        replay_.update_priorities(batch.indices, td);
        last_indices_ = batch.indices;
        last_td_ = std::move(td);
        ++grad_steps_;
        if (grad_steps_ % cfg_.target_sync_every == 0) {
            sync_target(online_, target_);
            ++syncs_;
        }
        return loss / static_cast<double>(n);
    }

    // Handles and TD errors of the most recent update's prioritized draws.
    const std::vector<ReplayIndex>& last_indices() const { return last_indices_; }
    const std::vector<double>& last_td_errors() const { return last_td_; }

private:
    TrainConfig cfg_;
    EnvParams env_;
    std::vector<std::shared_ptr<const TerrainMap>> maps_;
    std::vector<Task> tasks_;
    nn::QNetwork<float> online_;
    nn::QNetwork<float> target_;
    PrioritizedReplay<Transition> replay_;
    SuccessBuffer<Transition> success_;
    Rng rng_;
    std::int64_t episode_ = 0;
    std::int64_t grad_steps_ = 0;
    std::int64_t syncs_ = 0;
    std::vector<ReplayIndex> last_indices_;
    std::vector<double> last_td_;
};

}  // namespace ridgeplan

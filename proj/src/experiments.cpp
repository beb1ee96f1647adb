#include "liftnet/experiments.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "liftnet/diagnostics.hpp"
#include "liftnet/errors.hpp"
#include "liftnet/io.hpp"

namespace liftnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stage_prefix(const char* name, const std::exception& e) {
    return std::string("stage ") + name + ": " + e.what();
}

/// Runs one pipeline stage; errors are rethrown with the stage name so a
/// failed bundle names where it stopped.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DimensionError& e) {
        throw DimensionError(stage_prefix(name, e));
    } catch (const ValidationError& e) {
        throw ValidationError(stage_prefix(name, e));
    } catch (const NumericalError& e) {
        throw NumericalError(stage_prefix(name, e));
    }
}

double parse_double_field(const std::string& field, const fs::path& path, std::size_t line) {
    double v = 0.0;
    const char* b = field.data();
    const char* e = b + field.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e)
        throw ValidationError(path.string() + ":" + std::to_string(line) + ": bad value '" +
                              field + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front()))) f.erase(0, 1);
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back()))) f.pop_back();
    }
    return fields;
}

int iris_label(const std::string& field, const fs::path& path, std::size_t line) {
    if (!field.empty() && field.find_first_not_of("012") == std::string::npos && field.size() == 1)
        return field[0] - '0';
    std::string s;
    for (char c : field) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s.rfind("iris-", 0) == 0 || s.rfind("iris_", 0) == 0) s = s.substr(5);
    if (s == "setosa") return 0;
    if (s == "versicolor") return 1;
    if (s == "virginica") return 2;
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": bad class label '" +
                          field + "'");
}

std::string read_binary_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_u32be(const std::string& bytes, std::size_t off) {
    auto b = [&](std::size_t k) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + k]));
    };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

bool params_finite(const NetworkParams& p) {
    for (const auto& w : p.weights)
        if (!all_finite(w)) return false;
    for (const auto& b : p.biases)
        if (!all_finite(b)) return false;
    for (const auto& n : p.bn) {
        if (!n.enabled) continue;
        if (!all_finite(n.gamma) || !all_finite(n.beta)) return false;
    }
    return true;
}

void apply_update(NetworkParams& p, const GradientBundle& g, double lr) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        std::vector<double>& w = p.weights[i].data();
        const std::vector<double>& dw = g.dw[i].data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * dw[k];
        for (std::size_t k = 0; k < p.biases[i].size(); ++k) p.biases[i][k] -= lr * g.db[i][k];
        if (p.bn[i].enabled) {
            for (std::size_t k = 0; k < p.bn[i].gamma.size(); ++k) {
                p.bn[i].gamma[k] -= lr * g.dgamma[i][k];
                p.bn[i].beta[k] -= lr * g.dbeta[i][k];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Bundle writers

std::string csv_cell(double v) { return double_to_string(v); }

void write_trainlog_csv(const fs::path& path, const TrainLog& log) {
    std::map<std::size_t, double> grads;
    for (const auto& g : log.grad_samples) grads[g.epoch] = g.l1;
    std::string out = "epoch,loss,accuracy,grad_l1\n";
    for (std::size_t e = 0; e < log.loss.size(); ++e) {
        out += std::to_string(e);
        out += ',';
        out += csv_cell(log.loss[e]);
        out += ',';
        if (e < log.accuracy.size()) out += csv_cell(log.accuracy[e]);
        out += ',';
        auto it = grads.find(e);
        if (it != grads.end()) out += csv_cell(it->second);
        out += '\n';
    }
    write_text_file(path, out);
}

json plateaus_to_json(const std::vector<PlateauEvent>& evs) {
    json arr = json::array();
    for (const auto& ev : evs)
        arr.push_back({{"start", ev.start}, {"end", ev.end}, {"level", ev.level}});
    return arr;
}

json mpc_samples_to_json(const std::vector<MpcSample>& samples) {
    json arr = json::array();
    for (const auto& s : samples) {
        json vals = json::array();
        for (std::size_t l = 0; l < s.values.size(); ++l) {
            if (s.defined[l])
                vals.push_back(s.values[l]);
            else
                vals.push_back(nullptr);
        }
        arr.push_back({{"epoch", s.epoch}, {"mpc", vals}});
    }
    return arr;
}

json log_summary(const TrainLog& log) {
    json j{{"epochs_run", log.epochs_run},
           {"final_loss", log.loss.back()},
           {"diverged", log.diverged},
           {"plateaus", log.plateaus.size()}};
    if (!log.accuracy.empty()) j["final_accuracy"] = log.accuracy.back();
    return j;
}

const char* side_string(FactorSide s) {
    switch (s) {
    case FactorSide::match_next: return "next";
    case FactorSide::match_prev: return "prev";
    default: return "auto";
    }
}

FactorSide side_from_string(const std::string& s) {
    if (s == "auto") return FactorSide::auto_side;
    if (s == "next") return FactorSide::match_next;
    if (s == "prev") return FactorSide::match_prev;
    throw ValidationError("unknown factor side '" + s + "' (auto|next|prev)");
}

json lift_plan_to_json(const LiftPlan& p) {
    return json{{"insert_after", p.insert_after}, {"width", p.inserted_width},
                {"interval", {p.x_low, p.x_up}},  {"residual", p.residual},
                {"side", side_string(p.factor_side)}};
}

json config_to_json(const ExperimentConfig& c) {
    json act{{"kind", c.activation.name()}};
    if (c.activation.alpha() != 0.0) act["alpha"] = c.activation.alpha();
    json ds{{"kind", c.dataset.kind},
            {"n", c.dataset.n},
            {"lo", c.dataset.lo},
            {"hi", c.dataset.hi},
            {"fixed_spacing", c.dataset.fixed_spacing},
            {"loss", c.dataset.loss == LossKind::mse ? "mse" : "cross_entropy"}};
    if (!c.dataset.path.empty()) ds["path"] = c.dataset.path.string();
    if (!c.dataset.teacher.empty()) ds["teacher"] = c.dataset.teacher.string();
    if (!c.dataset.images.empty()) {
        ds["images"] = c.dataset.images.string();
        ds["labels"] = c.dataset.labels.string();
    }
    if (!c.dataset.test_images.empty()) {
        ds["test_images"] = c.dataset.test_images.string();
        ds["test_labels"] = c.dataset.test_labels.string();
        ds["n_test"] = c.dataset.n_test;
    }
    json lifts = json::array();
    for (const auto& p : c.lifts) lifts.push_back(lift_plan_to_json(p));
    return json{
        {"kind", c.kind},
        {"seed", c.seed},
        {"widths", c.widths},
        {"activation", act},
        {"bn", {{"enabled", c.bn_enabled}, {"gamma_init", c.gamma_init}}},
        {"init_variance", c.init_variance},
        {"dataset", ds},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"epochs", c.optimizer.epochs},
          {"batch_size", c.optimizer.batch_size}}},
        {"schedule",
         {{"mpc_every", c.schedule.mpc_every},
          {"grad_every", c.schedule.grad_every},
          {"snapshot_every", c.schedule.snapshot_every},
          {"snapshot_epochs", c.schedule.snapshot_epochs},
          {"loss_floor", c.schedule.loss_floor},
          {"grad_floor", c.schedule.grad_floor}}},
        {"plateau", {{"window", c.plateau_window}, {"rel_slope_tol", c.plateau_tol}}},
        {"lifts", lifts},
        {"tau", c.tau},
        {"grad_tol", c.grad_tol},
        {"mpc_threshold", c.mpc_threshold},
        {"gamma_values", c.gamma_values},
        {"escape_sizes", c.escape_sizes},
        {"phase2_epochs", c.phase2_epochs},
    };
}

// ---------------------------------------------------------------------------
// Experiment pipelines

NetworkParams init_network(const ExperimentConfig& cfg, double gamma_init) {
    Rng rng(cfg.seed);
    return NetworkParams::gaussian(cfg.widths, cfg.activation, cfg.init_variance, rng,
                                   cfg.bn_enabled, gamma_init);
}

TrainResult run_training(const ExperimentConfig& cfg, const NetworkParams& p0,
                         const Dataset& data, const OptimizerConfig& opt,
                         const TrainSchedule& sched) {
    Rng train_rng(cfg.seed + 1);
    Rng* rng = opt.batch_size > 0 ? &train_rng : nullptr;
    TrainResult tr = stage("train", [&] { return train_gd(p0, data, opt, sched, rng); });
    tr.log.plateaus = detect_plateau(tr.log.loss, cfg.plateau_window, cfg.plateau_tol);
    return tr;
}

json run_train_kind(const ExperimentConfig& cfg, const fs::path& out) {
    Dataset data = stage("dataset", [&] { return load_dataset(cfg.dataset); });
    NetworkParams p0 = stage("init", [&] { return init_network(cfg, cfg.gamma_init); });
    TrainResult tr = run_training(cfg, p0, data, cfg.optimizer, cfg.schedule);

    save_params(out / "weights.json", tr.params);
    write_trainlog_csv(out / "trainlog.csv", tr.log);
    write_json_file(out / "reports" / "plateaus.json", plateaus_to_json(tr.log.plateaus));
    write_json_file(out / "reports" / "mpc.json", mpc_samples_to_json(tr.log.mpc_samples));
    for (const auto& [epoch, params] : tr.snapshots)
        save_params(out / ("snapshot_" + std::to_string(epoch) + ".json"), params);

    json summary = log_summary(tr.log);
    summary["kind"] = cfg.kind;
    summary["seed"] = cfg.seed;
    return summary;
}

json run_saddle_transition(const ExperimentConfig& cfg, const fs::path& out) {
    Dataset data = stage("dataset", [&] { return load_dataset(cfg.dataset); });
    NetworkParams p0 = stage("init", [&] { return init_network(cfg, cfg.gamma_init); });

    TrainSchedule sched = cfg.schedule;
    if (sched.grad_every == 0) sched.grad_every = 100;
    if (sched.grad_floor == 0.0) sched.grad_floor = cfg.grad_tol;
    TrainResult tr = run_training(cfg, p0, data, cfg.optimizer, sched);

    CriticalityReport crit = criticality(tr.params, data, cfg.grad_tol);

    std::vector<LiftPlan> lifts = cfg.lifts;
    if (lifts.empty()) lifts = {LiftPlan{1, 0, 0.0, 0.0, false, FactorSide::auto_side},
                                LiftPlan{1, 0, 0.0, 0.0, false, FactorSide::auto_side}};

    save_params(out / "weights.json", tr.params);
    write_trainlog_csv(out / "trainlog.csv", tr.log);

    std::vector<SpectrumReport> specs;
    specs.push_back(stage("spectrum", [&] { return spectrum(tr.params, data, cfg.tau); }));
    NetworkParams cur = tr.params;
    for (std::size_t k = 0; k < lifts.size(); ++k) {
        LiftResult lifted = stage("lift", [&] { return one_layer_lift(cur, data, lifts[k]); });
        MembershipReport mem = verify_membership(cur, lifted.params, data, lifted.record.plan);
        if (!mem.overall)
            throw NumericalError("stage lift: membership verification failed at step " +
                                 std::to_string(k + 1));
        cur = lifted.params;
        save_params(out / ("lifted_" + std::to_string(k + 1) + ".json"), cur);
        specs.push_back(stage("spectrum", [&] { return spectrum(cur, data, cfg.tau); }));
    }

    std::string eig_csv = "step,index,eigenvalue\n";
    json spec_arr = json::array();
    json negatives = json::array();
    for (std::size_t s = 0; s < specs.size(); ++s) {
        const auto& sp = specs[s];
        for (std::size_t i = 0; i < sp.eigenvalues.size(); ++i)
            eig_csv += std::to_string(s) + "," + std::to_string(i) + "," +
                       csv_cell(sp.eigenvalues[i]) + "\n";
        spec_arr.push_back({{"step", s},
                            {"n_params", sp.eigenvalues.size()},
                            {"n_negative", sp.n_negative},
                            {"n_zero", sp.n_zero},
                            {"n_positive", sp.n_positive},
                            {"strict_saddle", sp.strict_saddle},
                            {"rel_asymmetry", sp.rel_asymmetry}});
        negatives.push_back(sp.n_negative);
    }
    write_text_file(out / "eigenvalues.csv", eig_csv);
    write_json_file(out / "reports" / "spectra.json", spec_arr);

    bool non_decreasing = true;
    bool strict_increase = false;
    for (std::size_t s = 1; s < specs.size(); ++s) {
        if (specs[s].n_negative < specs[s - 1].n_negative) non_decreasing = false;
        if (specs[s].n_negative > specs[s - 1].n_negative) strict_increase = true;
    }

    json summary = log_summary(tr.log);
    summary["kind"] = cfg.kind;
    summary["seed"] = cfg.seed;
    summary["grad_l1"] = crit.grad_l1;
    summary["is_critical"] = crit.is_critical;
    summary["n_negative"] = negatives;
    summary["non_decreasing"] = non_decreasing;
    summary["strict_increase"] = strict_increase;
    return summary;
}

json merge_events_to_json(const MergeReport& rep) {
    json arr = json::array();
    for (const auto& ev : rep.events)
        arr.push_back({{"layer", ev.layer}, {"mpc", ev.mpc_value}});
    return arr;
}

json run_plateau_merge(const ExperimentConfig& cfg, const fs::path& out) {
    Dataset data = stage("dataset", [&] { return load_dataset(cfg.dataset); });
    NetworkParams p0 = stage("init", [&] { return init_network(cfg, cfg.gamma_init); });

    TrainSchedule sched = cfg.schedule;
    if (sched.mpc_every == 0) sched.mpc_every = 200;
    if (sched.snapshot_every == 0) sched.snapshot_every = std::max<std::size_t>(1, cfg.plateau_window / 2);
    TrainResult tr = run_training(cfg, p0, data, cfg.optimizer, sched);

    // Merge at the latest plateau; prefer the deepest snapshot inside it so
    // the layers have had the longest time to linearize.
    NetworkParams at = tr.params;
    std::size_t at_epoch = tr.log.epochs_run;
    json plateau_json = nullptr;
    double level = tr.log.loss.back();
    if (!tr.log.plateaus.empty()) {
        const PlateauEvent& ev = tr.log.plateaus.back();
        level = ev.level;
        plateau_json = {{"start", ev.start}, {"end", ev.end}, {"level", ev.level}};
        if (ev.end < tr.log.epochs_run) {
            for (const auto& [epoch, params] : tr.snapshots) {
                if (epoch >= ev.start && epoch <= ev.end) {
                    at = params;
                    at_epoch = epoch;
                }
            }
        }
    }

    MpcReport mrep = mpc(at, data, cfg.mpc_threshold);
    MergeResult merged = stage("merge", [&] { return merge_linear_layers(at, data, cfg.mpc_threshold); });

    const double loss_before = loss_value(at, data);
    const double loss_after = loss_value(merged.params, data);
    const double rel_vs_level =
        std::abs(loss_after - level) / std::max(level, std::numeric_limits<double>::min());

    save_params(out / "trained.json", tr.params);
    save_params(out / "merge_input.json", at);
    save_params(out / "weights.json", merged.params);
    write_trainlog_csv(out / "trainlog.csv", tr.log);
    write_json_file(out / "reports" / "plateaus.json", plateaus_to_json(tr.log.plateaus));
    write_json_file(out / "reports" / "mpc.json", mpc_samples_to_json(tr.log.mpc_samples));

    json mpc_at;
    mpc_at["epoch"] = at_epoch;
    json layer_arr = json::array();
    for (const auto& lr : mrep.layers)
        layer_arr.push_back({{"layer", lr.layer},
                             {"defined", lr.defined},
                             {"mpc", lr.defined ? json(lr.mpc) : json(nullptr)},
                             {"flagged", lr.flagged}});
    mpc_at["layers"] = layer_arr;
    write_json_file(out / "reports" / "mpc_at_merge.json", mpc_at);

    json merge_rep{{"events", merge_events_to_json(merged.report)},
                   {"widths_before", at.widths},
                   {"widths_after", merged.params.widths},
                   {"loss_before", loss_before},
                   {"loss_after", loss_after},
                   {"plateau_level", level},
                   {"rel_diff_vs_level", rel_vs_level}};
    write_json_file(out / "reports" / "merge.json", merge_rep);

    json summary = log_summary(tr.log);
    summary["kind"] = cfg.kind;
    summary["seed"] = cfg.seed;
    summary["plateau"] = plateau_json;
    summary["merge_epoch"] = at_epoch;
    summary["merged_layers"] = merged.report.events.size();
    summary["widths_after"] = merged.params.widths;
    summary["loss_after"] = loss_after;
    summary["rel_diff_vs_level"] = rel_vs_level;
    return summary;
}

json run_bn_linearization(const ExperimentConfig& cfg, const fs::path& out) {
    if (cfg.gamma_values.empty())
        throw ValidationError("stage config: bn_linearization requires gamma_values");
    Dataset data = stage("dataset", [&] { return load_dataset(cfg.dataset); });

    TrainSchedule sched = cfg.schedule;
    if (sched.mpc_every == 0) sched.mpc_every = 100;
    if (sched.loss_floor == 0.0) sched.loss_floor = 1e-8;

    json runs = json::array();
    std::vector<double> means;
    std::vector<std::size_t> durations;
    NetworkParams last;
    for (double gamma : cfg.gamma_values) {
        ExperimentConfig sub = cfg;
        sub.bn_enabled = true;
        NetworkParams p0 = stage("init", [&] { return init_network(sub, gamma); });
        TrainResult tr = run_training(cfg, p0, data, cfg.optimizer, sched);

        const std::size_t n_hidden = cfg.widths.size() >= 2 ? cfg.widths.size() - 2 : 0;
        std::vector<double> layer_sum(n_hidden, 0.0);
        std::vector<std::size_t> layer_cnt(n_hidden, 0);
        for (const auto& s : tr.log.mpc_samples)
            for (std::size_t l = 0; l < s.values.size() && l < n_hidden; ++l)
                if (s.defined[l]) {
                    layer_sum[l] += s.values[l];
                    layer_cnt[l] += 1;
                }
        json layer_means = json::array();
        double grand_sum = 0.0;
        std::size_t grand_cnt = 0;
        for (std::size_t l = 0; l < n_hidden; ++l) {
            if (layer_cnt[l] > 0) {
                layer_means.push_back(layer_sum[l] / double(layer_cnt[l]));
                grand_sum += layer_sum[l];
                grand_cnt += layer_cnt[l];
            } else {
                layer_means.push_back(nullptr);
            }
        }
        const double mean_mpc = grand_cnt > 0 ? grand_sum / double(grand_cnt) : 0.0;

        std::size_t duration = 0;
        for (const auto& ev : tr.log.plateaus) duration += ev.end - ev.start + 1;

        write_trainlog_csv(out / ("trainlog_gamma_" + double_to_string(gamma) + ".csv"), tr.log);
        runs.push_back({{"gamma", gamma},
                        {"mean_mpc", mean_mpc},
                        {"layer_means", layer_means},
                        {"plateau_duration", duration},
                        {"plateaus", plateaus_to_json(tr.log.plateaus)},
                        {"epochs_run", tr.log.epochs_run},
                        {"final_loss", tr.log.loss.back()},
                        {"diverged", tr.log.diverged}});
        means.push_back(mean_mpc);
        durations.push_back(duration);
        last = tr.params;
    }

    save_params(out / "weights.json", last);
    write_json_file(out / "reports" / "bn.json", runs);

    bool mpc_decreasing = true;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (means[i] >= means[i - 1]) mpc_decreasing = false;

    json summary{{"kind", cfg.kind},
                 {"seed", cfg.seed},
                 {"gamma_values", cfg.gamma_values},
                 {"mean_mpc", means},
                 {"plateau_durations", durations},
                 {"mpc_monotone_decreasing", mpc_decreasing},
                 {"last_gamma_plateau_free", durations.empty() ? false : durations.back() == 0}};
    return summary;
}

json run_data_escape(const ExperimentConfig& cfg, const fs::path& out) {
    if (cfg.escape_sizes.empty())
        throw ValidationError("stage config: data_escape requires escape sizes");
    NetworkParams teacher = cfg.dataset.teacher.empty()
                                ? default_bump_teacher()
                                : load_params(cfg.dataset.teacher);
    const std::size_t max_n =
        *std::max_element(cfg.escape_sizes.begin(), cfg.escape_sizes.end());
    auto make_data = [&](std::size_t n) {
        // Fixed spacing: [lo, hi] is the window of the largest size and smaller
        // sizes truncate it, keeping the grid step identical across the sweep.
        double hi = cfg.dataset.hi;
        if (cfg.dataset.fixed_spacing && max_n > 1) {
            const double step = (cfg.dataset.hi - cfg.dataset.lo) / static_cast<double>(max_n - 1);
            hi = cfg.dataset.lo + step * static_cast<double>(n - 1);
        }
        return gen_synthetic_1d(n, cfg.dataset.lo, hi, teacher);
    };

    const std::size_t base_n = cfg.escape_sizes.front();
    Dataset base = stage("dataset", [&] { return make_data(base_n); });
    NetworkParams p0 = stage("init", [&] { return init_network(cfg, cfg.gamma_init); });
    TrainResult phase1 = run_training(cfg, p0, base, cfg.optimizer, cfg.schedule);

    json plateau_json = nullptr;
    double level = phase1.log.loss.back();
    bool plateau_found = !phase1.log.plateaus.empty();
    if (plateau_found) {
        const PlateauEvent& ev = phase1.log.plateaus.back();
        level = ev.level;
        plateau_json = {{"start", ev.start}, {"end", ev.end}, {"level", ev.level}};
    }
    const double threshold = 0.5 * level;

    save_params(out / "weights.json", phase1.params);
    write_trainlog_csv(out / "trainlog.csv", phase1.log);
    write_json_file(out / "reports" / "plateaus.json", plateaus_to_json(phase1.log.plateaus));

    OptimizerConfig opt2 = cfg.optimizer;
    if (cfg.phase2_epochs > 0) opt2.epochs = cfg.phase2_epochs;
    TrainSchedule sched2; // plain run, stop once escaped
    sched2.loss_floor = threshold;

    json runs = json::array();
    std::vector<std::size_t> escapes; // SIZE_MAX when never escaped
    for (std::size_t n : cfg.escape_sizes) {
        Dataset data_n = make_data(n);
        TrainResult tr = run_training(cfg, phase1.params, data_n, opt2, sched2);
        std::size_t escape = std::numeric_limits<std::size_t>::max();
        for (std::size_t e = 0; e < tr.log.loss.size(); ++e) {
            if (tr.log.loss[e] < threshold) {
                escape = e;
                break;
            }
        }
        write_trainlog_csv(out / ("trainlog_n" + std::to_string(n) + ".csv"), tr.log);
        runs.push_back(
            {{"n", n},
             {"escape_epoch",
              escape == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(escape)},
             {"final_loss", tr.log.loss.back()},
             {"epochs_run", tr.log.epochs_run}});
        escapes.push_back(escape);
    }

    bool non_increasing = true;
    for (std::size_t i = 1; i < escapes.size(); ++i)
        if (escapes[i] > escapes[i - 1]) non_increasing = false;

    json escape_rep{{"plateau", plateau_json},
                    {"plateau_found", plateau_found},
                    {"level", level},
                    {"threshold", threshold},
                    {"runs", runs}};
    write_json_file(out / "reports" / "escape.json", escape_rep);

    json summary{{"kind", cfg.kind},
                 {"seed", cfg.seed},
                 {"plateau_found", plateau_found},
                 {"level", level},
                 {"runs", runs},
                 {"escape_non_increasing", non_increasing},
                 {"phase1_final_loss", phase1.log.loss.back()}};
    return summary;
}

json agreement_to_json(const AgreementReport& rep) {
    json ratio = json::array();
    for (std::size_t i = 0; i < rep.pair_ratio.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < rep.pair_ratio.cols(); ++j) row.push_back(rep.pair_ratio(i, j));
        ratio.push_back(row);
    }
    return json{{"agreement", rep.agreement}, {"pair_ratio", ratio}, {"count_a", rep.count_a}};
}

json run_prune_agreement(const ExperimentConfig& cfg, const fs::path& out) {
    Dataset train = stage("dataset", [&] { return load_dataset(cfg.dataset); });
    Dataset test = train;
    if (!cfg.dataset.test_images.empty()) {
        test = stage("dataset", [&] {
            return load_idx_dataset(cfg.dataset.test_images, cfg.dataset.test_labels,
                                    cfg.dataset.n_test > 0 ? cfg.dataset.n_test : cfg.dataset.n,
                                    cfg.dataset.loss);
        });
    }

    NetworkParams p0 = stage("init", [&] { return init_network(cfg, cfg.gamma_init); });
    TrainResult tr = run_training(cfg, p0, train, cfg.optimizer, cfg.schedule);

    MergeResult merged = stage("merge", [&] { return merge_linear_layers(tr.params, train, cfg.mpc_threshold); });
    AgreementReport on_train = prediction_agreement(tr.params, merged.params, train);
    AgreementReport on_test = prediction_agreement(tr.params, merged.params, test);

    save_params(out / "trained.json", tr.params);
    save_params(out / "weights.json", merged.params);
    write_trainlog_csv(out / "trainlog.csv", tr.log);
    write_json_file(out / "reports" / "plateaus.json", plateaus_to_json(tr.log.plateaus));
    write_json_file(out / "reports" / "merge.json",
                    json{{"events", merge_events_to_json(merged.report)},
                         {"widths_before", tr.params.widths},
                         {"widths_after", merged.params.widths}});
    write_json_file(out / "reports" / "agreement.json",
                    json{{"train", agreement_to_json(on_train)},
                         {"test", agreement_to_json(on_test)}});

    json summary = log_summary(tr.log);
    summary["kind"] = cfg.kind;
    summary["seed"] = cfg.seed;
    summary["agreement_train"] = on_train.agreement;
    summary["agreement_test"] = on_test.agreement;
    summary["depth_before"] = tr.params.depth();
    summary["depth_after"] = merged.params.depth();
    summary["merged_layers"] = merged.report.events.size();
    return summary;
}

} // namespace

// ---------------------------------------------------------------------------
// Data generation and loading

NetworkParams default_bump_teacher() {
    NetworkParams p = NetworkParams::zeros({1, 2, 1}, ActivationSpec::tanh_act());
    p.weights[0](0, 0) = 4.0;
    p.weights[0](1, 0) = 4.0;
    p.biases[0] = {-2.0, 2.0};
    p.weights[1](0, 0) = 1.0;
    p.weights[1](0, 1) = -1.0;
    return p;
}

Dataset gen_synthetic_1d(std::size_t n, double lo, double hi, const NetworkParams& teacher) {
    if (n < 2) throw ValidationError("synthetic dataset needs n >= 2 points");
    if (!(lo < hi)) throw ValidationError("synthetic dataset interval is empty");
    teacher.validate();
    if (teacher.widths.front() != 1)
        throw DimensionError("synthetic-1d teacher must take one input");

    Matrix x(n, 1);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) x(i, 0) = lo + static_cast<double>(i) * step;

    Dataset d;
    d.y = forward_batch(teacher, x);
    d.x = std::move(x);
    d.loss = LossKind::mse;
    d.validate();
    return d;
}

Dataset gen_synthetic_1d(std::size_t n, double lo, double hi) {
    return gen_synthetic_1d(n, lo, hi, default_bump_teacher());
}

Dataset load_iris_csv(const fs::path& path, LossKind loss) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());

    std::vector<std::array<double, 4>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fields = split_csv_line(line);
        if (first_content) {
            first_content = false;
            // Header detection: a first line whose leading field is not numeric.
            double probe = 0.0;
            auto [ptr, ec] =
                std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), probe);
            if (ec != std::errc() || ptr != fields[0].data() + fields[0].size()) continue;
        }
        if (fields.size() != 5)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected 4 features and a class label, got " +
                                  std::to_string(fields.size()) + " fields");
        std::array<double, 4> f{};
        for (std::size_t j = 0; j < 4; ++j) f[j] = parse_double_field(fields[j], path, line_no);
        rows.push_back(f);
        labels.push_back(iris_label(fields[4], path, line_no));
    }
    if (rows.empty()) throw ValidationError(path.string() + ": no data rows");

    const std::size_t n = rows.size();
    Matrix x(n, 4);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 4; ++j) x(i, j) = rows[i][j];

    // Standardize each feature to zero mean, unit variance (population).
    for (std::size_t j = 0; j < 4; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x(i, j);
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - m) * (x(i, j) - m);
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < n; ++i) {
            x(i, j) -= m;
            if (sd > 1e-15) x(i, j) /= sd;
        }
    }

    return Dataset::from_labels(std::move(x), labels, 3, loss);
}

Dataset load_idx_dataset(const fs::path& images, const fs::path& labels, std::size_t n,
                         LossKind loss) {
    if (n == 0) throw ValidationError("idx dataset needs n >= 1 samples");
    const std::string img = read_binary_file(images);
    if (img.size() < 16) throw ValidationError(images.string() + ": truncated IDX header");
    const std::uint32_t img_magic = read_u32be(img, 0);
    if (img_magic != 0x00000803u)
        throw ValidationError(images.string() + ": bad IDX magic (expected 0x00000803)");
    const std::size_t img_count = read_u32be(img, 4);
    const std::size_t rows = read_u32be(img, 8);
    const std::size_t cols = read_u32be(img, 12);
    if (img_count < n)
        throw ValidationError(images.string() + ": has " + std::to_string(img_count) +
                              " images, requested " + std::to_string(n));
    if (img.size() < 16 + img_count * rows * cols)
        throw ValidationError(images.string() + ": truncated image data");

    const std::string lab = read_binary_file(labels);
    if (lab.size() < 8) throw ValidationError(labels.string() + ": truncated IDX header");
    if (read_u32be(lab, 0) != 0x00000801u)
        throw ValidationError(labels.string() + ": bad IDX magic (expected 0x00000801)");
    const std::size_t lab_count = read_u32be(lab, 4);
    if (lab_count < n)
        throw ValidationError(labels.string() + ": has " + std::to_string(lab_count) +
                              " labels, requested " + std::to_string(n));
    if (lab.size() < 8 + lab_count) throw ValidationError(labels.string() + ": truncated label data");

    const std::size_t d = rows * cols;
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k)
            x(i, k) = static_cast<double>(static_cast<unsigned char>(img[16 + i * d + k])) / 255.0;

    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int v = static_cast<unsigned char>(lab[8 + i]);
        if (v > 9)
            throw ValidationError(labels.string() + ": label " + std::to_string(v) +
                                  " out of range at sample " + std::to_string(i));
        y[i] = v;
    }
    return Dataset::from_labels(std::move(x), y, 10, loss);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_gd(const NetworkParams& theta0, const Dataset& data,
                     const OptimizerConfig& opt, const TrainSchedule& sched, Rng* rng) {
    theta0.validate();
    data.validate();
    if (data.input_dim() != theta0.widths.front() || data.output_dim() != theta0.widths.back())
        throw DimensionError("dataset dimensions do not match the network");
    if (opt.lr < 0.0) throw ValidationError("learning rate must be non-negative");
    if (opt.batch_size > 0 && rng == nullptr)
        throw ValidationError("mini-batch training requires an rng for shuffling");

    TrainResult res;
    res.params = theta0;
    TrainLog& log = res.log;
    const bool classify = data.output_dim() >= 2 && data.one_hot_targets();
    const bool track_mpc = sched.mpc_every > 0 && theta0.depth() >= 2;

    auto push_metrics = [&](double loss) {
        log.loss.push_back(loss);
        if (classify) log.accuracy.push_back(accuracy(res.params, data));
    };
    auto sample_mpc = [&](std::size_t epoch) {
        MpcReport rep = mpc(res.params, data);
        MpcSample s;
        s.epoch = epoch;
        for (const auto& layer : rep.layers) {
            s.values.push_back(layer.defined ? layer.mpc
                                             : std::numeric_limits<double>::quiet_NaN());
            s.defined.push_back(layer.defined);
        }
        log.mpc_samples.push_back(std::move(s));
    };
    auto sample_grad = [&](std::size_t epoch) {
        GradientBundle g = backprop(res.params, data);
        log.grad_samples.push_back({epoch, g.l1_norm()});
        return log.grad_samples.back().l1;
    };
    auto want_snapshot = [&](std::size_t epoch) {
        if (sched.snapshot_every > 0 && epoch > 0 && epoch % sched.snapshot_every == 0)
            return true;
        return std::find(sched.snapshot_epochs.begin(), sched.snapshot_epochs.end(), epoch) !=
               sched.snapshot_epochs.end();
    };

    push_metrics(loss_value(res.params, data));
    bool stop = false;
    if (track_mpc) sample_mpc(0);
    if (sched.grad_every > 0) {
        const double l1 = sample_grad(0);
        if (sched.grad_floor > 0.0 && l1 < sched.grad_floor) stop = true;
    }
    if (want_snapshot(0)) res.snapshots.emplace_back(0, res.params);
    if (sched.loss_floor > 0.0 && log.loss.back() <= sched.loss_floor) stop = true;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    NetworkParams prev = res.params;

    for (std::size_t e = 1; e <= opt.epochs && !stop; ++e) {
        prev = res.params;
        if (opt.batch_size == 0) {
            apply_update(res.params, backprop(res.params, data), opt.lr);
        } else {
            rng->shuffle(order);
            for (std::size_t s0 = 0; s0 < order.size(); s0 += opt.batch_size) {
                const std::size_t s1 = std::min(order.size(), s0 + opt.batch_size);
                const std::vector<std::size_t> idx(order.begin() + static_cast<long>(s0),
                                                   order.begin() + static_cast<long>(s1));
                apply_update(res.params, backprop(res.params, data.subset(idx)), opt.lr);
            }
        }

        const double loss = loss_value(res.params, data);
        if (!std::isfinite(loss) || !params_finite(res.params)) {
            res.params = prev; // keep the last finite state
            log.diverged = true;
            break;
        }
        push_metrics(loss);
        if (track_mpc && e % sched.mpc_every == 0) sample_mpc(e);
        if (sched.grad_every > 0 && e % sched.grad_every == 0) {
            const double l1 = sample_grad(e);
            if (sched.grad_floor > 0.0 && l1 < sched.grad_floor) stop = true;
        }
        if (want_snapshot(e)) res.snapshots.emplace_back(e, res.params);
        if (sched.loss_floor > 0.0 && loss <= sched.loss_floor) stop = true;
    }

    log.epochs_run = log.loss.size() - 1;
    return res;
}

std::vector<PlateauEvent> detect_plateau(const std::vector<double>& loss, std::size_t window,
                                         double rel_slope_tol) {
    if (window < 10) throw ValidationError("plateau window must be at least 10 epochs");
    std::vector<PlateauEvent> events;
    const std::size_t n = loss.size();
    if (n <= window) return events;

    std::vector<char> flagged(n, 0);
    for (std::size_t e = window; e < n; ++e) {
        const double base = loss[e - window];
        const double rel =
            (base - loss[e]) / std::max(base, std::numeric_limits<double>::min());
        flagged[e] = rel < rel_slope_tol;
    }

    std::size_t e = window;
    while (e < n) {
        if (!flagged[e]) {
            ++e;
            continue;
        }
        const std::size_t run_start = e;
        while (e < n && flagged[e]) ++e;
        const std::size_t run_end = e - 1;

        std::size_t start = run_start - window;
        if (!events.empty() && start <= events.back().end) start = events.back().end + 1;
        PlateauEvent ev;
        ev.start = start;
        ev.end = run_end;
        double sum = 0.0;
        for (std::size_t k = start; k <= run_end; ++k) sum += loss[k];
        ev.level = sum / static_cast<double>(run_end - start + 1);
        events.push_back(ev);
    }
    return events;
}

// ---------------------------------------------------------------------------
// Config parsing and the experiment runner

ExperimentConfig parse_experiment_config(const json& j) {
    if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
    try {
        ExperimentConfig c;
        c.raw = j;
        if (!j.contains("seed")) throw ValidationError("experiment config requires a seed");
        c.seed = j.at("seed").get<std::uint64_t>();
        c.kind = j.value("kind", std::string("train"));
        static const char* kinds[] = {"train",            "saddle_transition", "plateau_merge",
                                      "bn_linearization", "data_escape",       "prune_agreement"};
        if (std::find_if(std::begin(kinds), std::end(kinds),
                         [&](const char* k) { return c.kind == k; }) == std::end(kinds))
            throw ValidationError("unknown experiment kind '" + c.kind + "'");

        if (!j.contains("widths"))
            throw ValidationError("experiment config requires widths");
        c.widths = j.at("widths").get<std::vector<std::size_t>>();

        if (j.contains("activation")) {
            const json& a = j.at("activation");
            if (a.is_string()) {
                c.activation = ActivationSpec::from_name(a.get<std::string>(), 0.0);
            } else {
                c.activation = ActivationSpec::from_name(a.at("kind").get<std::string>(),
                                                         a.value("alpha", 0.0));
            }
        }
        if (j.contains("bn")) {
            const json& b = j.at("bn");
            if (b.is_boolean()) {
                c.bn_enabled = b.get<bool>();
            } else {
                c.bn_enabled = b.value("enabled", false);
                c.gamma_init = b.value("gamma_init", 1.0);
            }
        }
        c.init_variance = j.value("init_variance", 0.01);
        if (c.init_variance <= 0.0) throw ValidationError("init_variance must be positive");

        LossKind loss = LossKind::mse;
        if (j.contains("loss")) {
            const std::string s = j.at("loss").get<std::string>();
            if (s == "mse")
                loss = LossKind::mse;
            else if (s == "cross_entropy")
                loss = LossKind::cross_entropy;
            else
                throw ValidationError("unknown loss '" + s + "' (mse|cross_entropy)");
        }
        c.dataset.loss = loss;
        if (j.contains("dataset")) c.dataset = parse_dataset_config(j.at("dataset"), loss);

        if (j.contains("optimizer")) {
            const json& o = j.at("optimizer");
            c.optimizer.lr = o.value("lr", 0.01);
            c.optimizer.epochs = o.value("epochs", std::size_t{1000});
            c.optimizer.batch_size = o.value("batch_size", std::size_t{0});
        }
        if (j.contains("schedule")) {
            const json& s = j.at("schedule");
            c.schedule.mpc_every = s.value("mpc_every", std::size_t{0});
            c.schedule.grad_every = s.value("grad_every", std::size_t{0});
            c.schedule.snapshot_every = s.value("snapshot_every", std::size_t{0});
            if (s.contains("snapshot_epochs"))
                c.schedule.snapshot_epochs =
                    s.at("snapshot_epochs").get<std::vector<std::size_t>>();
            c.schedule.loss_floor = s.value("loss_floor", 0.0);
            c.schedule.grad_floor = s.value("grad_floor", 0.0);
        }
        if (j.contains("plateau")) {
            const json& p = j.at("plateau");
            c.plateau_window = p.value("window", std::size_t{500});
            c.plateau_tol = p.value("rel_slope_tol", 1e-3);
        }

        if (j.contains("lifts"))
            for (const json& lp : j.at("lifts")) c.lifts.push_back(parse_lift_plan(lp));
        c.tau = j.value("tau", 1e-12);
        c.grad_tol = j.value("grad_tol", 1e-4);
        c.mpc_threshold = j.value("mpc_threshold", kMpcThreshold);
        if (j.contains("gamma_values"))
            c.gamma_values = j.at("gamma_values").get<std::vector<double>>();
        if (j.contains("escape_sizes"))
            c.escape_sizes = j.at("escape_sizes").get<std::vector<std::size_t>>();
        c.phase2_epochs = j.value("phase2_epochs", std::size_t{0});
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    return parse_experiment_config(read_json_file(path));
}

LiftPlan parse_lift_plan(const json& j) {
    if (!j.is_object()) throw ValidationError("lift plan must be a JSON object");
    try {
        LiftPlan plan;
        plan.insert_after = j.value("insert_after", std::size_t{1});
        plan.inserted_width = j.value("width", std::size_t{0});
        if (j.contains("interval")) {
            const auto iv = j.at("interval").get<std::vector<double>>();
            if (iv.size() != 2) throw ValidationError("lift interval must be [lo, hi]");
            plan.x_low = iv[0];
            plan.x_up = iv[1];
        }
        plan.residual = j.value("residual", false);
        plan.factor_side = side_from_string(j.value("side", std::string("auto")));
        return plan;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("lift plan: ") + e.what());
    }
}

DatasetConfig parse_dataset_config(const json& j, LossKind default_loss) {
    if (!j.is_object()) throw ValidationError("dataset spec must be a JSON object");
    try {
        DatasetConfig d;
        d.loss = default_loss;
        d.kind = j.value("kind", std::string("synthetic-1d"));
        d.n = j.value("n", std::size_t{80});
        d.lo = j.value("lo", -1.0);
        d.hi = j.value("hi", 1.0);
        d.fixed_spacing = j.value("fixed_spacing", false);
        if (j.contains("path")) d.path = j.at("path").get<std::string>();
        if (j.contains("teacher")) d.teacher = j.at("teacher").get<std::string>();
        if (j.contains("images")) d.images = j.at("images").get<std::string>();
        if (j.contains("labels")) d.labels = j.at("labels").get<std::string>();
        if (j.contains("test_images")) d.test_images = j.at("test_images").get<std::string>();
        if (j.contains("test_labels")) d.test_labels = j.at("test_labels").get<std::string>();
        d.n_test = j.value("n_test", std::size_t{0});
        if (j.contains("loss")) {
            const std::string s = j.at("loss").get<std::string>();
            if (s == "mse")
                d.loss = LossKind::mse;
            else if (s == "cross_entropy")
                d.loss = LossKind::cross_entropy;
            else
                throw ValidationError("unknown loss '" + s + "' (mse|cross_entropy)");
        }
        return d;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("dataset spec: ") + e.what());
    }
}

Dataset load_dataset(const DatasetConfig& spec) {
    if (spec.kind == "synthetic-1d")
        return gen_synthetic_1d(spec.n, spec.lo, spec.hi);
    if (spec.kind == "teacher") {
        if (spec.teacher.empty())
            throw ValidationError("teacher dataset requires a teacher weights path");
        return gen_synthetic_1d(spec.n, spec.lo, spec.hi, load_params(spec.teacher));
    }
    if (spec.kind == "iris") {
        if (spec.path.empty()) throw ValidationError("iris dataset requires a csv path");
        return load_iris_csv(spec.path, spec.loss);
    }
    if (spec.kind == "csv") {
        if (spec.path.empty()) throw ValidationError("csv dataset requires a path");
        return load_dataset_csv(spec.path, spec.loss);
    }
    if (spec.kind == "mnist-subset") {
        if (spec.images.empty() || spec.labels.empty())
            throw ValidationError("mnist-subset dataset requires images and labels paths");
        return load_idx_dataset(spec.images, spec.labels, spec.n, spec.loss);
    }
    throw ValidationError("unknown dataset kind '" + spec.kind + "'");
}

nlohmann::json run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
    stage("config", [&] {
        if (cfg.widths.size() < 2) throw ValidationError("experiment needs at least two widths");
        if (cfg.optimizer.lr < 0.0) throw ValidationError("learning rate must be non-negative");
    });
    fs::create_directories(out_dir / "reports");
    write_json_file(out_dir / "config.json", cfg.raw.is_null() ? config_to_json(cfg) : cfg.raw);

    json summary;
    if (cfg.kind == "train")
        summary = run_train_kind(cfg, out_dir);
    else if (cfg.kind == "saddle_transition")
        summary = run_saddle_transition(cfg, out_dir);
    else if (cfg.kind == "plateau_merge")
        summary = run_plateau_merge(cfg, out_dir);
    else if (cfg.kind == "bn_linearization")
        summary = run_bn_linearization(cfg, out_dir);
    else if (cfg.kind == "data_escape")
        summary = run_data_escape(cfg, out_dir);
    else if (cfg.kind == "prune_agreement")
        summary = run_prune_agreement(cfg, out_dir);
    else
        throw ValidationError("stage config: unknown experiment kind '" + cfg.kind + "'");

    write_json_file(out_dir / "reports" / "summary.json", summary);
    return summary;
}

} // namespace liftnet

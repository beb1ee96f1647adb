#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "liftnet/diagnostics.hpp"
#include "liftnet/errors.hpp"
#include "liftnet/experiments.hpp"
#include "liftnet/io.hpp"
#include "liftnet/lifting.hpp"
#include "liftnet/network.hpp"

using namespace liftnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

LossKind loss_from_flag(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "cross_entropy") return LossKind::cross_entropy;
    throw ValidationError("unknown loss '" + s + "' (mse|cross_entropy)");
}

/// --data accepts a CSV file or a JSON dataset spec.
Dataset load_cli_data(const std::string& spec, LossKind loss) {
    const fs::path p(spec);
    if (p.extension() == ".json") return load_dataset(parse_dataset_config(read_json_file(p), loss));
    return load_dataset_csv(p, loss);
}

/// Bundle-overwrite guard: an existing non-empty output directory needs
/// --force; the directory is created when absent.
void ensure_writable(const fs::path& out, bool force) {
    if (fs::exists(out)) {
        if (!fs::is_directory(out))
            throw ValidationError("output path " + out.string() + " is not a directory");
        if (!fs::is_empty(out) && !force)
            throw ValidationError("output directory " + out.string() +
                                  " already holds a bundle (pass --force to overwrite)");
    }
    fs::create_directories(out);
}

const char* case_name(LiftCase c) {
    switch (c) {
    case LiftCase::next_narrower: return "next_narrower";
    case LiftCase::prev_narrower: return "prev_narrower";
    default: return "degenerate_constant";
    }
}

const char* side_name(FactorSide s) {
    switch (s) {
    case FactorSide::match_next: return "next";
    case FactorSide::match_prev: return "prev";
    default: return "auto";
    }
}

json plan_to_json(const LiftPlan& p) {
    return json{{"insert_after", p.insert_after}, {"width", p.inserted_width},
                {"interval", {p.x_low, p.x_up}},  {"residual", p.residual},
                {"side", side_name(p.factor_side)}};
}

json record_to_json(const LiftRecord& rec, const MembershipReport& mem) {
    return json{{"plan", plan_to_json(rec.plan)},
                {"case_taken", case_name(rec.case_taken)},
                {"xi", rec.xi},
                {"lambda", rec.lambda},
                {"mu", rec.mu},
                {"core_width", rec.core_width},
                {"margins", mem.neuron_margins},
                {"min_margin", mem.min_margin},
                {"approx_segment", mem.approx_segment},
                {"weight_residual", mem.weight_residual},
                {"bias_residual", mem.bias_residual},
                {"verified", mem.overall}};
}

json membership_to_json(const MembershipReport& mem) {
    json j{{"local_in_layer_ok", mem.local_in_layer_ok},
           {"linearization_ok", mem.linearization_ok},
           {"output_preserving_ok", mem.output_preserving_ok},
           {"overall", mem.overall},
           {"approx_segment", mem.approx_segment},
           {"min_margin", mem.min_margin},
           {"margins", mem.neuron_margins},
           {"weight_residual", mem.weight_residual},
           {"bias_residual", mem.bias_residual},
           {"tol", mem.tol}};
    if (mem.first_violation)
        j["first_violation"] = {{"neuron", mem.first_violation->first},
                                {"sample", mem.first_violation->second}};
    return j;
}

struct Options {
    std::string config;
    std::string weights;
    std::string other;
    std::string deep;
    std::string data;
    std::string out;
    std::string loss = "mse";
    std::uint64_t seed = 0;
    bool force = false;
    double threshold = kMpcThreshold;
    double tau = 1e-12;
    double tol = 1e-4;
};

int cmd_experiment(const Options& opt, const CLI::Option* seed_opt, bool train_only) {
    ExperimentConfig cfg = load_experiment_config(opt.config);
    if (seed_opt->count() > 0) {
        cfg.seed = opt.seed;
        if (cfg.raw.is_object()) cfg.raw["seed"] = opt.seed; // keep the bundle echo honest
    }
    if (train_only && cfg.kind != "train")
        throw ValidationError("config kind '" + cfg.kind +
                              "' needs the experiment subcommand, not train");
    ensure_writable(opt.out, opt.force);
    const json summary = run_experiment(cfg, opt.out);
    std::cout << "experiment '" << cfg.kind << "' (seed " << cfg.seed << ") finished\n";
    std::cout << summary.dump(2) << "\n";
    std::cout << "bundle written to " << opt.out << "\n";
    return 0;
}

int cmd_lift(const Options& opt) {
    const NetworkParams shallow = load_params(opt.weights);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    const json plan_doc = read_json_file(opt.config);

    std::vector<LiftPlan> plans;
    bool single = true;
    if (plan_doc.is_object() && plan_doc.contains("plans")) {
        for (const json& p : plan_doc.at("plans")) plans.push_back(parse_lift_plan(p));
        single = false;
    } else {
        plans.push_back(parse_lift_plan(plan_doc));
    }
    if (plans.empty()) throw ValidationError("lift config lists no plans");

    ensure_writable(opt.out, opt.force);

    NetworkParams cur = shallow;
    json records = json::array();
    bool all_ok = true;
    for (std::size_t k = 0; k < plans.size(); ++k) {
        const LiftResult res = one_layer_lift(cur, data, plans[k]);
        const MembershipReport mem = verify_membership(cur, res.params, data, res.record.plan);
        records.push_back(record_to_json(res.record, mem));
        std::cout << "step " << (k + 1) << ": insert after layer " << res.record.plan.insert_after
                  << ", case " << case_name(res.record.case_taken) << ", xi " << fmt6(res.record.xi)
                  << ", min margin " << fmt6(mem.min_margin) << ", verified "
                  << (mem.overall ? "true" : "false") << "\n";
        all_ok = all_ok && mem.overall;
        cur = res.params;
        if (!all_ok) break;
    }

    write_json_file(fs::path(opt.out) / "lift_record.json", single ? records.at(0) : records);
    if (!all_ok) {
        std::cout << "overall=false\n";
        throw NumericalError("lift verification failed; lifted weights withheld (see " +
                             (fs::path(opt.out) / "lift_record.json").string() + ")");
    }
    save_params(fs::path(opt.out) / "weights.json", cur);
    std::cout << "overall=true\n";
    std::cout << "wrote " << (fs::path(opt.out) / "weights.json").string() << " and "
              << (fs::path(opt.out) / "lift_record.json").string() << "\n";
    return 0;
}

int cmd_verify(const Options& opt) {
    const NetworkParams shallow = load_params(opt.weights);
    const NetworkParams deep = load_params(opt.deep);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    const LiftPlan plan = parse_lift_plan(read_json_file(opt.config));

    const MembershipReport mem = verify_membership(shallow, deep, data, plan);
    std::cout << "local_in_layer     " << (mem.local_in_layer_ok ? "ok" : "FAIL") << "\n";
    std::cout << "linearization      " << (mem.linearization_ok ? "ok" : "FAIL")
              << " (min margin " << fmt6(mem.min_margin) << ")\n";
    std::cout << "output_preserving  " << (mem.output_preserving_ok ? "ok" : "FAIL")
              << " (residuals " << fmt6(mem.weight_residual) << ", " << fmt6(mem.bias_residual)
              << ", tol " << fmt6(mem.tol) << ")\n";
    std::cout << "overall=" << (mem.overall ? "true" : "false") << "\n";
    if (!opt.out.empty()) {
        ensure_writable(opt.out, opt.force);
        write_json_file(fs::path(opt.out) / "verify_report.json", membership_to_json(mem));
        std::cout << "wrote " << (fs::path(opt.out) / "verify_report.json").string() << "\n";
    }
    return mem.overall ? 0 : 2;
}

int cmd_merge(const Options& opt) {
    const NetworkParams p = load_params(opt.weights);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    ensure_writable(opt.out, opt.force);

    const MergeResult res = merge_linear_layers(p, data, opt.threshold);
    const double before = loss_value(p, data);
    const double after = loss_value(res.params, data);

    json events = json::array();
    for (const auto& ev : res.report.events) {
        events.push_back({{"layer", ev.layer},
                          {"mpc", ev.mpc_value},
                          {"lambda_hat", ev.lambda_hat},
                          {"mu_hat", ev.mu_hat}});
        std::cout << "merged layer " << ev.layer << " (mpc " << fmt6(ev.mpc_value) << ")\n";
    }
    if (res.report.events.empty()) std::cout << "no layer exceeded the threshold; network unchanged\n";
    std::cout << "depth " << p.depth() << " -> " << res.params.depth() << ", loss "
              << fmt6(before) << " -> " << fmt6(after) << "\n";

    save_params(fs::path(opt.out) / "weights.json", res.params);
    write_json_file(fs::path(opt.out) / "merge_report.json",
                    json{{"threshold", opt.threshold},
                         {"events", events},
                         {"widths_before", p.widths},
                         {"widths_after", res.params.widths},
                         {"loss_before", before},
                         {"loss_after", after}});
    std::cout << "wrote " << (fs::path(opt.out) / "weights.json").string() << "\n";
    return 0;
}

int cmd_mpc(const Options& opt) {
    const NetworkParams p = load_params(opt.weights);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    const MpcReport rep = mpc(p, data, opt.threshold);

    std::printf("layer  width  mpc          flagged  masked(zero/const)\n");
    for (const auto& layer : rep.layers) {
        std::size_t zeros = 0, consts = 0;
        for (bool z : layer.zero_neuron) zeros += z;
        for (bool c : layer.constant_neuron) consts += c;
        std::printf("%-6zu %-6zu %-12s %-8s %zu/%zu\n", layer.layer, layer.abs_rho.size(),
                    layer.defined ? fmt6(layer.mpc).c_str() : "n/a",
                    layer.flagged ? "yes" : "no", zeros, consts);
    }
    std::printf("threshold %s; %zu layer(s) flagged\n", fmt6(rep.threshold).c_str(),
                rep.flagged_layers.size());

    if (!opt.out.empty()) {
        ensure_writable(opt.out, opt.force);
        json layers = json::array();
        for (const auto& layer : rep.layers)
            layers.push_back({{"layer", layer.layer},
                              {"defined", layer.defined},
                              {"mpc", layer.defined ? json(layer.mpc) : json(nullptr)},
                              {"abs_rho", layer.abs_rho},
                              {"zero_neuron", layer.zero_neuron},
                              {"constant_neuron", layer.constant_neuron},
                              {"flagged", layer.flagged}});
        write_json_file(fs::path(opt.out) / "mpc.json",
                        json{{"threshold", rep.threshold},
                             {"layers", layers},
                             {"flagged_layers", rep.flagged_layers}});
        std::cout << "wrote " << (fs::path(opt.out) / "mpc.json").string() << "\n";
    }
    return 0;
}

int cmd_hessian(const Options& opt) {
    const NetworkParams p = load_params(opt.weights);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    ensure_writable(opt.out, opt.force);

    const SpectrumReport rep = spectrum(p, data, opt.tau);
    std::cout << "eigenvalues: " << rep.n_negative << " negative, " << rep.n_zero << " zero, "
              << rep.n_positive << " positive (tau " << fmt6(rep.tau) << ")\n";
    std::cout << "strict saddle: " << (rep.strict_saddle ? "yes" : "no") << "\n";

    std::string csv = "index,eigenvalue\n";
    for (std::size_t i = 0; i < rep.eigenvalues.size(); ++i)
        csv += std::to_string(i) + "," + double_to_string(rep.eigenvalues[i]) + "\n";
    write_text_file(fs::path(opt.out) / "eigenvalues.csv", csv);
    write_json_file(fs::path(opt.out) / "spectrum.json",
                    json{{"tau", rep.tau},
                         {"n_negative", rep.n_negative},
                         {"n_zero", rep.n_zero},
                         {"n_positive", rep.n_positive},
                         {"strict_saddle", rep.strict_saddle},
                         {"rel_asymmetry", rep.rel_asymmetry},
                         {"eigenvalues", rep.eigenvalues}});
    std::cout << "wrote " << (fs::path(opt.out) / "eigenvalues.csv").string() << "\n";
    return 0;
}

int cmd_criticality(const Options& opt) {
    const NetworkParams p = load_params(opt.weights);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    const CriticalityReport rep = criticality(p, data, opt.tol);
    std::cout << "gradient L1 " << fmt6(rep.grad_l1) << " (tol " << fmt6(rep.tol) << ") -> "
              << (rep.is_critical ? "critical" : "not critical") << "\n";
    if (!opt.out.empty()) {
        ensure_writable(opt.out, opt.force);
        write_json_file(fs::path(opt.out) / "criticality.json",
                        json{{"grad_l1", rep.grad_l1},
                             {"tol", rep.tol},
                             {"is_critical", rep.is_critical}});
        std::cout << "wrote " << (fs::path(opt.out) / "criticality.json").string() << "\n";
    }
    return 0;
}

int cmd_agreement(const Options& opt) {
    const NetworkParams a = load_params(opt.weights);
    const NetworkParams b = load_params(opt.other);
    const Dataset data = load_cli_data(opt.data, loss_from_flag(opt.loss));
    const AgreementReport rep = prediction_agreement(a, b, data);
    std::cout << "agreement " << fmt6(rep.agreement) << " over " << data.size() << " samples\n";
    if (!opt.out.empty()) {
        ensure_writable(opt.out, opt.force);
        json ratio = json::array();
        for (std::size_t i = 0; i < rep.pair_ratio.rows(); ++i) {
            json row = json::array();
            for (std::size_t j = 0; j < rep.pair_ratio.cols(); ++j)
                row.push_back(rep.pair_ratio(i, j));
            ratio.push_back(row);
        }
        write_json_file(fs::path(opt.out) / "agreement.json",
                        json{{"agreement", rep.agreement},
                             {"pair_ratio", ratio},
                             {"count_a", rep.count_a}});
        std::cout << "wrote " << (fs::path(opt.out) / "agreement.json").string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"Critical-point lifting toolkit for fully-connected networks"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub, bool needs_weights, bool needs_data) {
        auto* w = sub->add_option("--weights", opt.weights, "network weights JSON");
        if (needs_weights) w->required();
        auto* d = sub->add_option("--data", opt.data, "dataset CSV or JSON spec");
        if (needs_data) d->required();
        sub->add_option("--loss", opt.loss, "loss for --data files (mse|cross_entropy)");
        sub->add_flag("--force", opt.force, "overwrite an existing output bundle");
        return sub;
    };

    CLI::App* train = app.add_subcommand("train", "run a training experiment config");
    train->add_option("--config", opt.config, "experiment config JSON")->required();
    train->add_option("-o,--out", opt.out, "output bundle directory")->required();
    const CLI::Option* train_seed = train->add_option("--seed", opt.seed, "override config seed");
    train->add_flag("--force", opt.force, "overwrite an existing output bundle");

    CLI::App* expr = app.add_subcommand("experiment", "run any experiment config");
    expr->add_option("--config", opt.config, "experiment config JSON")->required();
    expr->add_option("-o,--out", opt.out, "output bundle directory")->required();
    const CLI::Option* expr_seed = expr->add_option("--seed", opt.seed, "override config seed");
    expr->add_flag("--force", opt.force, "overwrite an existing output bundle");

    CLI::App* lift = add_common(app.add_subcommand("lift", "insert hidden layers, verified"),
                                true, true);
    lift->add_option("--config", opt.config, "lift plan JSON (one plan or {\"plans\": [...]})")
        ->required();
    lift->add_option("-o,--out", opt.out, "output directory")->required();

    CLI::App* verify = add_common(
        app.add_subcommand("verify", "check a shallow/deep pair against the lifting conditions"),
        true, true);
    verify->add_option("--deep", opt.deep, "deep network weights JSON")->required();
    verify->add_option("--config", opt.config, "lift plan JSON")->required();
    verify->add_option("-o,--out", opt.out, "optional report directory");

    CLI::App* merge = add_common(app.add_subcommand("merge", "merge linearized layers"), true, true);
    merge->add_option("--threshold", opt.threshold, "MPC flag threshold");
    merge->add_option("-o,--out", opt.out, "output directory")->required();

    CLI::App* mpc_cmd = add_common(app.add_subcommand("mpc", "minimal Pearson correlation per layer"),
                                   true, true);
    mpc_cmd->add_option("--threshold", opt.threshold, "MPC flag threshold");
    mpc_cmd->add_option("-o,--out", opt.out, "optional report directory");

    CLI::App* hess = add_common(app.add_subcommand("hessian", "finite-difference Hessian spectrum"),
                                true, true);
    hess->add_option("--tau", opt.tau, "eigenvalue sign threshold");
    hess->add_option("-o,--out", opt.out, "output directory")->required();

    CLI::App* crit = add_common(app.add_subcommand("criticality", "gradient L1 against a tolerance"),
                                true, true);
    crit->add_option("--tol", opt.tol, "criticality tolerance");
    crit->add_option("-o,--out", opt.out, "optional report directory");

    CLI::App* agree = add_common(
        app.add_subcommand("agreement", "prediction agreement between two networks"), true, true);
    agree->add_option("--other", opt.other, "second network weights JSON")->required();
    agree->add_option("-o,--out", opt.out, "optional report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (train->parsed()) return cmd_experiment(opt, train_seed, true);
        if (expr->parsed()) return cmd_experiment(opt, expr_seed, false);
        if (lift->parsed()) return cmd_lift(opt);
        if (verify->parsed()) return cmd_verify(opt);
        if (merge->parsed()) return cmd_merge(opt);
        if (mpc_cmd->parsed()) return cmd_mpc(opt);
        if (hess->parsed()) return cmd_hessian(opt);
        if (crit->parsed()) return cmd_criticality(opt);
        if (agree->parsed()) return cmd_agreement(opt);
        std::cerr << app.help();
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

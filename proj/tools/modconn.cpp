// modconn command-line driver: simulate, fit, fit-directed, tune-k, evaluate.
//
// Exit codes: 0 success, 1 usage/input error, 2 numerical failure.

#include "modconn/baselines.hpp"
#include "modconn/directed.hpp"
#include "modconn/estimation.hpp"
#include "modconn/io.hpp"
#include "modconn/metrics.hpp"
#include "modconn/simulation.hpp"
#include "modconn/threads.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <iostream>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>

using namespace modconn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct Clock {
    std::string started = utc_timestamp();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void finish(RunManifest& m) const {
        m.started_utc = started;
        m.finished_utc = utc_timestamp();
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::vector<std::string> g_argv;

void write_run_manifest(const fs::path& output, Json config, std::optional<std::uint64_t> seed,
                        const Clock& clock, std::vector<double> iteration_seconds = {}) {
    RunManifest m;
    m.argv = g_argv;
    m.config = std::move(config);
    m.seed = seed;
    m.iteration_seconds = std::move(iteration_seconds);
    clock.finish(m);
    write_json(manifest_path_for(output), manifest_to_json(m));
}

std::vector<Eigen::Index> parse_k_grid(const std::string& text) {
    static const std::regex range(R"(^\s*(\d+)\s*\.\.\s*(\d+)\s*$)");
    std::smatch m;
    std::vector<Eigen::Index> grid;
    if (std::regex_match(text, m, range)) {
        const long lo = std::stol(m[1]), hi = std::stol(m[2]);
        if (lo < 1 || hi < lo) throw CLI::ValidationError("--k-grid", "empty or invalid range '" + text + "'");
        for (long k = lo; k <= hi; ++k) grid.push_back(k);
        return grid;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long k = std::stol(item, &used);
            if (used != item.size() || k < 1) throw std::invalid_argument(item);
            grid.push_back(k);
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--k-grid", "expected 'a..b' or a comma list, got '" + text + "'");
        }
    }
    if (grid.empty()) throw CLI::ValidationError("--k-grid", "empty grid");
    return grid;
}

// Each class centered with the given means.
MultiClassDataset center_with(const MultiClassDataset& ds, const std::vector<Vector>& means) {
    if (means.size() != ds.num_classes()) {
        throw DataError("model has " + std::to_string(means.size()) + " classes, data has " +
                        std::to_string(ds.num_classes()));
    }
    MultiClassDataset out = ds;
    for (std::size_t i = 0; i < ds.num_classes(); ++i) {
        if (means[i].size() != ds.classes[i].cols()) {
            throw DataError("class " + std::to_string(i) + ": model has p=" + std::to_string(means[i].size()) +
                            ", data has p=" + std::to_string(ds.classes[i].cols()));
        }
        out.classes[i] = center_columns(ds.classes[i], means[i]);
    }
    return out;
}

std::vector<Vector> class_means(const MultiClassDataset& ds) {
    std::vector<Vector> out;
    for (const auto& X : ds.classes) out.push_back(column_means(X));
    return out;
}

FitConfig load_config(const std::string& path, FitConfig base) {
    if (path.empty()) return base;
    return config_from_json(read_json(path), base);
}

// --- simulate -----------------------------------------------------------------

struct SimulateArgs {
    std::string regime = "gaussian";
    Eigen::Index p = 50, k = 5, n = 500, heldout = 0;
    std::size_t classes = 10;
    std::uint64_t seed = 0;
    double noise = 1.0;
    std::string out;
};

int run_simulate(const SimulateArgs& a) {
    const Clock clock;
    SimulationOptions opts;
    opts.noise_variance = a.noise;
    const Eigen::Index total = a.n + a.heldout;
    auto [ds, truth] = a.regime == "directed" ? gen_directed_dataset(a.p, a.k, a.classes, total, a.seed, opts)
                                              : gen_gaussian_dataset(a.p, a.k, a.classes, total, a.seed, opts);
    const fs::path out(a.out);
    if (a.heldout > 0) {
        MultiClassDataset train = ds, test = ds;
        for (std::size_t i = 0; i < ds.num_classes(); ++i) {
            train.classes[i] = ds.classes[i].topRows(a.n);
            test.classes[i] = ds.classes[i].bottomRows(a.heldout);
        }
        write_dataset(train, out, truth);
        write_dataset(test, out / "heldout", truth);
    } else {
        write_dataset(ds, out, truth);
    }
    Json cfg{{"regime", a.regime}, {"p", a.p},     {"k", a.k},        {"n", a.n},
             {"heldout", a.heldout}, {"classes", a.classes}, {"noise", a.noise}};
    write_run_manifest(out / "simulate", cfg, a.seed, clock);
    std::cout << "wrote " << a.classes << " classes (p=" << a.p << ", n=" << a.n << ") to " << out.string() << "\n";
    return kExitOk;
}

// --- fit ----------------------------------------------------------------------

struct FitArgs {
    std::string data, out, config, estimator, init;
    Eigen::Index k = 0;
    std::uint64_t seed = 0;
    bool seed_set = false, k_set = false;
};

FitConfig resolve_config(const FitArgs& a) {
    FitConfig cfg = load_config(a.config, FitConfig{});
    if (a.k_set) cfg.k = a.k;
    if (a.seed_set) cfg.seed = a.seed;
    if (!a.estimator.empty()) cfg.estimator = parse_estimator(a.estimator);
    if (!a.init.empty()) cfg.init = parse_init(a.init);
    return cfg;
}

void report_fit(const FitDiagnostics& d) {
    std::cout << "outer iterations " << d.iterations << ", inner " << d.total_inner_iterations
              << (d.converged ? ", converged" : ", NOT converged");
    if (!d.objective.empty()) std::cout << ", objective " << d.objective.back();
    if (!d.ortho_residual.empty()) std::cout << ", |W'W-I| " << d.ortho_residual.back();
    std::cout << "\n";
}

int run_fit(const FitArgs& a) {
    const Clock clock;
    const MultiClassDataset ds = read_dataset(a.data);
    const FitConfig cfg = resolve_config(a);
    FitResult res = fit(ds, cfg);
    StoredModel model{std::move(res.params), cfg, std::move(res.diagnostics), class_means(ds)};
    write_model(a.out, model);
    write_run_manifest(a.out, config_to_json(cfg), cfg.seed, clock, model.diagnostics.wall_seconds);
    report_fit(model.diagnostics);
    return kExitOk;
}

int run_fit_directed(const FitArgs& a) {
    const Clock clock;
    const MultiClassDataset ds = read_dataset(a.data);
    FitConfig cfg = resolve_config(a);
    cfg.estimator = Estimator::score_matching;
    const DirectedFit res = two_stage_fit(ds, cfg);
    Json j = directed_to_json(res, cfg);
    Json means = Json::array();
    for (const auto& mu : class_means(ds)) means.push_back(std::vector<double>(mu.data(), mu.data() + mu.size()));
    j["train_means"] = std::move(means);
    write_json(a.out, j);
    write_run_manifest(a.out, config_to_json(cfg), cfg.seed, clock, res.diagnostics.wall_seconds);
    report_fit(res.diagnostics);
    for (std::size_t i = 0; i < res.structural.size(); ++i) {
        if (res.structural[i].low_confidence) {
            std::cerr << "warning: class " << i << " causal order is low-confidence (contrast "
                      << res.structural[i].contrast << ")\n";
        }
    }
    return kExitOk;
}

// --- tune-k -------------------------------------------------------------------

struct TuneArgs {
    FitArgs fit;
    std::string grid = "2..10";
    double holdout = 0.2;
};

int run_tune(const TuneArgs& a) {
    const Clock clock;
    const MultiClassDataset ds = read_dataset(a.fit.data);
    const FitConfig cfg = resolve_config(a.fit);
    const auto grid = parse_k_grid(a.grid);
    const TuneResult res = tune_k(ds, grid, cfg, a.holdout);
    write_json(a.fit.out, tune_to_json(res, a.holdout));
    Json echo = config_to_json(cfg);
    echo["k_grid"] = grid;
    echo["holdout"] = a.holdout;
    write_run_manifest(a.fit.out, echo, cfg.seed, clock);
    for (const auto& e : res.table) std::cout << "k=" << e.k << "  held-out NLL " << e.mean_nll << "\n";
    std::cout << "best k = " << res.best_k << "\n";
    return kExitOk;
}

// --- evaluate -----------------------------------------------------------------

struct EvalArgs {
    std::string data, model, out, train, plot;
    std::string truth;
    bool truth_flag = false;
};

struct LoadedFit {
    ModelParams params;
    std::vector<Vector> means;
    std::vector<StructuralModel> structural;
    std::optional<std::uint64_t> seed;
};

LoadedFit load_fit(const fs::path& path) {
    const Json j = read_json(path);
    LoadedFit out;
    const std::string format = j.value("format", std::string());
    try {
        if (format == "modconn-model") {
            StoredModel m = model_from_json(j);
            out.params = std::move(m.params);
            out.means = std::move(m.train_means);
            out.seed = m.config.seed;
        } else if (format == "modconn-directed") {
            DirectedFit d = directed_from_json(j);
            out.params = std::move(d.params);
            out.structural = std::move(d.structural);
            for (const auto& mu : j.at("train_means")) {
                const auto xs = mu.get<std::vector<double>>();
                out.means.push_back(Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size())));
            }
            out.seed = j.at("config").at("seed").get<std::uint64_t>();
        } else {
            throw IoError("unrecognised format '" + format + "'");
        }
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return out;
}

void append_curves(const fs::path& path, const EvalReport& r, Eigen::Index n, std::uint64_t seed) {
    std::vector<std::pair<std::string, double>> rows;
    auto add = [&](const char* name, const std::optional<double>& x) {
        if (x) rows.emplace_back(name, *x);
    };
    add("loading_mse", r.loading_mse);
    add("latent_conn_mse", r.latent_conn_mse_mean);
    add("ari", r.ari);
    add("order_spearman", r.order_spearman_mean);
    add("structural_mse", r.structural_mse_mean);
    if (r.heldout_nll) rows.emplace_back("heldout_nll", r.heldout_nll->mean);
    if (r.sample_cov_nll) rows.emplace_back("sample_cov_nll", r.sample_cov_nll->mean);
    if (r.ledoit_wolf_nll) rows.emplace_back("ledoit_wolf_nll", r.ledoit_wolf_nll->mean);

    // Appends so repeated runs over n and seed build one plot-ready table.
    std::string text = fs::exists(path) ? read_text(path) : std::string("n,metric,value,seed\n");
    for (const auto& [name, value] : rows) {
        text += std::to_string(n) + "," + name + "," + format_double(value) + "," + std::to_string(seed) + "\n";
    }
    write_text_atomic(path, text);
}

int run_evaluate(const EvalArgs& a) {
    const Clock clock;
    const MultiClassDataset ds = read_dataset(a.data);
    const LoadedFit fit = load_fit(a.model);
    if (fit.params.p() != ds.num_variables()) {
        throw DataError("model has p=" + std::to_string(fit.params.p()) + ", data has p=" +
                        std::to_string(ds.num_variables()));
    }
    EvalReport report;

    // Held-out NLL: data centered with the means the model was trained with.
    const MultiClassDataset centered = center_with(ds, fit.means);
    report.heldout_nll = heldout_nll_eval(fit.params, centered);

    if (!a.train.empty()) {
        const MultiClassDataset train = read_dataset(a.train);
        baseline_nll(report, train, center_with(ds, class_means(train)));
    }

    std::optional<GroundTruth> truth;
    if (!a.truth.empty()) truth = read_truth(a.truth);
    else if (a.truth_flag) {
        truth = read_dataset_truth(a.data);
        if (!truth) throw IoError("--truth given but " + a.data + "/manifest.json names no ground truth");
    }
    if (truth) {
        if (truth->G.size() != fit.params.num_classes()) {
            throw DataError("ground truth has " + std::to_string(truth->G.size()) + " classes, model has " +
                            std::to_string(fit.params.num_classes()));
        }
        compare_loadings(report, fit.params, truth->W, truth->G);
        if (!fit.structural.empty() && !truth->B.empty()) {
            for (std::size_t i = 0; i < fit.structural.size(); ++i) {
                report.order_spearman.push_back(
                    order_spearman(relabel_order(fit.structural[i].order, report.alignment), truth->orders[i]));
                report.structural_mse.push_back(structural_mse(
                    fit.structural[i].B, standardize_structural(truth->B[i], truth->G[i]), report.alignment));
            }
            report.order_spearman_mean = ordered_mean(report.order_spearman);
            report.structural_mse_mean = ordered_mean(report.structural_mse);
        }
    }

    write_json(a.out, report_to_json(report));
    if (!a.plot.empty()) {
        Eigen::Index n = 0;
        for (const auto& X : ds.classes) n += X.rows();
        n /= static_cast<Eigen::Index>(std::max<std::size_t>(ds.num_classes(), 1));
        const std::uint64_t seed = ds.seed.value_or(fit.seed.value_or(0));
        append_curves(a.plot, report, n, seed);
    }
    write_run_manifest(a.out, Json{{"data", a.data}, {"model", a.model}, {"train", a.train}}, ds.seed, clock);

    std::cout << "held-out NLL " << report.heldout_nll->mean;
    if (report.sample_cov_nll) {
        std::cout << " (sample cov " << report.sample_cov_nll->mean << ", Ledoit-Wolf " << report.ledoit_wolf_nll->mean
                  << ")";
    }
    std::cout << "\n";
    if (report.loading_mse) {
        std::cout << "loading MSE " << *report.loading_mse << ", latent connectivity MSE "
                  << *report.latent_conn_mse_mean << ", ARI " << *report.ari << "\n";
    }
    if (report.order_spearman_mean) {
        std::cout << "order Spearman " << *report.order_spearman_mean << ", B MSE " << *report.structural_mse_mean
                  << "\n";
    }
    return kExitOk;
}

void add_fit_options(CLI::App* cmd, FitArgs& a, bool with_estimator) {
    cmd->add_option("--data", a.data, "dataset directory")->required();
    cmd->add_option_function<Eigen::Index>("--k", [&a](const Eigen::Index& k) { a.k = k; a.k_set = true; },
                                           "number of latent modules")->check(CLI::PositiveNumber);
    cmd->add_option_function<std::uint64_t>("--seed", [&a](const std::uint64_t& s) { a.seed = s; a.seed_set = true; },
                                            "random seed");
    cmd->add_option("--config", a.config, "JSON file overriding FitConfig fields");
    cmd->add_option("--init", a.init, "initial loading: spectral or random")
        ->check(CLI::IsMember({"spectral", "random"}));
    if (with_estimator) {
        cmd->add_option("--estimator", a.estimator, "sm or mle")->check(CLI::IsMember({"sm", "mle"}));
    }
}

}  // namespace

int main(int argc, char** argv) {
    g_argv.assign(argv, argv + argc);
    CLI::App app{"Modular latent connectivity across related classes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MODCONN_VERSION));

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic multi-class dataset");
    simulate->add_option("--regime", sim.regime, "gaussian or directed")
        ->check(CLI::IsMember({"gaussian", "directed"}));
    simulate->add_option("--p", sim.p, "observed variables")->check(CLI::PositiveNumber);
    simulate->add_option("--k", sim.k, "latent modules")->check(CLI::PositiveNumber);
    simulate->add_option("--n", sim.n, "observations per class")->check(CLI::PositiveNumber);
    simulate->add_option("--classes", sim.classes, "number of classes")->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "master seed");
    simulate->add_option("--noise", sim.noise, "observation noise variance")->check(CLI::PositiveNumber);
    simulate->add_option("--heldout", sim.heldout, "extra rows per class written to OUT/heldout")
        ->check(CLI::NonNegativeNumber);
    simulate->add_option("--out", sim.out, "output directory")->required();

    FitArgs fa;
    auto* fit_cmd = app.add_subcommand("fit", "fit shared loadings and per-class connectivity");
    add_fit_options(fit_cmd, fa, true);
    fit_cmd->add_option("--out", fa.out, "model.json path")->required();

    FitArgs da;
    auto* directed_cmd = app.add_subcommand("fit-directed", "two-stage fit with per-class causal order");
    add_fit_options(directed_cmd, da, false);
    directed_cmd->add_option("--out", da.out, "directed.json path")->required();

    TuneArgs ta;
    auto* tune_cmd = app.add_subcommand("tune-k", "select k by held-out likelihood");
    add_fit_options(tune_cmd, ta.fit, true);
    tune_cmd->add_option("--k-grid", ta.grid, "range a..b or comma list");
    tune_cmd->add_option("--holdout", ta.holdout, "held-out fraction per class")->check(CLI::Range(0.0, 1.0));
    tune_cmd->add_option("--out", ta.fit.out, "table.json path")->required();

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("evaluate", "score a fitted model on data and ground truth");
    eval_cmd->add_option("--data", ea.data, "evaluation dataset directory")->required();
    eval_cmd->add_option("--model", ea.model, "model.json or directed.json")->required();
    auto* truth_opt = eval_cmd->add_option("--truth", ea.truth, "compare with ground truth (default: the dataset's own)")
                          ->expected(0, 1);
    eval_cmd->add_option("--train", ea.train, "training dataset for the covariance baselines");
    eval_cmd->add_option("--out", ea.out, "report.json path")->required();
    eval_cmd->add_option("--emit-plot-data", ea.plot, "append (n, metric, value, seed) rows to this CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        configure_threads();
        if (simulate->parsed()) return run_simulate(sim);
        if (fit_cmd->parsed()) return run_fit(fa);
        if (directed_cmd->parsed()) return run_fit_directed(da);
        if (tune_cmd->parsed()) return run_tune(ta);
        if (eval_cmd->parsed()) {
            ea.truth_flag = truth_opt->count() > 0;
            return run_evaluate(ea);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

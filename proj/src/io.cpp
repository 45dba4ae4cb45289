#include "modconn/io.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace modconn {

// --- primitives ---------------------------------------------------------------

Json matrix_to_json(const Matrix& m) {
    Json data = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j, const std::string& what) {
    try {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const Json& data = j.at("data");
        if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw IoError(what + ": data length does not match rows*cols");
        }
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(what + ": malformed matrix (" + e.what() + ")");
    }
}

std::string format_double(double x) {
    char buf[64];
    // General format with 17 significant digits always round-trips a double.
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& where) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double x = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw IoError(where + ": cannot parse '" + std::string(text) + "' as a number");
    }
    if (!std::isfinite(x)) throw IoError(where + ": non-finite value '" + std::string(text) + "'");
    return x;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
    const fs::path tmp = parent / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_text(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_json(const fs::path& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

// --- datasets -----------------------------------------------------------------

std::string class_file_name(std::size_t cls) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "class_%03zu.csv", cls);
    return buf;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

std::string class_label(std::size_t cls, const fs::path& path) {
    return "class " + std::to_string(cls) + " (" + path.filename().string() + ")";
}

}  // namespace

void write_class_csv(const fs::path& path, const Matrix& X, const std::vector<std::string>& names) {
    std::string out;
    out.reserve(static_cast<std::size_t>(X.size()) * 24 + 64);
    for (std::size_t j = 0; j < names.size(); ++j) {
        if (names[j].find_first_of(",\n\r") != std::string::npos) {
            throw IoError("variable name '" + names[j] + "' contains a comma or newline");
        }
        if (j) out += ',';
        out += names[j];
    }
    out += '\n';
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            if (c) out += ',';
            out += format_double(X(r, c));
        }
        out += '\n';
    }
    write_text_atomic(path, out);
}

Matrix read_class_csv(const fs::path& path, std::size_t cls, std::vector<std::string>* names) {
    const std::string label = class_label(cls, path);
    if (!fs::exists(path)) throw IoError("missing file for " + label + ": " + path.string());
    const std::string text = read_text(path);
    std::string_view rest(text);
    std::vector<std::string_view> lines;
    while (!rest.empty()) {
        const auto pos = rest.find('\n');
        const auto line = strip_cr(rest.substr(0, pos));
        lines.push_back(line);
        if (pos == std::string_view::npos) break;
        rest.remove_prefix(pos + 1);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw IoError(label + ": empty file (no header)");

    const auto header = split_fields(lines.front());
    const auto p = static_cast<Eigen::Index>(header.size());
    if (names) {
        names->clear();
        for (auto h : header) names->emplace_back(h);
    }
    Matrix X(static_cast<Eigen::Index>(lines.size() - 1), p);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto fields = split_fields(lines[r]);
        if (static_cast<Eigen::Index>(fields.size()) != p) {
            throw IoError(label + " row " + std::to_string(r) + ": " + std::to_string(fields.size()) +
                          " fields, header has " + std::to_string(p));
        }
        for (Eigen::Index c = 0; c < p; ++c) {
            X(static_cast<Eigen::Index>(r - 1), c) =
                parse_double(fields[static_cast<std::size_t>(c)],
                             label + " row " + std::to_string(r) + " column " + std::to_string(c + 1));
        }
    }
    return X;
}

void write_dataset(const MultiClassDataset& ds, const fs::path& dir, const std::optional<GroundTruth>& truth) {
    ds.validate();
    const auto names = ds.variable_names.empty() ? default_variable_names(ds.num_variables()) : ds.variable_names;
    Json classes = Json::array();
    for (std::size_t i = 0; i < ds.num_classes(); ++i) {
        const std::string file = class_file_name(i);
        write_class_csv(dir / file, ds.classes[i], names);
        classes.push_back({{"file", file}, {"n", ds.classes[i].rows()}});
    }
    Json manifest{{"version", kFormatVersion},
                  {"p", ds.num_variables()},
                  {"N", ds.num_classes()},
                  {"classes", std::move(classes)}};
    manifest["seed"] = ds.seed ? Json(*ds.seed) : Json(nullptr);
    manifest["generator"] = ds.generator;
    if (truth) {
        write_json(dir / "ground_truth.json", truth_to_json(*truth));
        manifest["ground_truth"] = "ground_truth.json";
    } else {
        manifest["ground_truth"] = nullptr;
    }
    write_json(dir / "manifest.json", manifest);
}

MultiClassDataset read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("missing manifest.json in " + dir.string());
    const Json manifest = read_json(manifest_path);
    MultiClassDataset ds;
    try {
        const int version = manifest.at("version").get<int>();
        if (version != kFormatVersion) {
            throw IoError("manifest.json: unsupported format version " + std::to_string(version));
        }
        const auto p = manifest.at("p").get<Eigen::Index>();
        const auto N = manifest.at("N").get<std::size_t>();
        const Json& classes = manifest.at("classes");
        if (classes.size() != N) {
            throw IoError("manifest.json: N=" + std::to_string(N) + " but " + std::to_string(classes.size()) +
                          " class entries");
        }
        if (manifest.contains("seed") && !manifest["seed"].is_null()) ds.seed = manifest["seed"].get<std::uint64_t>();
        if (manifest.contains("generator")) ds.generator = manifest["generator"].get<std::string>();
        for (std::size_t i = 0; i < N; ++i) {
            const fs::path file = dir / classes[i].at("file").get<std::string>();
            std::vector<std::string> names;
            Matrix X = read_class_csv(file, i, &names);
            if (X.cols() != p) {
                throw DataError(class_label(i, file) + " has " + std::to_string(X.cols()) +
                                " variables, manifest says p=" + std::to_string(p));
            }
            if (classes[i].contains("n") && classes[i]["n"].get<Eigen::Index>() != X.rows()) {
                throw DataError(class_label(i, file) + " has " + std::to_string(X.rows()) +
                                " rows, manifest says n=" + std::to_string(classes[i]["n"].get<Eigen::Index>()));
            }
            if (i == 0) {
                ds.variable_names = std::move(names);
            } else if (names != ds.variable_names) {
                throw DataError(class_label(i, file) + ": header differs from class 0");
            }
            ds.classes.push_back(std::move(X));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest.json in " + dir.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

std::optional<GroundTruth> read_dataset_truth(const fs::path& dir) {
    const Json manifest = read_json(dir / "manifest.json");
    if (!manifest.contains("ground_truth") || manifest["ground_truth"].is_null()) return std::nullopt;
    return read_truth(dir / manifest["ground_truth"].get<std::string>());
}

Json truth_to_json(const GroundTruth& t) {
    Json G = Json::array(), B = Json::array();
    for (const auto& g : t.G) G.push_back(matrix_to_json(g));
    for (const auto& b : t.B) B.push_back(matrix_to_json(b));
    return Json{{"version", kFormatVersion}, {"regime", t.regime}, {"seed", t.seed}, {"W", matrix_to_json(t.W)},
                {"G", G}, {"B", B}, {"orders", t.orders}, {"v", t.v}};
}

GroundTruth truth_from_json(const Json& j) {
    GroundTruth t;
    try {
        t.regime = j.at("regime").get<std::string>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.W = matrix_from_json(j.at("W"), "ground truth W");
        for (const auto& g : j.at("G")) t.G.push_back(matrix_from_json(g, "ground truth G"));
        for (const auto& b : j.at("B")) t.B.push_back(matrix_from_json(b, "ground truth B"));
        t.orders = j.at("orders").get<std::vector<std::vector<int>>>();
        t.v = j.at("v").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("ground truth: ") + e.what());
    }
    return t;
}

GroundTruth read_truth(const fs::path& path) { return truth_from_json(read_json(path)); }

// --- models ---------------------------------------------------------------------

Json config_to_json(const FitConfig& cfg) {
    return Json{{"k", cfg.k},
                {"estimator", to_string(cfg.estimator)},
                {"init", to_string(cfg.init)},
                {"seed", cfg.seed},
                {"rho0", cfg.rho0},
                {"rho_growth", cfg.rho_growth},
                {"rho_max", cfg.rho_max},
                {"inner_max", cfg.inner_max},
                {"outer_max", cfg.outer_max},
                {"grad_tol", cfg.grad_tol},
                {"ortho_tol", cfg.ortho_tol},
                {"armijo",
                 {{"c", cfg.armijo.c},
                  {"backtrack", cfg.armijo.backtrack},
                  {"eta0", cfg.armijo.eta0},
                  {"max_backtracks", cfg.armijo.max_backtracks}}}};
}

FitConfig config_from_json(const Json& j, FitConfig cfg) {
    if (!j.is_object()) throw IoError("config must be a JSON object");
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "k") cfg.k = val.get<Eigen::Index>();
            else if (key == "estimator") cfg.estimator = parse_estimator(val.get<std::string>());
            else if (key == "init") cfg.init = parse_init(val.get<std::string>());
            else if (key == "seed") cfg.seed = val.get<std::uint64_t>();
            else if (key == "rho0") cfg.rho0 = val.get<double>();
            else if (key == "rho_growth") cfg.rho_growth = val.get<double>();
            else if (key == "rho_max") cfg.rho_max = val.get<double>();
            else if (key == "inner_max") cfg.inner_max = val.get<int>();
            else if (key == "outer_max") cfg.outer_max = val.get<int>();
            else if (key == "grad_tol") cfg.grad_tol = val.get<double>();
            else if (key == "ortho_tol") cfg.ortho_tol = val.get<double>();
            else if (key == "armijo") {
                for (const auto& [ak, av] : val.items()) {
                    if (ak == "c") cfg.armijo.c = av.get<double>();
                    else if (ak == "backtrack") cfg.armijo.backtrack = av.get<double>();
                    else if (ak == "eta0") cfg.armijo.eta0 = av.get<double>();
                    else if (ak == "max_backtracks") cfg.armijo.max_backtracks = av.get<int>();
                    else throw IoError("unknown armijo config key '" + ak + "'");
                }
            } else {
                throw IoError("unknown config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("config: ") + e.what());
    }
    return cfg;
}

Json diagnostics_to_json(const FitDiagnostics& d) {
    return Json{{"iterations", d.iterations},
                {"total_inner_iterations", d.total_inner_iterations},
                {"converged", d.converged},
                {"clipped", d.clipped},
                {"objective", d.objective},
                {"ortho_residual", d.ortho_residual},
                {"grad_norm", d.grad_norm},
                {"inner_iterations", d.inner_iterations}};
}

namespace {

FitDiagnostics diagnostics_from_json(const Json& j) {
    FitDiagnostics d;
    d.iterations = j.at("iterations").get<int>();
    d.total_inner_iterations = j.at("total_inner_iterations").get<int>();
    d.converged = j.at("converged").get<bool>();
    d.clipped = j.at("clipped").get<bool>();
    d.objective = j.at("objective").get<std::vector<double>>();
    d.ortho_residual = j.at("ortho_residual").get<std::vector<double>>();
    d.grad_norm = j.at("grad_norm").get<std::vector<double>>();
    d.inner_iterations = j.at("inner_iterations").get<std::vector<int>>();
    return d;
}

Json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const Json& j) {
    const auto xs = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

}  // namespace

Json params_to_json(const ModelParams& params) {
    Json G = Json::array();
    for (const auto& g : params.G) G.push_back(matrix_to_json(g));
    return Json{{"W", matrix_to_json(params.W)}, {"G", G}, {"v", params.v}};
}

ModelParams params_from_json(const Json& j) {
    ModelParams params;
    try {
        params.W = matrix_from_json(j.at("W"), "W");
        for (const auto& g : j.at("G")) params.G.push_back(matrix_from_json(g, "G"));
        params.v = j.at("v").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model parameters: ") + e.what());
    }
    params.validate();
    return params;
}

Json model_to_json(const StoredModel& m) {
    Json means = Json::array();
    for (const auto& mu : m.train_means) means.push_back(vector_to_json(mu));
    Json j{{"format", "modconn-model"},
           {"version", kFormatVersion},
           {"p", m.params.p()},
           {"k", m.params.k()},
           {"N", m.params.num_classes()}};
    j.update(params_to_json(m.params));
    j["train_means"] = std::move(means);
    j["config"] = config_to_json(m.config);
    j["diagnostics"] = diagnostics_to_json(m.diagnostics);
    return j;
}

StoredModel model_from_json(const Json& j) {
    StoredModel m;
    try {
        if (j.value("format", std::string()) != "modconn-model") throw IoError("not a model file");
        m.params = params_from_json(j);
        m.config = config_from_json(j.at("config"));
        m.diagnostics = diagnostics_from_json(j.at("diagnostics"));
        for (const auto& mu : j.at("train_means")) m.train_means.push_back(vector_from_json(mu));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model: ") + e.what());
    }
    return m;
}

void write_model(const fs::path& path, const StoredModel& m) { write_json(path, model_to_json(m)); }

StoredModel read_model(const fs::path& path) {
    try {
        return model_from_json(read_json(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

Json structural_to_json(const StructuralModel& s) {
    return Json{{"order", s.order},
                {"B", matrix_to_json(s.B)},
                {"disturbance_variances", vector_to_json(s.disturbance_variances)},
                {"contrast", s.contrast},
                {"low_confidence", s.low_confidence}};
}

StructuralModel structural_from_json(const Json& j) {
    StructuralModel s;
    s.order = j.at("order").get<std::vector<int>>();
    s.B = matrix_from_json(j.at("B"), "structural B");
    s.disturbance_variances = vector_from_json(j.at("disturbance_variances"));
    s.contrast = j.at("contrast").get<double>();
    s.low_confidence = j.at("low_confidence").get<bool>();
    s.validate();
    return s;
}

Json directed_to_json(const DirectedFit& fit, const FitConfig& cfg) {
    Json structural = Json::array();
    for (const auto& s : fit.structural) structural.push_back(structural_to_json(s));
    Json j{{"format", "modconn-directed"}, {"version", kFormatVersion}};
    j.update(params_to_json(fit.params));
    j["structural"] = std::move(structural);
    j["config"] = config_to_json(cfg);
    j["diagnostics"] = diagnostics_to_json(fit.diagnostics);
    return j;
}

DirectedFit directed_from_json(const Json& j) {
    DirectedFit fit;
    try {
        if (j.value("format", std::string()) != "modconn-directed") throw IoError("not a directed-fit file");
        fit.params = params_from_json(j);
        fit.diagnostics = diagnostics_from_json(j.at("diagnostics"));
        for (const auto& s : j.at("structural")) fit.structural.push_back(structural_from_json(s));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("directed fit: ") + e.what());
    }
    return fit;
}

Json tune_to_json(const TuneResult& r, double holdout_frac) {
    Json table = Json::array();
    for (const auto& e : r.table) {
        table.push_back({{"k", e.k}, {"mean_nll", e.mean_nll}, {"class_nll", e.class_nll}, {"converged", e.converged}});
    }
    return Json{{"format", "modconn-tune"}, {"holdout", holdout_frac}, {"best_k", r.best_k}, {"table", table}};
}

namespace {

Json optional_json(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

Json nll_json(const std::optional<NllSummary>& s) {
    if (!s) return nullptr;
    return Json{{"per_class", s->per_class}, {"mean", s->mean}};
}

}  // namespace

Json report_to_json(const EvalReport& r) {
    return Json{{"format", "modconn-report"},
                {"loading_mse", optional_json(r.loading_mse)},
                {"latent_conn_mse", {{"per_class", r.latent_conn_mse}, {"mean", optional_json(r.latent_conn_mse_mean)}}},
                {"heldout_nll", nll_json(r.heldout_nll)},
                {"baseline_nll", {{"sample_cov", nll_json(r.sample_cov_nll)}, {"ledoit_wolf", nll_json(r.ledoit_wolf_nll)}}},
                {"ari", optional_json(r.ari)},
                {"order_spearman", {{"per_class", r.order_spearman}, {"mean", optional_json(r.order_spearman_mean)}}},
                {"structural_mse", {{"per_class", r.structural_mse}, {"mean", optional_json(r.structural_mse_mean)}}},
                {"alignment", r.alignment}};
}

// --- run manifests ----------------------------------------------------------------

Json manifest_to_json(const RunManifest& m) {
    return Json{{"format", "modconn-run"},
                {"tool_version", MODCONN_VERSION},
                {"argv", m.argv},
                {"config", m.config},
                {"seed", m.seed ? Json(*m.seed) : Json(nullptr)},
                {"started_utc", m.started_utc},
                {"finished_utc", m.finished_utc},
                {"wall_seconds", m.wall_seconds},
                {"iteration_seconds", m.iteration_seconds}};
}

fs::path manifest_path_for(const fs::path& output) {
    fs::path p = output;
    p += ".manifest.json";
    return p;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace modconn

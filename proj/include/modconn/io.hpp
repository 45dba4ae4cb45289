#pragma once

// On-disk formats.
//
// A dataset is a directory holding manifest.json, one CSV per class
// (header = variable names, then one observation per row) and optionally
// ground_truth.json. Models, directed fits, tuning tables and evaluation
// reports are single JSON files. Matrices are stored as
// {"rows": r, "cols": c, "data": [row-major values]}.
//
// Every file is written to a temporary sibling and renamed into place.

#include "modconn/common.hpp"
#include "modconn/dataset.hpp"
#include "modconn/directed.hpp"
#include "modconn/estimation.hpp"
#include "modconn/metrics.hpp"
#include "modconn/simulation.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace modconn {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// --- primitives ---------------------------------------------------------------

[[nodiscard]] Json matrix_to_json(const Matrix& m);
[[nodiscard]] Matrix matrix_from_json(const Json& j, const std::string& what);

/// Shortest decimal form that parses back to the same double.
[[nodiscard]] std::string format_double(double x);
/// Throws IoError naming `where` when `text` is not a complete finite number.
[[nodiscard]] double parse_double(std::string_view text, const std::string& where);

/// Writes to `path` via a temporary file in the same directory.
void write_text_atomic(const fs::path& path, const std::string& content);
[[nodiscard]] std::string read_text(const fs::path& path);
[[nodiscard]] Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

// --- datasets -----------------------------------------------------------------

[[nodiscard]] std::string class_file_name(std::size_t cls);

void write_class_csv(const fs::path& path, const Matrix& X, const std::vector<std::string>& names);
[[nodiscard]] Matrix read_class_csv(const fs::path& path, std::size_t cls, std::vector<std::string>* names);

void write_dataset(const MultiClassDataset& ds, const fs::path& dir,
                   const std::optional<GroundTruth>& truth = std::nullopt);
[[nodiscard]] MultiClassDataset read_dataset(const fs::path& dir);
/// Ground truth referenced by the manifest, if any.
[[nodiscard]] std::optional<GroundTruth> read_dataset_truth(const fs::path& dir);

[[nodiscard]] Json truth_to_json(const GroundTruth& t);
[[nodiscard]] GroundTruth truth_from_json(const Json& j);
[[nodiscard]] GroundTruth read_truth(const fs::path& path);

// --- models ---------------------------------------------------------------------

[[nodiscard]] Json config_to_json(const FitConfig& cfg);
/// Overrides fields of `base` with those present in `j`; unknown keys are errors.
[[nodiscard]] FitConfig config_from_json(const Json& j, FitConfig base = {});

/// Deterministic fields only (no wall times), so equal fits give equal bytes.
[[nodiscard]] Json diagnostics_to_json(const FitDiagnostics& d);
[[nodiscard]] Json params_to_json(const ModelParams& params);
[[nodiscard]] ModelParams params_from_json(const Json& j);

struct StoredModel {
    ModelParams params;
    FitConfig config;
    FitDiagnostics diagnostics;
    std::vector<Vector> train_means;  // per class, used to center held-out data
};

[[nodiscard]] Json model_to_json(const StoredModel& m);
[[nodiscard]] StoredModel model_from_json(const Json& j);
void write_model(const fs::path& path, const StoredModel& m);
[[nodiscard]] StoredModel read_model(const fs::path& path);

[[nodiscard]] Json structural_to_json(const StructuralModel& s);
[[nodiscard]] StructuralModel structural_from_json(const Json& j);
[[nodiscard]] Json directed_to_json(const DirectedFit& fit, const FitConfig& cfg);
[[nodiscard]] DirectedFit directed_from_json(const Json& j);

[[nodiscard]] Json tune_to_json(const TuneResult& r, double holdout_frac);
[[nodiscard]] Json report_to_json(const EvalReport& r);

// --- run manifests ----------------------------------------------------------------

/// Everything needed to replay a command: argv, config echo, seed, version and timing.
struct RunManifest {
    std::vector<std::string> argv;
    Json config;
    std::optional<std::uint64_t> seed;
    std::string started_utc;
    std::string finished_utc;
    double wall_seconds = 0.0;
    std::vector<double> iteration_seconds;
};

[[nodiscard]] Json manifest_to_json(const RunManifest& m);
/// `<output>.manifest.json` next to the primary output.
[[nodiscard]] fs::path manifest_path_for(const fs::path& output);
[[nodiscard]] std::string utc_timestamp();

}  // namespace modconn

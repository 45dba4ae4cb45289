#include "doctest.h"
#include "test_support.hpp"

#include "modconn/io.hpp"
#include "modconn/simulation.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <unistd.h>

using namespace modconn;
using namespace modconn::testing;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("modconn_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

void overwrite(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
}

}  // namespace

TEST_CASE("format_double round-trips") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::uint64_t> bits;
    int tested = 0;
    while (tested < 20000) {
        const std::uint64_t b = bits(rng);
        double x;
        std::memcpy(&x, &b, sizeof x);
        if (!std::isfinite(x)) continue;
        const double y = parse_double(format_double(x), "test");
        CHECK(std::memcmp(&x, &y, sizeof x) == 0);
        ++tested;
    }
    for (double x : {0.1, -0.0, 1e-308, 4.9e-324, std::numeric_limits<double>::max(), 1.0 / 3.0}) {
        const double y = parse_double(format_double(x), "test");
        CHECK(std::memcmp(&x, &y, sizeof x) == 0);
    }
    CHECK_THROWS_AS((void)parse_double("nan", "cell"), IoError);
    CHECK_THROWS_AS((void)parse_double("inf", "cell"), IoError);
    CHECK_THROWS_AS((void)parse_double("1.5x", "cell"), IoError);
    CHECK_THROWS_AS((void)parse_double("", "cell"), IoError);
    CHECK(parse_double(" +2.5\r", "cell") == 2.5);
}

TEST_CASE("dataset round trip") {
    TempDir tmp;
    auto [ds, truth] = gen_directed_dataset(12, 3, 4, 25, 7);
    ds.classes[2] = ds.classes[2].topRows(9).eval();  // classes may differ in n
    write_dataset(ds, tmp.path, truth);

    const MultiClassDataset back = read_dataset(tmp.path);
    REQUIRE(back.num_classes() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(bit_equal(back.classes[i], ds.classes[i]));
    CHECK(back.variable_names == ds.variable_names);
    CHECK(back.seed == ds.seed);
    CHECK(back.generator == ds.generator);

    const auto t = read_dataset_truth(tmp.path);
    REQUIRE(t);
    CHECK(bit_equal(t->W, truth.W));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(bit_equal(t->G[i], truth.G[i]));
        CHECK(bit_equal(t->B[i], truth.B[i]));
        CHECK(t->orders[i] == truth.orders[i]);
    }
    CHECK(t->v == truth.v);
    CHECK(t->regime == "directed");

    // Writing the re-read dataset reproduces identical files.
    TempDir again;
    write_dataset(back, again.path, *t);
    for (const char* f : {"manifest.json", "class_000.csv", "class_003.csv", "ground_truth.json"})
        CHECK(read_text(tmp.path / f) == read_text(again.path / f));
}

TEST_CASE("dataset errors name the offending class or file") {
    TempDir tmp;
    auto [ds, truth] = gen_gaussian_dataset(6, 2, 3, 10, 2);
    write_dataset(ds, tmp.path);
    CHECK_FALSE(read_dataset_truth(tmp.path).has_value());

    SUBCASE("p mismatch") {
        Matrix X = ds.classes[1].leftCols(5);
        std::vector<std::string> names(ds.variable_names.begin(), ds.variable_names.begin() + 5);
        write_class_csv(tmp.path / class_file_name(1), X, names);
        const std::string msg = error_of([&] { (void)read_dataset(tmp.path); });
        CHECK(msg.find("class 1") != std::string::npos);
        CHECK(msg.find("p=6") != std::string::npos);
    }
    SUBCASE("non-finite value") {
        std::string text = read_text(tmp.path / "class_002.csv");
        const auto pos = text.find('\n', text.find('\n') + 1);
        text.insert(pos + 1, "nan,1,1,1,1,1\n");
        overwrite(tmp.path / "class_002.csv", text);
        const std::string msg = error_of([&] { (void)read_dataset(tmp.path); });
        CHECK(msg.find("class 2") != std::string::npos);
        CHECK(msg.find("non-finite") != std::string::npos);
    }
    SUBCASE("missing class file") {
        fs::remove(tmp.path / "class_001.csv");
        const std::string msg = error_of([&] { (void)read_dataset(tmp.path); });
        CHECK(msg.find("missing file") != std::string::npos);
        CHECK(msg.find("class_001.csv") != std::string::npos);
    }
    SUBCASE("missing directory and manifest") {
        CHECK(error_of([&] { (void)read_dataset(tmp.path / "nope"); }).find("not found") != std::string::npos);
        fs::remove(tmp.path / "manifest.json");
        CHECK(error_of([&] { (void)read_dataset(tmp.path); }).find("manifest.json") != std::string::npos);
    }
    SUBCASE("ragged row") {
        std::string text = read_text(tmp.path / "class_000.csv");
        text += "1,2\n";
        overwrite(tmp.path / "class_000.csv", text);
        const std::string msg = error_of([&] { (void)read_dataset(tmp.path); });
        CHECK(msg.find("class 0") != std::string::npos);
        CHECK(msg.find("fields") != std::string::npos);
    }
    SUBCASE("errors are distinct") {
        std::set<std::string> messages;
        TempDir a, b, c;
        write_dataset(ds, a.path);
        write_dataset(ds, b.path);
        write_dataset(ds, c.path);
        write_class_csv(a.path / "class_001.csv", ds.classes[1].leftCols(5),
                        std::vector<std::string>(ds.variable_names.begin(), ds.variable_names.begin() + 5));
        overwrite(b.path / "class_001.csv", read_text(b.path / "class_001.csv") + "1,2,3,4,5,inf\n");
        fs::remove(c.path / "class_001.csv");
        for (const auto* d : {&a, &b, &c}) messages.insert(error_of([&] { (void)read_dataset(d->path); }));
        CHECK(messages.size() == 3);
    }
}

TEST_CASE("large multi-class manifest loads") {
    TempDir tmp;
    std::mt19937_64 rng(3);
    MultiClassDataset ds;
    for (int i = 0; i < 106; ++i) ds.classes.push_back(random_normal(296, 116, rng));
    ds.variable_names = default_variable_names(116);
    write_dataset(ds, tmp.path);
    const auto back = read_dataset(tmp.path);
    CHECK(back.num_classes() == 106);
    CHECK(back.num_variables() == 116);
    CHECK(back.classes[105].rows() == 296);
    CHECK(bit_equal(back.classes[57], ds.classes[57]));
}

TEST_CASE("model serialization") {
    std::mt19937_64 rng(4);
    StoredModel m;
    m.params = random_params(9, 3, 2, rng, true);
    m.config.k = 3;
    m.config.seed = 77;
    m.config.estimator = Estimator::mle;
    m.config.init = InitMethod::random;
    m.config.armijo.c = 3e-4;
    m.diagnostics.objective = {1.5, 1.0 / 3.0};
    m.diagnostics.ortho_residual = {0.1, 1e-9};
    m.diagnostics.grad_norm = {2.0, 1e-7};
    m.diagnostics.inner_iterations = {100, 12};
    m.diagnostics.wall_seconds = {0.25, 0.5};
    m.diagnostics.iterations = 2;
    m.diagnostics.total_inner_iterations = 112;
    m.diagnostics.converged = true;
    m.train_means = {random_normal(9, 1, rng).col(0), random_normal(9, 1, rng).col(0)};

    TempDir tmp;
    write_model(tmp.path / "model.json", m);
    const StoredModel back = read_model(tmp.path / "model.json");
    CHECK(bit_equal(back.params.W, m.params.W));
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(bit_equal(back.params.G[i], m.params.G[i]));
        CHECK(bit_equal(back.train_means[i], m.train_means[i]));
    }
    CHECK(back.params.v == m.params.v);
    CHECK(back.config.seed == 77);
    CHECK(back.config.estimator == Estimator::mle);
    CHECK(back.config.init == InitMethod::random);
    CHECK(back.config.armijo.c == 3e-4);
    CHECK(back.diagnostics.objective == m.diagnostics.objective);
    CHECK(back.diagnostics.inner_iterations == m.diagnostics.inner_iterations);
    CHECK(back.diagnostics.converged);
    // Wall times stay out of model.json so equal fits give equal bytes.
    CHECK(read_text(tmp.path / "model.json").find("wall") == std::string::npos);

    // W is stored row-major.
    const Json j = read_json(tmp.path / "model.json");
    CHECK(j["W"]["data"][1].get<double>() == m.params.W(0, 1));
}

TEST_CASE("config overrides") {
    const FitConfig cfg = config_from_json(Json::parse(R"({"k": 4, "rho_max": 100, "armijo": {"eta0": 0.5}})"));
    CHECK(cfg.k == 4);
    CHECK(cfg.rho_max == 100.0);
    CHECK(cfg.armijo.eta0 == 0.5);
    CHECK(cfg.inner_max == FitConfig{}.inner_max);
    const std::string msg = error_of([] { (void)config_from_json(Json::parse(R"({"rho": 2})")); });
    CHECK(msg.find("'rho'") != std::string::npos);
    CHECK_THROWS_AS((void)config_from_json(Json::parse(R"({"estimator": "ica"})")), Error);
}

TEST_CASE("structural serialization") {
    StructuralModel s;
    s.order = {2, 0, 1};
    s.B = Matrix::Zero(3, 3);
    s.B(0, 2) = 0.4;
    s.B(1, 0) = -0.7;
    s.disturbance_variances = Vector::Constant(3, 0.9);
    s.contrast = 0.01;
    s.low_confidence = true;
    const StructuralModel back = structural_from_json(structural_to_json(s));
    CHECK(back.order == s.order);
    CHECK(bit_equal(back.B, s.B));
    CHECK(back.low_confidence);

    s.B(2, 1) = 0.3;  // points backward in the order
    CHECK_THROWS((void)structural_from_json(structural_to_json(s)));
}

TEST_CASE("atomic writes leave no temporaries") {
    TempDir tmp;
    write_text_atomic(tmp.path / "sub" / "a.txt", "one");
    write_text_atomic(tmp.path / "sub" / "a.txt", "two");
    CHECK(read_text(tmp.path / "sub" / "a.txt") == "two");
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.path / "sub")) ++files;
    CHECK(files == 1);
    CHECK(manifest_path_for("out/model.json") == fs::path("out/model.json.manifest.json"));
    CHECK(utc_timestamp().size() == 20);
}

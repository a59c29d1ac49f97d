#include "countsplit/cli.hpp"
#include "countsplit/count_matrix.hpp"
#include "countsplit/simulation.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace countsplit;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

// Fresh scratch directory holding a small simulated matrix with a trajectory signal.
struct Workspace {
    fs::path dir;
    fs::path input;

    explicit Workspace(const std::string& name) {
        dir = fs::temp_directory_path() / ("countsplit_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
        auto scenario = signal_scenario(LatentModel::trajectory, 80, 8, 0.5, InterceptMix::high, 21);
        auto data = generate(scenario);
        for (std::size_t i = 0; i < data.counts.n_cells(); ++i) {
            data.counts(i, 0) += 1;
        }
        data.counts.set_gene_names({"g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8"});
        input = dir / "x.csv";
        save_matrix(data.counts, input, MatrixFormat::csv_dense);
    }
    ~Workspace() { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }
};

}

TEST_CASE("split writes train, test and manifest that add back to the input") {
    Workspace ws("split");
    const auto r = run_cli({"split", "--input", ws.input.string(), "--epsilon", "0.5", "--seed", "7", "--out-prefix", ws.path("run1")});
    REQUIRE(r.code == 0);
    const auto input = load_matrix(ws.input, MatrixFormat::csv_dense);
    const auto train = load_matrix(ws.path("run1.train.csv"), MatrixFormat::csv_dense);
    const auto test = load_matrix(ws.path("run1.test.csv"), MatrixFormat::csv_dense);
    for (std::size_t k = 0; k < input.values().size(); ++k) {
        CHECK(train.values()[k] + test.values()[k] == input.values()[k]);
    }
    const auto manifest = nlohmann::json::parse(slurp(ws.path("run1.manifest.json")));
    CHECK(manifest["schema_version"] == cli::manifest_schema_version);
    CHECK(manifest["command"] == "split");
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["artifact_paths"].size() == 3);
    CHECK(manifest.contains("wall_time_seconds"));

    const auto again = run_cli({"split", "--input", ws.input.string(), "--epsilon", "0.5", "--seed", "7", "--out-prefix", ws.path("run2")});
    REQUIRE(again.code == 0);
    CHECK(slurp(ws.path("run1.train.csv")) == slurp(ws.path("run2.train.csv")));
}

TEST_CASE("split round trips MatrixMarket input") {
    Workspace ws("split_mtx");
    const auto input = load_matrix(ws.input, MatrixFormat::csv_dense);
    const auto mtx = ws.path("x.mtx");
    save_matrix(input, mtx, MatrixFormat::matrix_market);
    REQUIRE(run_cli({"split", "--input", mtx, "--seed", "3", "--out-prefix", ws.path("m")}).code == 0);
    const auto train = load_matrix(ws.path("m.train.mtx"), MatrixFormat::matrix_market);
    const auto test = load_matrix(ws.path("m.test.mtx"), MatrixFormat::matrix_market);
    for (std::size_t k = 0; k < input.values().size(); ++k) {
        CHECK(train.values()[k] + test.values()[k] == input.values()[k]);
    }
}

TEST_CASE("exit codes distinguish configuration, input and parse failures") {
    Workspace ws("codes");
    CHECK(run_cli({"split", "--input", ws.input.string(), "--epsilon", "1.0", "--out-prefix", ws.path("a")}).code == 2);
    CHECK(run_cli({"split", "--input", ws.path("missing.csv"), "--out-prefix", ws.path("a")}).code == 3);
    spit(ws.dir / "bad.csv", "1,2\n3,-1\n");
    const auto bad = run_cli({"split", "--input", ws.path("bad.csv"), "--out-prefix", ws.path("a")});
    CHECK(bad.code == 3);
    CHECK(bad.err.find("row 2") != std::string::npos);
    const auto unknown = run_cli({"de", "--input", ws.input.string(), "--method", "nope", "--out-prefix", ws.path("a")});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("countsplit") != std::string::npos);
    CHECK(unknown.err.find("double_dip") != std::string::npos);
    CHECK(run_cli({"simulate", "--preset", "fig2a", "--replicates", "0", "--out-prefix", ws.path("s")}).code == 2);
    CHECK(run_cli({"simulate", "--preset", "nope", "--out-prefix", ws.path("s")}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"split", "--input", ws.input.string()}).code == 2);
    CHECK(run_cli({"report", "--output", ws.path("r.csv")}).code == 2);
    CHECK(run_cli({"de", "--input", ws.input.string(), "--gamma", "known", "--out-prefix", ws.path("a")}).code == 2);
}

TEST_CASE("help exits zero") {
    const auto r = run_cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("split") != std::string::npos);
}

TEST_CASE("de writes the per-gene table with one row per gene") {
    Workspace ws("de");
    for (const char* method : {"countsplit", "doubledip"}) {
        const auto prefix = ws.path(method);
        const auto r = run_cli({"de", "--input", ws.input.string(), "--method", method, "--epsilon", "0.5", "--estimator", "pc1",
            "--family", "poisson", "--seed", "1", "--out-prefix", prefix});
        REQUIRE(r.code == 0);
        const auto csv = slurp(prefix + ".csv");
        CHECK(csv.rfind("# schema_version=1\ngene,name,estimate,std_error,p_value,ci_lower,ci_upper,status,latent_group\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 8);
        CHECK(csv.find("\n0,g1,") != std::string::npos);
        const auto json = nlohmann::json::parse(slurp(prefix + ".json"));
        CHECK(json.contains("schema_version"));
        const auto manifest = nlohmann::json::parse(slurp(prefix + ".manifest.json"));
        CHECK(manifest["command"] == "de");
    }
}

TEST_CASE("de output is byte-identical across runs and thread counts") {
    Workspace ws("de_repro");
    std::vector<std::string> base{"de", "--input", ws.input.string(), "--method", "jackstraw_efficient", "--resamples", "5",
        "--permuted-genes", "2", "--seed", "4"};
    auto a = base;
    a.insert(a.end(), {"--threads", "1", "--out-prefix", ws.path("a")});
    auto b = base;
    b.insert(b.end(), {"--threads", "3", "--out-prefix", ws.path("b")});
    REQUIRE(run_cli(a).code == 0);
    REQUIRE(run_cli(b).code == 0);
    CHECK(slurp(ws.path("a.csv")) == slurp(ws.path("b.csv")));
    CHECK(slurp(ws.path("a.json")) == slurp(ws.path("b.json")));
}

TEST_CASE("config file values apply and command-line flags override them") {
    Workspace ws("config");
    spit(ws.dir / "cfg.json", R"({"epsilon": 0.3, "seed": 9, "method": "count_split"})");
    REQUIRE(run_cli({"de", "--config", ws.path("cfg.json"), "--input", ws.input.string(), "--out-prefix", ws.path("c")}).code == 0);
    REQUIRE(run_cli({"de", "--input", ws.input.string(), "--epsilon", "0.3", "--seed", "9", "--out-prefix", ws.path("d")}).code == 0);
    CHECK(slurp(ws.path("c.csv")) == slurp(ws.path("d.csv")));
    REQUIRE(run_cli({"de", "--config", ws.path("cfg.json"), "--input", ws.input.string(), "--seed", "10", "--out-prefix",
                ws.path("e")})
                .code == 0);
    const auto manifest = nlohmann::json::parse(slurp(ws.path("e.manifest.json")));
    CHECK(manifest["seed"] == 10);
    CHECK(manifest["config"]["method_config"]["epsilon"] == 0.3);
    spit(ws.dir / "broken.json", "{not json");
    CHECK(run_cli({"de", "--config", ws.path("broken.json"), "--input", ws.input.string(), "--out-prefix", ws.path("f")}).code == 2);
}

TEST_CASE("compare mode writes three reports and a joined p-value table") {
    Workspace ws("compare");
    REQUIRE(run_cli({"de", "--input", ws.input.string(), "--compare", "--seed", "2", "--out-prefix", ws.path("cmp")}).code == 0);
    for (const char* method : {"double_dip", "count_split", "test_double_dip"}) {
        CHECK(fs::exists(ws.path(std::string("cmp.") + method + ".csv")));
    }
    const auto table = slurp(ws.path("cmp.comparison.csv"));
    CHECK(table.rfind("# schema_version=1\ngene,name,p_double_dip,p_count_split,p_test_double_dip\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 2 + 8);
}

TEST_CASE("cluster methods write a single-row table") {
    Workspace ws("cluster");
    REQUIRE(run_cli({"de", "--input", ws.input.string(), "--method", "cluster_mean_countsplit", "--out-prefix", ws.path("k")}).code ==
        0);
    const auto csv = slurp(ws.path("k.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("simulate with a scenario file writes summary, QQ data and manifest") {
    Workspace ws("simulate");
    spit(ws.dir / "scenario.json",
        R"({"name": "tiny", "n": 60, "p": 4, "beta0": [0, 0, 2.302585, 2.302585], "gene_groups": ["lo", "lo", "hi", "hi"],
            "methods": ["count_split", "double_dip"]})");
    REQUIRE(run_cli({"simulate", "--scenario", ws.path("scenario.json"), "--replicates", "3", "--seed", "5", "--out-prefix",
                ws.path("sim")})
                .code == 0);
    const auto rows = parse_summary_csv(slurp(ws.path("sim.summary.csv")));
    CHECK_FALSE(rows.empty());
    bool saw_hi = false;
    for (const auto& row : rows) {
        CHECK(row.scenario == "tiny");
        saw_hi = saw_hi || row.group == "hi";
    }
    CHECK(saw_hi);
    CHECK(fs::exists(ws.path("sim.qq.csv")));
    const auto manifest = nlohmann::json::parse(slurp(ws.path("sim.manifest.json")));
    CHECK(manifest["command"] == "simulate");

    REQUIRE(run_cli({"simulate", "--scenario", ws.path("scenario.json"), "--replicates", "3", "--seed", "5", "--threads", "2",
                "--out-prefix", ws.path("sim2")})
                .code == 0);
    CHECK(slurp(ws.path("sim.summary.csv")) == slurp(ws.path("sim2.summary.csv")));
    CHECK(slurp(ws.path("sim.qq.csv")) == slurp(ws.path("sim2.qq.csv")));
}

TEST_CASE("report merges summaries and rejects conflicts and other schema versions") {
    Workspace ws("report");
    spit(ws.dir / "a.csv", "# schema_version=1\nscenario,method,epsilon,group,metric,value\ns,count_split,0.5,all,ks_distance,0.01\n");
    spit(ws.dir / "b.csv", "# schema_version=1\nscenario,method,epsilon,group,metric,value\ns,double_dip,0,all,ks_distance,0.2\n");
    REQUIRE(run_cli({"report", "--inputs", ws.path("a.csv"), ws.path("b.csv"), "--output", ws.path("merged.csv")}).code == 0);
    const auto merged = parse_summary_csv(slurp(ws.path("merged.csv")));
    CHECK(merged.size() == 2);
    spit(ws.dir / "c.csv", "# schema_version=1\nscenario,method,epsilon,group,metric,value\ns,count_split,0.5,all,ks_distance,0.5\n");
    CHECK(run_cli({"report", "--inputs", ws.path("a.csv"), ws.path("c.csv"), "--output", ws.path("x.csv")}).code == 2);
    spit(ws.dir / "d.csv", "# schema_version=2\nscenario,method,epsilon,group,metric,value\n");
    CHECK(run_cli({"report", "--inputs", ws.path("a.csv"), ws.path("d.csv"), "--output", ws.path("x.csv")}).code == 2);
    CHECK(run_cli({"report", "--inputs", ws.path("nope.csv"), "--output", ws.path("x.csv")}).code == 3);
}

TEST_CASE("the installed binary returns the same exit codes as the library entry point") {
    Workspace ws("binary");
    const std::string cli = COUNTSPLIT_CLI_PATH;
    auto status = [](const std::string& command) {
        const int raw = std::system((command + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status(cli + " split --input " + ws.input.string() + " --epsilon 1.0 --out-prefix " + ws.path("a")) == 2);
    CHECK(status(cli + " split --input " + ws.path("none.csv") + " --out-prefix " + ws.path("a")) == 3);
    CHECK(status(cli + " split --input " + ws.input.string() + " --out-prefix " + ws.path("a")) == 0);
}

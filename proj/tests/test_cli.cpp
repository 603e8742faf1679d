#include <doctest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cafenet/trainer.hpp"
#include "support.hpp"

using testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

/// Runs the CLI with `args`, logging to `dir`/runs.jsonl.
Result cli(const fs::path& dir, const std::vector<std::string>& args) {
    std::string cmd = quote(CAFENET_CLI_PATH) + " --run-log " + quote((dir / "runs.jsonl").string());
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " > " + quote((dir / "stdout.txt").string()) + " 2> " + quote((dir / "stderr.txt").string());
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir / "stdout.txt");
    r.err = slurp(dir / "stderr.txt");
    return r;
}

bool contains(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

std::vector<nlohmann::json> run_records(const fs::path& dir) {
    std::vector<nlohmann::json> out;
    std::ifstream in(dir / "runs.jsonl");
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

/// Shared source, dataset and a 20-episode checkpoint.
struct Fixture {
    TempDir dir{"cli"};
    fs::path manifest = dir / "data" / "manifest.jsonl";
    fs::path run_dir = dir / "run";
    Result make, build, train;

    Fixture() {
        make = cli(dir.path(), {"make-synthetic", "--out", (dir / "source").string(), "--classes", "5", "--samples", "8",
                                "--size", "32", "--seed", "2"});
        build = cli(dir.path(), {"build-dataset", "--scheme", "fse1000", "--source", (dir / "source").string(), "--out",
                                 (dir / "data").string()});
        train = cli(dir.path(), {"train", "--manifest", manifest.string(), "--episodes", "20", "--lr", "1e-3",
                                 "--checkpoint-every", "10", "--out-dir", run_dir.string(), "--seed", "4"});
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("build-dataset writes a manifest") {
    const auto& f = fixture();
    CHECK(f.make.code == 0);
    CHECK(f.build.code == 0);
    CHECK(fs::exists(f.manifest));
    const auto m = cafenet::datasets::load_manifest(f.manifest);
    CHECK(m.classes.size() == 5);
}

TEST_CASE("build-dataset error exit codes") {
    TempDir dir("cli_build");
    const Result split = cli(dir.path(), {"build-dataset", "--scheme", "sbd5i", "--source", (fixture().dir / "source").string(),
                                          "--out", (dir / "out").string(), "--split-index", "5"});
    CHECK(split.code == 2);
    CHECK(contains(split.err, "0-3"));

    const Result missing = cli(dir.path(), {"build-dataset", "--scheme", "fse1000", "--source", (dir / "nowhere").string(),
                                            "--out", (dir / "out").string()});
    CHECK(missing.code == 3);
    CHECK(contains(missing.err, "nowhere"));

    CHECK(cli(dir.path(), {"build-dataset", "--scheme", "fse1000"}).code == 2);
    CHECK(cli(dir.path(), {"no-such-command"}).code == 2);
    CHECK(cli(dir.path(), {"build-dataset", "--scheme", "pascal", "--source", (dir / "x").string(), "--out",
                           (dir / "y").string()})
              .code == 2);
}

TEST_CASE("train writes checkpoints and a log") {
    const auto& f = fixture();
    CHECK(f.train.code == 0);
    CHECK(fs::exists(f.run_dir / "final.ckpt"));
    CHECK(fs::exists(f.run_dir / "train_log.jsonl"));
    const auto ck = cafenet::trainer::load_checkpoint(f.run_dir / "final.ckpt");
    CHECK(ck.episode == 20);
    CHECK(ck.train.at("lr") == "0.001");
}

TEST_CASE("train rejects unknown keys and bad values") {
    TempDir dir("cli_train");
    std::ofstream(dir / "bad.cfg") << "learning_rate = 1\n";
    const Result unknown = cli(dir.path(), {"train", "--manifest", fixture().manifest.string(), "--config", (dir / "bad.cfg").string(),
                                            "--out-dir", (dir / "r").string()});
    CHECK(unknown.code == 10);
    CHECK(contains(unknown.err, "learning_rate"));
    CHECK(cli(dir.path(), {"train", "--manifest", fixture().manifest.string(), "--lr", "fast"}).code == 10);
    CHECK(cli(dir.path(), {"train", "--manifest", (dir / "absent.jsonl").string()}).code == 3);
}

TEST_CASE("help lists every config key") {
    TempDir dir("cli_help");
    const Result help = cli(dir.path(), {"train", "--help"});
    CHECK(help.code == 0);
    for (const auto& key : cafenet::trainer::config_keys()) CHECK_MESSAGE(contains(help.out, "--" + key.key), key.key);
    CHECK(!fs::exists(dir / "runs.jsonl"));
}

TEST_CASE("evaluate writes a report and names mismatched fields") {
    const auto& f = fixture();
    TempDir dir("cli_eval");
    const Result ok = cli(dir.path(), {"evaluate", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--manifest",
                                       f.manifest.string(), "--episodes", "5", "--out", (dir / "report.json").string()});
    CHECK(ok.code == 0);
    CHECK(contains(ok.out, "MF(ODS)"));
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "report.csv"));
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(report.at("episodes") == 5);
    CHECK(report.at("protocol").at("shots") == 5);

    std::ofstream(dir / "other.cfg") << "splits = 2\nuse_msmr = false\n";
    const Result bad = cli(dir.path(), {"evaluate", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--manifest",
                                        f.manifest.string(), "--episodes", "1", "--config", (dir / "other.cfg").string()});
    CHECK(bad.code == 15);
    CHECK(contains(bad.err, "splits"));
    CHECK(contains(bad.err, "use_msmr"));

    std::string damaged = slurp(f.run_dir / "final.ckpt");
    damaged.resize(damaged.size() / 3);
    std::ofstream(dir / "damaged.ckpt", std::ios::binary) << damaged;
    CHECK(cli(dir.path(), {"evaluate", "--checkpoint", (dir / "damaged.ckpt").string(), "--manifest", f.manifest.string()}).code == 13);
}

TEST_CASE("predict, overlays and PR plots") {
    const auto& f = fixture();
    TempDir dir("cli_predict");
    const Result pred = cli(dir.path(), {"predict", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--manifest",
                                         f.manifest.string(), "--shots", "5", "--queries", "3", "--out", (dir / "pred").string()});
    REQUIRE(pred.code == 0);
    int masks = 0, attention = 0, edges = 0, sidecars = 0;
    for (const auto& e : fs::directory_iterator(dir / "pred")) {
        const std::string name = e.path().filename().string();
        masks += contains(name, ".mask.png");
        attention += contains(name, ".attention.png");
        edges += contains(name, ".edge.png");
        sidecars += contains(name, ".predict.json");
    }
    CHECK(masks == 3);
    CHECK(attention == 3);
    CHECK(edges == 3);
    CHECK(sidecars == 3);

    CHECK(cli(dir.path(), {"plot-overlays", "--dir", (dir / "pred").string(), "--out", (dir / "overlays").string()}).code == 0);
    int overlays = 0;
    for (const auto& e : fs::directory_iterator(dir / "overlays")) overlays += contains(e.path().filename().string(), ".overlay.png");
    CHECK(overlays == 3);

    fs::create_directories(dir / "empty");
    CHECK(cli(dir.path(), {"plot-overlays", "--dir", (dir / "empty").string()}).code == 4);
    CHECK(cli(dir.path(), {"plot-overlays", "--dir", (dir / "absent").string()}).code == 3);

    REQUIRE(cli(dir.path(), {"evaluate", "--checkpoint", (f.run_dir / "final.ckpt").string(), "--manifest",
                             f.manifest.string(), "--episodes", "2", "--out", (dir / "r.json").string()})
                .code == 0);
    CHECK(cli(dir.path(), {"plot-pr", "--report", (dir / "r.json").string(), "--label", "tiny", "--out",
                           (dir / "pr.png").string()})
              .code == 0);
    CHECK(fs::exists(dir / "pr.png"));
    CHECK(fs::file_size(dir / "pr.png") > 0);
}

TEST_CASE("every command appends a run record and replays identically") {
    const auto& f = fixture();
    TempDir dir("cli_replay");
    const std::vector<std::string> train = {"train", "--manifest", f.manifest.string(), "--episodes", "6", "--lr", "1e-3",
                                            "--out-dir", (dir / "r").string(), "--fresh"};
    REQUIRE(cli(dir.path(), train).code == 0);
    const std::string first = slurp(dir / "r" / "final.ckpt");
    REQUIRE(cli(dir.path(), {"evaluate", "--checkpoint", (dir / "r" / "final.ckpt").string(), "--manifest",
                             f.manifest.string(), "--episodes", "3", "--seed", "9"})
                .code == 0);
    const std::string report = slurp(dir / "r" / "report.json");
    CHECK(cli(dir.path(), {"plot-overlays", "--dir", (dir / "nothing").string()}).code == 3);

    const auto records = run_records(dir.path());
    REQUIRE(records.size() == 3);
    CHECK(records[0].at("command") == "train");
    CHECK(records[0].at("exit_code") == 0);
    CHECK(records[0].at("config").at("episodes") == "6");
    CHECK(records[1].at("command") == "evaluate");
    CHECK(records[2].at("exit_code") == 3);
    CHECK(records[2].contains("error"));

    // Replay the recorded argv verbatim.
    for (int i = 0; i < 2; ++i) {
        const auto argv = records[i].at("argv").get<std::vector<std::string>>();
        std::string cmd;
        for (const auto& a : argv) cmd += quote(a) + " ";
        cmd += "> /dev/null 2>&1";
        CHECK(std::system(cmd.c_str()) == 0);
    }
    CHECK(slurp(dir / "r" / "final.ckpt") == first);
    CHECK(slurp(dir / "r" / "report.json") == report);
    CHECK(run_records(dir.path()).size() == 5);
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#ifndef ADIAG_CLI_PATH
#error "ADIAG_CLI_PATH must point at the built adiag binary"
#endif

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("adiag_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::vector<char>(std::istreambuf_iterator<char>(is),
                             std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    os << text;
    REQUIRE(os.good());
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs the binary through the shell, capturing exit code and both streams.
CliResult run_cli(const TempDir& dir, const std::string& args) {
    const std::string out_path = dir.file("stdout.txt");
    const std::string err_path = dir.file("stderr.txt");
    const std::string cmd = "cd " + dir.path.string() + " && " + std::string(ADIAG_CLI_PATH) +
                            " " + args + " > " + out_path + " 2> " + err_path;
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp_text(out_path);
    r.err = slurp_text(err_path);
    return r;
}

// Small enough to generate and train in well under a second per epoch.
const char* kTinyGen = "--nodes 32 --vertices_per_node 2 --n_ad 6 --n_nc 6 --seed 5";

} // namespace

TEST_CASE("help exits cleanly") {
    TempDir dir;
    CliResult r = run_cli(dir, "--help");
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage:") != std::string::npos);
    CHECK(r.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("a command is required") {
    TempDir dir;
    CliResult r = run_cli(dir, "");
    CHECK(r.code == 2);
}

TEST_CASE("gen reports cohort and edge counts") {
    TempDir dir;
    CliResult r = run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds");
    CHECK(r.code == 0);
    CHECK(r.out == "12 graphs (6 AD / 6 NC), 496 edges each\n");
    CHECK(fs::exists(dir.path / "ds" / "manifest.txt"));
}

TEST_CASE("gen is idempotent byte for byte") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir a").code == 0);
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir b").code == 0);
    CHECK(slurp(dir.file("a/manifest.txt")) == slurp(dir.file("b/manifest.txt")));
    CHECK(slurp(dir.file("a/AD0001.adgr")) == slurp(dir.file("b/AD0001.adgr")));
    CHECK(slurp(dir.file("a/NC0006.adgr")) == slurp(dir.file("b/NC0006.adgr")));
}

TEST_CASE("unknown config keys are rejected") {
    TempDir dir;
    spit(dir.file("bad.cfg"), "nodes = 32\nwibble = 7\n");
    CliResult r = run_cli(dir, "gen --config bad.cfg --out_dir ds");
    CHECK(r.code == 2);
    CHECK(r.err.find("wibble") != std::string::npos);
    CliResult flag = run_cli(dir, "gen --wibble 7 --out_dir ds");
    CHECK(flag.code == 2);
}

TEST_CASE("malformed values are rejected") {
    TempDir dir;
    CHECK(run_cli(dir, "gen --nodes banana --out_dir ds").code == 2);
    CHECK(run_cli(dir, "gen --thinning 1.5 --out_dir ds").code == 2);
    spit(dir.file("bad.cfg"), "this line has no equals sign\n");
    CHECK(run_cli(dir, "gen --config bad.cfg --out_dir ds").code == 2);
}

TEST_CASE("a missing config file is an I/O error") {
    TempDir dir;
    CHECK(run_cli(dir, "gen --config nowhere.cfg --out_dir ds").code == 3);
}

TEST_CASE("gen refuses an unwritable output directory") {
    TempDir dir;
    spit(dir.file("blocker"), "not a directory\n");
    CliResult r = run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir blocker/ds");
    CHECK(r.code == 3);
    CHECK_FALSE(fs::exists(dir.path / "blocker" / "ds" / "manifest.txt"));
}

TEST_CASE("train writes checkpoint, metrics, and manifest") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    CliResult r = run_cli(dir, "train --dataset_dir ds --out_dir run --epochs 4 --seed 5");
    CHECK(r.code == 0);
    CHECK(r.out.find("epoch   1/4") != std::string::npos);
    CHECK(r.out.find("best epoch ") != std::string::npos);
    CHECK(fs::exists(dir.path / "run" / "model.adck"));

    const std::string csv = slurp_text(dir.file("run/metrics.csv"));
    CHECK(csv.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    const std::string manifest = slurp_text(dir.file("run/run_manifest.txt"));
    CHECK(manifest.find("seed=5\n") != std::string::npos);
    CHECK(manifest.find("epochs=4\n") != std::string::npos);
    CHECK(manifest.find("dataset_dir=ds\n") != std::string::npos);

    CliResult quiet = run_cli(dir, "train --dataset_dir ds --out_dir q --epochs 4 --seed 5 --quiet");
    CHECK(quiet.code == 0);
    CHECK(quiet.out.find("epoch   1/4") == std::string::npos);
    CHECK(quiet.out.find("best epoch ") != std::string::npos);
}

TEST_CASE("identical train runs produce identical bytes") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    const std::string args = "train --quiet --dataset_dir ds --epochs 3 --seed 11 --out_dir ";
    REQUIRE(run_cli(dir, args + "r1").code == 0);
    REQUIRE(run_cli(dir, args + "r2").code == 0);
    CHECK(slurp(dir.file("r1/model.adck")) == slurp(dir.file("r2/model.adck")));
    CHECK(slurp(dir.file("r1/metrics.csv")) == slurp(dir.file("r2/metrics.csv")));
    // Manifests echo out_dir, so they differ by exactly that one line.
    const std::string m1 = slurp_text(dir.file("r1/run_manifest.txt"));
    const std::string m2 = slurp_text(dir.file("r2/run_manifest.txt"));
    CHECK(m1.find("out_dir=r1\n") != std::string::npos);
    CHECK(m2.find("out_dir=r2\n") != std::string::npos);
}

TEST_CASE("flags override config file entries regardless of order") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    spit(dir.file("run.cfg"), "# tiny run\ndataset_dir = ds\nepochs = 2\nseed = 5\n");
    CliResult after = run_cli(dir, "train --quiet --config run.cfg --epochs 3 --out_dir r1");
    REQUIRE(after.code == 0);
    CliResult before = run_cli(dir, "train --quiet --epochs 3 --config run.cfg --out_dir r2");
    REQUIRE(before.code == 0);
    const std::string csv1 = slurp_text(dir.file("r1/metrics.csv"));
    CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 4);  // header + 3 epochs
    CHECK(slurp_text(dir.file("r2/metrics.csv")) == csv1);
}

TEST_CASE("a train run can be replayed from its manifest") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 3 --seed 8 --out_dir r1")
                .code == 0);
    CliResult replay = run_cli(dir, "train --quiet --config r1/run_manifest.txt --out_dir r2");
    REQUIRE(replay.code == 0);
    CHECK(slurp(dir.file("r2/model.adck")) == slurp(dir.file("r1/model.adck")));
    CHECK(slurp(dir.file("r2/metrics.csv")) == slurp(dir.file("r1/metrics.csv")));
}

TEST_CASE("missing required paths are config errors") {
    TempDir dir;
    CHECK(run_cli(dir, "train --out_dir run").code == 2);
    CHECK(run_cli(dir, "eval --checkpoint x.adck").code == 2);
    CHECK(run_cli(dir, "predict --graph_file g.adgr").code == 2);
}

TEST_CASE("eval prints metrics and writes per-graph results") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 4 --seed 5 --out_dir run")
                .code == 0);
    CliResult r = run_cli(dir,
                          "eval --checkpoint run/model.adck --dataset_dir ds --eval_csv per.csv");
    CHECK(r.code == 0);
    CHECK(r.out.find("graphs 12  accuracy ") != std::string::npos);
    CHECK(r.out.find("confusion  tn ") != std::string::npos);
    const std::string per = slurp_text(dir.file("per.csv"));
    CHECK(per.rfind("subject_id,label,prediction,probability\n", 0) == 0);
    CHECK(std::count(per.begin(), per.end(), '\n') == 13);
}

TEST_CASE("eval rejects an empty dataset directory") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 2 --seed 5 --out_dir run")
                .code == 0);
    fs::create_directories(dir.path / "empty");
    CliResult r = run_cli(dir, "eval --checkpoint run/model.adck --dataset_dir empty");
    CHECK(r.code == 2);
}

TEST_CASE("a missing checkpoint is an I/O error") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    CHECK(run_cli(dir, "eval --checkpoint nowhere.adck --dataset_dir ds").code == 3);
}

TEST_CASE("predict prints a label and a probability") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 4 --seed 5 --out_dir run")
                .code == 0);
    CliResult r = run_cli(dir, "predict --checkpoint run/model.adck --graph_file ds/NC0003.adgr");
    CHECK(r.code == 0);
    REQUIRE(r.out.size() > 10);
    CHECK(r.out.rfind("label=", 0) == 0);
    CHECK((r.out[6] == '0' || r.out[6] == '1'));
    CHECK(r.out.find(" p=0.") != std::string::npos);
}

TEST_CASE("predict rejects a node-count mismatch") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 2 --seed 5 --out_dir run")
                .code == 0);
    REQUIRE(run_cli(dir, "gen --nodes 16 --vertices_per_node 2 --n_ad 2 --n_nc 2 --seed 5"
                         " --out_dir small")
                .code == 0);
    CliResult r =
        run_cli(dir, "predict --checkpoint run/model.adck --graph_file small/AD0001.adgr");
    CHECK(r.code == 2);
    CHECK(r.err.find("16") != std::string::npos);
    CHECK(r.err.find("32") != std::string::npos);
}

TEST_CASE("predict rejects a corrupted graph file") {
    TempDir dir;
    REQUIRE(run_cli(dir, std::string("gen ") + kTinyGen + " --out_dir ds").code == 0);
    REQUIRE(run_cli(dir, "train --quiet --dataset_dir ds --epochs 2 --seed 5 --out_dir run")
                .code == 0);
    std::vector<char> bytes = slurp(dir.file("ds/AD0001.adgr"));
    bytes[0] = 'X';
    std::ofstream os(dir.file("broken.adgr"), std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CliResult r = run_cli(dir, "predict --checkpoint run/model.adck --graph_file broken.adgr");
    CHECK(r.code == 2);
}

TEST_CASE("gradcheck passes on two seeds and both activations") {
    TempDir dir;
    CliResult a = run_cli(dir, "gradcheck --seed 9");
    CHECK(a.code == 0);
    CHECK(a.out.find("gradcheck sigmoid") != std::string::npos);
    CHECK(a.out.find("gradcheck relu") != std::string::npos);
    CHECK(a.out.find("max rel err") != std::string::npos);
    CliResult b = run_cli(dir, "gradcheck --seed 10 --mode relu");
    CHECK(b.code == 0);
    CHECK(b.out.find("sigmoid") == std::string::npos);
}

TEST_CASE("gradcheck catches an injected backward fault") {
    TempDir dir;
    CliResult r = run_cli(dir, "gradcheck --seed 9 --mode sigmoid --inject-fault");
    CHECK(r.code == 5);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(r.out.find("rel err") != std::string::npos);
}

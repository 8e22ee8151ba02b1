#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "qbc/io.hpp"

// End-to-end checks of the command-line binary: exit codes per failure
// class, flag passthrough, and byte-stable artifact outputs.

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return QBC_CLI_PATH; }

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("qbc_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(cli_path()) + " " + args + " >" + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) { return qbc::io::read_file(path); }

} // namespace

TEST_CASE("cli pipeline, exit codes and artifact determinism") {
    TempDir tmp;
    const std::string fx = tmp.file("fx");
    const std::string log = tmp.file("log.txt");

    REQUIRE(run("gen-fixtures --out " + fx + " --seed 42", log) == 0);

    SUBCASE("missing calibration file exits 2 and names the path") {
        const int rc = run("quantize --model " + fx + "/model.json --calib " + fx +
                               "/nope.qbt --out " + tmp.file("q"),
                           log);
        CHECK(rc == 2);
        CHECK(slurp(log).find("nope.qbt") != std::string::npos);
    }

    SUBCASE("bits flags land in the saved manifest") {
        REQUIRE(run("quantize --model " + fx + "/model.json --calib " + fx +
                        "/calib.qbt --bits-w 6 --bits-a 8 --out " + tmp.file("q6"),
                    log) == 0);
        const auto j = nlohmann::json::parse(slurp(tmp.file("q6") + "/qmodel.json"));
        CHECK(j.at("bits_w").get<int>() == 6);
        CHECK(j.at("bits_a").get<int>() == 8);
        for (const auto& jl : j.at("layers"))
            if (jl.contains("w_grid")) CHECK(jl.at("w_grid").at("bits").get<int>() == 6);
    }

    SUBCASE("label length mismatch exits 3") {
        REQUIRE(run("quantize --model " + fx + "/model.json --calib " + fx +
                        "/calib.qbt --out " + tmp.file("q"),
                    log) == 0);
        qbc::io::save_labels({0, 1, 2}, tmp.file("short_labels.txt"));
        const int rc = run("eval --model " + fx + "/model.json --data " + fx +
                               "/holdout.qbt --labels " + tmp.file("short_labels.txt"),
                           log);
        CHECK(rc == 3);
    }

    SUBCASE("quantize artifacts are byte-identical across reruns") {
        REQUIRE(run("quantize --model " + fx + "/model.json --calib " + fx +
                        "/calib.qbt --bits-w 6 --out " + tmp.file("a"),
                    log) == 0);
        REQUIRE(run("quantize --model " + fx + "/model.json --calib " + fx +
                        "/calib.qbt --bits-w 6 --out " + tmp.file("b"),
                    log) == 0);
        CHECK(slurp(tmp.file("a") + "/qmodel.json") == slurp(tmp.file("b") + "/qmodel.json"));
        CHECK(slurp(tmp.file("a") + "/qparams.bin") == slurp(tmp.file("b") + "/qparams.bin"));
    }

    SUBCASE("analyze with no-op grids reports zero error everywhere") {
        REQUIRE(run("quantize --model " + fx + "/model.json --calib " + fx +
                        "/calib.qbt --bits-w 32 --bits-a 32 --out " + tmp.file("q32"),
                    log) == 0);
        REQUIRE(run("analyze --model " + fx + "/model.json --qmodel " + tmp.file("q32") +
                        "/qmodel.json --batch " + fx + "/ibc.qbt --out " + tmp.file("an"),
                    log) == 0);
        const auto rows = qbc::io::read_csv(tmp.file("an") + "/channel_stats.csv");
        REQUIRE(rows.size() > 1);
        for (size_t i = 1; i < rows.size(); ++i) {
            CHECK(std::strtod(rows[i][4].c_str(), nullptr) == 0.0); // mas
            CHECK(std::strtod(rows[i][6].c_str(), nullptr) == 0.0); // error energy
        }

        // --where pre also runs and emits the same schema
        REQUIRE(run("analyze --model " + fx + "/model.json --qmodel " + tmp.file("q32") +
                        "/qmodel.json --batch " + fx + "/ibc.qbt --where pre --out " +
                        tmp.file("an_pre"),
                    log) == 0);
        CHECK(qbc::io::read_csv(tmp.file("an_pre") + "/channel_stats.csv").size() ==
              rows.size());
    }

    SUBCASE("bad flag value exits 3") {
        CHECK(run("analyze --model " + fx + "/model.json --qmodel x --batch y --where mid",
                  log) == 3);
    }

    SUBCASE("theory subcommand writes the csv") {
        REQUIRE(run("theory --k 9,27 --trials 400 --seed 3 --out " + tmp.file("th"), log) == 0);
        const auto rows = qbc::io::read_csv(tmp.file("th") + "/theory.csv");
        REQUIRE(rows.size() == 3);
        CHECK(rows[0][0] == "k");
        CHECK(rows[1][0] == "9");
        CHECK(rows[2][0] == "27");
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;  // stdout and stderr
};

Run run(const std::string& args) {
    const std::string cmd = std::string(MRVF_CLI) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    Run r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0, m = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++n;
        if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
    }
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++m;
    return n == m;
}

struct Workspace {
    fs::path dir = fs::temp_directory_path() / "mrvf_cli_test";

    Workspace() {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    std::string write(const std::string& name, const std::string& text) const {
        std::ofstream(dir / name, std::ios::binary) << text;
        return path(name);
    }
};

const char* kConfig = R"(geometry.model = disks2d
geometry.dims = 32,32,1
geometry.spacing = 3
geometry.r = 3,6
sampling.n = 30
sampling.seed = 11
eval.n = 50
eval.dims_3d = 16,16,16
eval.spacing_3d = 3
eval.dims_2d = 32,32,1
eval.spacing_2d = 3
eval.r = 3,6
eval.dictionary_entries = 40
)";

} // namespace

TEST_CASE("commands are byte-identical across thread counts") {
    Workspace ws;
    const auto cfg = ws.write("run.cfg", kConfig);
    for (const char* t : {"1", "3"}) {
        const std::string s = t;
        REQUIRE(run("gen-voxels --quiet --config " + cfg + " --threads " + s + " --out " + ws.path("vox" + s)).code == 0);
        REQUIRE(run("build-dict --quiet --config " + cfg + " --threads " + s + " --manifest " +
                    ws.path("vox" + s + "/manifest.tsv") + " --out " + ws.path("d" + s + ".mrvd"))
                    .code == 0);
        REQUIRE(run("train --quiet --config " + cfg + " --threads " + s + " --k 2 --dict " + ws.path("d" + s + ".mrvd") +
                    " --out " + ws.path("m" + s + ".mrvm"))
                    .code == 0);
        REQUIRE(run("reconstruct --quiet --config " + cfg + " --threads " + s + " --method dbl --model " +
                    ws.path("m" + s + ".mrvm") + " --input " + ws.path("d" + s + ".mrvd") + " --out " +
                    ws.path("maps" + s))
                    .code == 0);
        REQUIRE(run("eval --quiet --config " + cfg + " --threads " + s + " --out " + ws.path("eval" + s)).code == 0);
    }
    CHECK(same_tree(ws.dir / "vox1", ws.dir / "vox3"));
    CHECK(slurp(ws.dir / "d1.mrvd") == slurp(ws.dir / "d3.mrvd"));
    CHECK(slurp(ws.dir / "m1.mrvm") == slurp(ws.dir / "m3.mrvm"));
    CHECK(same_tree(ws.dir / "maps1", ws.dir / "maps3"));
    CHECK(same_tree(ws.dir / "eval1", ws.dir / "eval3"));

    SUBCASE("logs") {
        const auto r = run("build-dict --config " + cfg + " --manifest " + ws.path("vox1/manifest.tsv") + " --out " +
                           ws.path("d_log.mrvd"));
        CHECK(r.code == 0);
        CHECK(r.out.starts_with("entries 30\nwall_time_s "));
        const auto t = run("train --config " + cfg + " --dict " + ws.path("d1.mrvd") + " --out " + ws.path("m_log.mrvm"));
        CHECK(t.code == 0);
        CHECK(t.out.starts_with("log_likelihood "));
        CHECK(t.out.find("\nk 1 (requested 1)\n") != std::string::npos);
        CHECK(run("gen-voxels --quiet --config " + cfg + " --out " + ws.path("vq")).out.empty());
    }

    SUBCASE("seed override changes the hash") {
        const auto r = run("build-dict --quiet --seed 12 --config " + cfg + " --manifest " +
                           ws.path("vox1/manifest.tsv") + " --out " + ws.path("d_seed.mrvd"));
        CHECK(r.code == 2);
        CHECK(r.out.find("config hash") != std::string::npos);
        CHECK_FALSE(fs::exists(ws.dir / "d_seed.mrvd"));
    }
}

TEST_CASE("exit codes") {
    Workspace ws;
    const auto good = ws.write("good.cfg", kConfig);
    CHECK(run("--help").code == 0);
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("gen-voxels --out " + ws.path("x")).code == 2);  // missing --config
    CHECK(run("gen-voxels --config " + ws.path("missing.cfg") + " --out " + ws.path("x")).code == 2);

    const auto unknown = run("gen-voxels --config " + ws.write("u.cfg", "physics.bz = 1\n") + " --out " + ws.path("x"));
    CHECK(unknown.code == 2);
    CHECK(unknown.out.find("line 1: unknown key 'physics.bz'") != std::string::npos);
    CHECK(run("gen-voxels --config " + ws.write("d.cfg", "sampling.n = 1\nsampling.n = 2\n") + " --out " +
              ws.path("x"))
              .code == 2);
    CHECK_FALSE(fs::exists(ws.dir / "x"));

    CHECK(run("eval --quiet --config " + good + " --method knn --out " + ws.path("e")).code == 2);
    CHECK(run("reconstruct --input " + ws.write("junk.bin", "JUNKJUNK") + " --dict " + ws.path("junk.bin") +
              " --out " + ws.path("r"))
              .code == 2);

    // A physically too coarse time step is a runtime failure, reported with the entry index.
    const auto coarse = ws.write("coarse.cfg", std::string(kConfig) +
                                                   "physics.dt = 1\nphysics.b0 = 30\nphysics.dchi_deoxy = 3e-5\n");
    REQUIRE(run("gen-voxels --quiet --config " + coarse + " --out " + ws.path("cv")).code == 0);
    const auto r = run("build-dict --config " + coarse + " --manifest " + ws.path("cv/manifest.tsv") + " --out " +
                       ws.path("c.mrvd"));
    CHECK(r.code == 3);
    CHECK(r.out.find("entry 0: ") != std::string::npos);
    CHECK_FALSE(fs::exists(ws.dir / "c.mrvd"));

    const auto e = run("eval --quiet --config " + coarse + " --out " + ws.path("ce"));
    CHECK(e.code == 3);
    CHECK(e.out.find("eval stage 'dictionary cylinders3d' failed") != std::string::npos);
}

#include "test_util.hpp"

#include <fstream>
#include <sstream>

#include <frdiff/cli.hpp>

using namespace frdiff;
using frdiff::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int rc;
    std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int rc = cli::run(args, out, err);
    return {rc, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    const Bytes b = read_file(p);
    return {b.begin(), b.end()};
}

long count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

std::string tiny_cfg(const std::string& data_root) {
    return "toy = true\nepochs = 1\nbatch = 2\npatch = 16\nbase_channels = 4\nblocks = 1, 1\n"
           "denoiser_width = 4\ndenoiser_blocks = 1\nembed_dim = 4\ndisc_width = 4\n"
           "nce_patches = 16\nnce_dim = 8\nsteps = 2\ndata_root = " +
           data_root + "\n";
}

} // namespace

TEST_CASE("usage errors exit with 1", "[cli]") {
    CHECK(invoke({}).rc == 1);
    CHECK(invoke({"bogus"}).rc == 1);
    CHECK(invoke({"synth", "--out", "x"}).rc == 1);  // missing --seed
    CHECK(invoke({"dehaze", "--ckpt", "a", "--in", "b", "--out", "c"}).rc == 1);
    CHECK(invoke({"--help"}).rc == 0);
}

TEST_CASE("synth is seeded and complete", "[cli][synth]") {
    TempDir dir("cli_synth");
    const Result a = invoke({"synth", "--out", (dir / "a").string(), "--scenes", "5", "--size", "16", "--seed", "4"});
    const Result b = invoke({"synth", "--out", (dir / "b").string(), "--scenes", "5", "--size", "16", "--seed", "4"});
    REQUIRE(a.rc == 0);
    REQUIRE(b.rc == 0);
    CHECK(a.out.find("# seed = 4") != std::string::npos);
    for (const char* sub : {"hazy", "clear", "reference"}) {
        const auto la = list_images(dir / "a" / sub), lb = list_images(dir / "b" / sub);
        REQUIRE(la.size() == 5);
        for (std::size_t i = 0; i < la.size(); ++i) CHECK(read_file(la[i]) == read_file(lb[i]));
    }
    CHECK(count_lines(slurp(dir / "a" / "manifest.csv")) == 11);
    CHECK(invoke({"synth", "--out", (dir / "c").string(), "--scenes", "1", "--seed", "4"}).rc == 1);
}

TEST_CASE("swap round trips and reports errors", "[cli][swap]") {
    TempDir dir("cli_swap");
    REQUIRE(invoke({"synth", "--out", dir.path().string(), "--scenes", "2", "--size", "16", "--seed", "1"}).rc == 0);
    const auto hazy = list_images(dir / "hazy"), clear = list_images(dir / "clear");
    const fs::path self = dir / "self.png", mixed = dir / "mixed.png";

    REQUIRE(invoke({"swap", "--content", hazy[0].string(), "--donor", hazy[0].string(), "--out", self.string()}).rc == 0);
    const auto orig = load_tensor<double>(hazy[0]), back = load_tensor<double>(self);
    for (std::size_t i = 0; i < orig.size(); ++i) REQUIRE(std::abs(orig[i] - back[i]) <= 1.0 / 255 + 1e-12);

    REQUIRE(invoke({"swap", "--content", hazy[0].string(), "--donor", clear[0].string(), "--out", mixed.string()}).rc == 0);
    // the file holds the in-memory swap, clipped to [0, 1] and quantised to 8 bits
    const auto expect = swap_amplitude(load_tensor<double>(hazy[0]), load_tensor<double>(clear[0]));
    const auto mixed_img = load_tensor<double>(mixed);
    for (std::size_t i = 0; i < expect.size(); ++i)
        REQUIRE(std::abs(std::clamp(expect[i], 0.0, 1.0) - mixed_img[i]) <= 0.5 / 255 + 1e-9);

    const fs::path small = dir / "small.png";
    save_tensor(Tensor3<double>(3, 8, 8, 0.5), small);
    CHECK(invoke({"swap", "--content", hazy[0].string(), "--donor", small.string(), "--out", (dir / "x.png").string()})
              .rc == 2);
    CHECK(invoke({"swap", "--content", (dir / "none.png").string(), "--donor", small.string(), "--out",
               (dir / "x.png").string()})
              .rc == 4);
    CHECK_FALSE(fs::exists(dir / "x.png"));
}

TEST_CASE("dcstats writes rows and histograms", "[cli][dcstats]") {
    TempDir dir("cli_dc");
    REQUIRE(invoke({"synth", "--out", dir.path().string(), "--scenes", "4", "--size", "24", "--seed", "2"}).rc == 0);
    const fs::path csv = dir / "dc.csv";
    const Result r = invoke({"dcstats", "--hazy", (dir / "hazy").string(), "--clear", (dir / "reference").string(),
                          "--out", csv.string()});
    REQUIRE(r.rc == 0);
    CHECK(r.out.find("pairs = 4") != std::string::npos);
    CHECK(r.out.find("closeness_fraction = ") != std::string::npos);
    CHECK(count_lines(slurp(csv)) == 5);
    std::istringstream hist(slurp(dir / "dc_hist.csv"));
    std::string line;
    std::getline(hist, line);
    long long sums[3] = {0, 0, 0};
    int rows = 0;
    while (std::getline(hist, line)) {
        std::istringstream ls(line);
        std::string cell;
        for (int skip = 0; skip < 3; ++skip) std::getline(ls, cell, ',');  // bin, level_lo, level_hi
        for (auto& s : sums) {
            std::getline(ls, cell, ',');
            s += std::stoll(cell);
        }
        ++rows;
    }
    CHECK(rows == kHistBins);
    for (auto s : sums) CHECK(s == 4 * 24 * 24);

    fs::create_directories(dir / "partial");
    fs::copy_file(list_images(dir / "hazy")[0], dir / "partial" / "odd.png");
    CHECK(invoke({"dcstats", "--hazy", (dir / "hazy").string(), "--clear", (dir / "partial").string(), "--out",
               (dir / "bad.csv").string()})
              .rc == 2);
}

TEST_CASE("eval of identical directories", "[cli][eval]") {
    TempDir dir("cli_eval");
    REQUIRE(invoke({"synth", "--out", dir.path().string(), "--scenes", "3", "--size", "16", "--seed", "3"}).rc == 0);
    const fs::path csv = dir / "eval.csv";
    const Result r = invoke({"eval", "--pred", (dir / "reference").string(), "--ref", (dir / "reference").string(),
                          "--out", csv.string()});
    REQUIRE(r.rc == 0);
    const std::string text = slurp(csv);
    CHECK(text.rfind("file,psnr,ssim\n", 0) == 0);
    CHECK(count_lines(text) == 4);
    CHECK(text.find(",inf,1") != std::string::npos);
}

TEST_CASE("train, dehaze and their failure modes", "[cli][train]") {
    TempDir dir("cli_train");
    REQUIRE(invoke({"synth", "--out", (dir / "data").string(), "--scenes", "4", "--size", "20", "--seed", "5"}).rc == 0);
    write_text_atomic(dir / "toy.cfg", tiny_cfg("data"));
    const std::string s1 = (dir / "s1.ckpt").string(), s2 = (dir / "s2.ckpt").string();

    SECTION("stage 2 without --init writes nothing") {
        const Result r = invoke({"train", "--stage", "2", "--config", (dir / "toy.cfg").string(), "--seed", "1", "--out", s2,
                              "--log", (dir / "s2.csv").string()});
        CHECK(r.rc == 1);
        CHECK_FALSE(fs::exists(s2));
        CHECK_FALSE(fs::exists(dir / "s2.csv"));
    }
    SECTION("full pipeline") {
        REQUIRE(invoke({"train", "--stage", "1", "--config", (dir / "toy.cfg").string(), "--seed", "1", "--out", s1,
                     "--log", (dir / "s1.csv").string()})
                    .rc == 0);
        CHECK(slurp(dir / "s1.csv").rfind("epoch,step,l_gan,l_nce,l_diff,total\n", 0) == 0);
        const Result t2 = invoke({"train", "--stage", "2", "--config", (dir / "toy.cfg").string(), "--seed", "1", "--init",
                               s1, "--out", s2, "--log", (dir / "s2.csv").string()});
        REQUIRE(t2.rc == 0);
        CHECK(t2.out.find("l_diff") != std::string::npos);

        const std::string in = (dir / "data" / "hazy").string();
        CHECK(invoke({"dehaze", "--ckpt", s1, "--in", in, "--out", (dir / "o0").string(), "--seed", "3"}).rc == 2);
        REQUIRE(invoke({"dehaze", "--ckpt", s2, "--in", in, "--out", (dir / "o1").string(), "--seed", "3"}).rc == 0);
        REQUIRE(invoke({"dehaze", "--ckpt", s2, "--in", in, "--out", (dir / "o2").string(), "--seed", "3"}).rc == 0);
        const auto o1 = list_images(dir / "o1"), o2 = list_images(dir / "o2");
        REQUIRE(o1.size() == 4);
        for (std::size_t i = 0; i < o1.size(); ++i) {
            CHECK(o1[i].filename() == list_images(in)[i].filename());
            CHECK(read_file(o1[i]) == read_file(o2[i]));
        }
        const Result ev = invoke({"eval", "--pred", (dir / "o1").string(), "--ref",
                               (dir / "data" / "reference").string(), "--out", (dir / "ev.csv").string()});
        CHECK(ev.rc == 0);
    }
    SECTION("io and checkpoint errors") {
        CHECK(invoke({"dehaze", "--ckpt", (dir / "missing.ckpt").string(), "--in", (dir / "data" / "hazy").string(),
                   "--out", (dir / "o").string(), "--seed", "1"})
                  .rc == 4);
        write_text_atomic(dir / "junk.ckpt", "not a checkpoint");
        CHECK(invoke({"dehaze", "--ckpt", (dir / "junk.ckpt").string(), "--in", (dir / "data" / "hazy").string(),
                   "--out", (dir / "o").string(), "--seed", "1"})
                  .rc != 0);
        write_text_atomic(dir / "bad.cfg", "epochs = 1\nnonsense = 2\n");
        CHECK(invoke({"train", "--stage", "1", "--config", (dir / "bad.cfg").string(), "--seed", "1"}).rc == 1);
    }
}

TEST_CASE("gradcheck exits cleanly", "[cli][gradcheck]") {
    const Result r = invoke({"gradcheck", "--seed", "2"});
    CHECK(r.rc == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("PASS") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "nestlab/formats.hpp"
#include "nestlab/training.hpp"

using namespace nestlab;
namespace fs = std::filesystem;

static fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "nestlab-format-tests";
    fs::create_directories(dir);
    return dir / name;
}

TEST_CASE("pgm round trip") {
    SUBCASE("quantization error bounded by half a step") {
        ImageGrid img = procedural_image(SignalKind::Bandlimited, 16, 16, 1, 9);
        auto path = scratch("rt.pgm").string();
        write_image(img, path);
        ImageGrid back = read_image(path);
        REQUIRE(back.h == 16);
        REQUIRE(back.c == 1);
        for (std::size_t i = 0; i < img.v.size(); ++i)
            CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5 / 255.0 + 1e-12);
    }
    SUBCASE("ppm keeps three channels") {
        ImageGrid img = procedural_image(SignalKind::Bandlimited, 8, 8, 3, 9);
        auto path = scratch("rt.ppm").string();
        write_image(img, path);
        ImageGrid back = read_image(path);
        CHECK(back.c == 3);
        for (std::size_t i = 0; i < img.v.size(); ++i)
            CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5 / 255.0 + 1e-12);
    }
    SUBCASE("1x1 white pixel") {
        auto path = scratch("one.pgm").string();
        std::ofstream out(path, std::ios::binary);
        out << "P5\n1 1\n255\n";
        out.put(static_cast<char>(255));
        out.close();
        ImageGrid img = read_image(path);
        CHECK(img.v.size() == 1);
        CHECK(img.v[0] == 1.0);
    }
    SUBCASE("comments in the header are skipped") {
        auto path = scratch("comment.pgm").string();
        std::ofstream out(path, std::ios::binary);
        out << "P5\n# a comment\n2 1\n255\n";
        out.put(static_cast<char>(0));
        out.put(static_cast<char>(128));
        out.close();
        ImageGrid img = read_image(path);
        CHECK(img.w == 2);
        CHECK(img.v[1] == doctest::Approx(128.0 / 255.0));
    }
    SUBCASE("truncated payload reports the byte offset") {
        auto path = scratch("trunc.pgm").string();
        std::ofstream out(path, std::ios::binary);
        out << "P5\n4 4\n255\n";
        out.put(static_cast<char>(7));  // 1 of 16 bytes
        out.close();
        CHECK_THROWS_WITH_AS(read_image(path), doctest::Contains("byte offset 1"),
                             std::runtime_error);
    }
    SUBCASE("wrong magic rejected") {
        auto path = scratch("bad.pgm").string();
        std::ofstream out(path, std::ios::binary);
        out << "P3\n1 1\n255\n0\n";
        out.close();
        CHECK_THROWS_AS(read_image(path), std::runtime_error);
    }
}

TEST_CASE("experiment config text format") {
    SUBCASE("minimal document keeps defaults") {
        ExperimentConfig cfg = parse_config("task = pinn\nwidth = 64\n");
        CHECK(cfg.task == "pinn");
        CHECK(cfg.width == 64);
        CHECK(cfg.depth == 2);  // untouched default
        CHECK(cfg.lr == 5e-3);
        CHECK(cfg.seeds == std::vector<long>{0, 1, 2, 3, 4});
    }
    SUBCASE("comments and blank lines ignored") {
        ExperimentConfig cfg = parse_config("# header\n\nepochs = 7  # trailing\n");
        CHECK(cfg.epochs == 7);
    }
    SUBCASE("duplicate key names both lines") {
        CHECK_THROWS_WITH_AS(parse_config("width = 4\nwidth = 8\n"),
                             doctest::Contains("line 2"), std::runtime_error);
    }
    SUBCASE("unknown key rejected") {
        CHECK_THROWS_WITH_AS(parse_config("widht = 4\n"), doctest::Contains("unknown key"),
                             std::runtime_error);
    }
    SUBCASE("bad value names the key") {
        CHECK_THROWS_WITH_AS(parse_config("width = wide\n"), doctest::Contains("width"),
                             std::runtime_error);
    }
    SUBCASE("serialize/parse round trip is exact") {
        ExperimentConfig cfg;
        cfg.task = "ct";
        cfg.model = "siren";
        cfg.lr = 0.1 + 0.2;  // not exactly representable as text without %.17g
        cfg.seeds = {42, -3};
        cfg.noise_max_count = 1e-3;
        ExperimentConfig back = parse_config(serialize_config(cfg));
        CHECK(back == cfg);
    }
    SUBCASE("apply_override matches parsing the same assignment") {
        ExperimentConfig a = parse_config("sr_factor = 8\n");
        ExperimentConfig b;
        apply_override(b, "sr_factor=8");
        CHECK(a == b);
        CHECK_THROWS_AS(apply_override(b, "no-equals-sign"), std::runtime_error);
    }
    SUBCASE("config hash is stable and value sensitive") {
        ExperimentConfig a, b;
        CHECK(config_hash(a) == config_hash(b));
        b.width = a.width + 1;
        CHECK(config_hash(a) != config_hash(b));
        b = a;
        b.task = "denoise";
        CHECK(config_hash(a) != config_hash(b));
        CHECK(config_hash(a).size() == 16);
    }
}

TEST_CASE("model checkpoints") {
    SUBCASE("nestnet save/load is bitwise lossless") {
        Model m = build_nestnet(12, 2, EncodingSpec::fourier(3), 77);
        auto path = scratch("nest.ckpt").string();
        save_model(m, path);
        Model back = load_model(path);
        CHECK(back.name == m.name);
        CHECK(back.in_dim == m.in_dim);
        CHECK(back.out_dim == m.out_dim);
        REQUIRE(back.params.size() == m.params.size());
        CHECK(std::memcmp(back.params.data(), m.params.data(),
                          m.params.size() * sizeof(double)) == 0);
        REQUIRE(back.encoding.alpha.size() == m.encoding.alpha.size());
        CHECK(back.encoding.alpha == m.encoding.alpha);
        CHECK(back.encoding.beta == m.encoding.beta);
    }
    SUBCASE("loaded model evaluates identically") {
        Model m = build_baseline(BaselineKind::Siren, 8, 2, ActivationSpec::sine(30.0),
                                 EncodingSpec::identity(), 31);
        auto path = scratch("siren.ckpt").string();
        save_model(m, path);
        Model back = load_model(path);
        ModelEvaluator ea(m), eb(back);
        const double pt[2] = {0.2, -0.7};
        double va = ea(pt)[0], vb = eb(pt)[0];
        CHECK(std::memcmp(&va, &vb, sizeof va) == 0);
    }
    SUBCASE("mfn round trip keeps filters") {
        Model m = build_baseline(BaselineKind::Mfn, 8, 2, ActivationSpec::none(),
                                 EncodingSpec::identity(), 5, 2, 1, 32.0);
        auto path = scratch("mfn.ckpt").string();
        save_model(m, path);
        Model back = load_model(path);
        CHECK(back.arch == ArchKind::Mfn);
        CHECK(back.filters.size() == m.filters.size());
        CHECK(back.params == m.params);
    }
    SUBCASE("truncated checkpoint names the parameter") {
        Model m = build_nestnet(8, 2, EncodingSpec::fourier(2), 3);
        auto path = scratch("trunc.ckpt").string();
        save_model(m, path);
        std::ifstream in(path);
        std::stringstream all;
        all << in.rdbuf();
        in.close();
        std::string text = all.str();
        text.resize(text.size() * 3 / 4);
        std::ofstream out(path);
        out << text;
        out.close();
        CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("truncated"), std::runtime_error);
    }
    SUBCASE("non-checkpoint file rejected") {
        auto path = scratch("not.ckpt").string();
        std::ofstream out(path);
        out << "hello world\n";
        out.close();
        CHECK_THROWS_AS(load_model(path), std::runtime_error);
    }
}

TEST_CASE("jsonl result records") {
    auto make = [](long seed, double psnr_val) {
        ResultRecord r;
        r.config_hash = "00deadbeef001234";
        r.seed = seed;
        r.metrics.psnr_db = psnr_val;
        r.metrics.ssim = 0.91;
        r.curve_csv = "curve.csv";
        r.artifacts = {"recon.pgm"};
        r.wall_seconds = 1.25;
        r.param_count = 321;
        return r;
    };
    SUBCASE("three records give three lines and read back equal") {
        auto path = scratch("results.jsonl").string();
        fs::remove(path);
        for (long s = 0; s < 3; ++s) append_result(make(s, 20.0 + 0.1 * s), path);
        std::ifstream in(path);
        int lines = 0;
        std::string line;
        while (std::getline(in, line)) ++lines;
        CHECK(lines == 3);
        auto records = read_results(path);
        REQUIRE(records.size() == 3);
        for (long s = 0; s < 3; ++s) {
            CHECK(records[s].seed == s);
            double want = 20.0 + 0.1 * s;
            double got = *records[s].metrics.psnr_db;
            CHECK(std::memcmp(&got, &want, sizeof want) == 0);
            CHECK(records[s].artifacts == std::vector<std::string>{"recon.pgm"});
            CHECK(records[s].param_count == 321);
        }
    }
    SUBCASE("infinite psnr survives the round trip") {
        auto path = scratch("inf.jsonl").string();
        fs::remove(path);
        append_result(make(0, std::numeric_limits<double>::infinity()), path);
        auto records = read_results(path);
        REQUIRE(records.size() == 1);
        CHECK(std::isinf(*records[0].metrics.psnr_db));
    }
    SUBCASE("absent metrics stay absent") {
        auto path = scratch("sparse.jsonl").string();
        fs::remove(path);
        ResultRecord r = make(5, 30.0);
        r.metrics = {};
        r.metrics.iou = 0.5;
        append_result(r, path);
        auto records = read_results(path);
        CHECK_FALSE(records[0].metrics.psnr_db.has_value());
        CHECK(*records[0].metrics.iou == 0.5);
    }
    SUBCASE("empty file reads as empty list") {
        auto path = scratch("empty.jsonl").string();
        std::ofstream(path).close();
        CHECK(read_results(path).empty());
    }
    SUBCASE("malformed line reports its number") {
        auto path = scratch("bad.jsonl").string();
        fs::remove(path);
        append_result(make(0, 20.0), path);
        std::ofstream out(path, std::ios::app);
        out << "{not json\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_results(path), doctest::Contains(":2:"), std::runtime_error);
    }
}

TEST_CASE("csv writers") {
    SUBCASE("generic csv layout") {
        auto path = scratch("c.csv").string();
        write_csv(path, {"a", "b"}, {{1.0, 2.5}, {3.0, -4.0}});
        std::ifstream in(path);
        std::string l1, l2, l3;
        std::getline(in, l1);
        std::getline(in, l2);
        std::getline(in, l3);
        CHECK(l1 == "a,b");
        CHECK(l2 == "1,2.5");
        CHECK(l3 == "3,-4");
    }
    SUBCASE("sinogram header row carries the shape") {
        ImageGrid img = procedural_image(SignalKind::Bandlimited, 16, 16, 1, 2);
        Sinogram s = radon(img, uniform_angles(4));
        auto path = scratch("s.csv").string();
        write_sinogram_csv(s, path);
        std::ifstream in(path);
        std::string head;
        std::getline(in, head);
        CHECK(head == "4," + std::to_string(s.bins));
        int rows = 0;
        std::string line;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 4);
    }
}

#include <doctest.h>
#include <png.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "latcomp/config.hpp"
#include "latcomp/errors.hpp"
#include "latcomp/image_io.hpp"
#include "latcomp/loss_log.hpp"
#include "test_support.hpp"

using namespace latcomp;
using namespace latcomp::testing;
namespace fs = std::filesystem;

namespace {

// Writes raw samples through the libpng simplified API. `format` is one of
// the PNG_FORMAT_* constants; 16-bit formats take png_uint_16 samples.
void write_raw_png(const fs::path& path, int width, int height, png_uint_32 format, const void* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  REQUIRE(png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr) != 0);
}

std::size_t entries_in(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST_SUITE("images") {
  TEST_CASE("write then read stays within one quantisation step") {
    const auto dir = scratch_dir("roundtrip");
    const Tensor img = random_tensor(Shape{3, 13, 9}, 11, 0.0, 1.0);
    const auto path = (dir / "img.png").string();
    write_image(path, img);
    const Tensor back = read_image(path);
    REQUIRE(back.shape() == img.shape());
    CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-12);

    // A second round trip reproduces the 8-bit values exactly.
    write_image(path, back);
    CHECK(max_abs_diff(read_image(path), back) == 0.0);
  }

  TEST_CASE("black and white extremes") {
    const auto dir = scratch_dir("extremes");
    std::vector<unsigned char> black(5 * 4 * 3, 0), white(5 * 4 * 3, 255);
    write_raw_png(dir / "black.png", 5, 4, PNG_FORMAT_RGB, black.data());
    write_raw_png(dir / "white.png", 5, 4, PNG_FORMAT_RGB, white.data());
    const Tensor b = read_image((dir / "black.png").string());
    const Tensor w = read_image((dir / "white.png").string());
    CHECK(b.shape() == Shape{3, 4, 5});
    for (double v : b.values()) CHECK(v == 0.0);
    for (double v : w.values()) CHECK(v == 1.0);
  }

  TEST_CASE("alpha is dropped and gray expands to three channels") {
    const auto dir = scratch_dir("alpha");
    // Two pixels: opaque red and fully transparent green.
    const unsigned char rgba[] = {255, 0, 0, 255, 0, 255, 0, 0};
    write_raw_png(dir / "rgba.png", 2, 1, PNG_FORMAT_RGBA, rgba);
    const Tensor t = read_image((dir / "rgba.png").string());
    REQUIRE(t.shape() == Shape{3, 1, 2});
    CHECK(t(0, 0, 0) == 1.0);
    CHECK(t(1, 0, 0) == 0.0);
    CHECK(t(0, 0, 1) == 0.0);
    CHECK(t(1, 0, 1) == 1.0);

    const unsigned char gray[] = {0, 51, 255};
    write_raw_png(dir / "gray.png", 3, 1, PNG_FORMAT_GRAY, gray);
    const Tensor g = read_image((dir / "gray.png").string());
    for (int c = 0; c < 3; ++c) {
      CHECK(g(c, 0, 1) == doctest::Approx(0.2).epsilon(1e-12));
      CHECK(g(c, 0, 2) == 1.0);
    }
  }

  TEST_CASE("16-bit samples are read on the unit scale") {
    const auto dir = scratch_dir("sixteen");
    const png_uint_16 samples[] = {0, 65535, 32896};
    write_raw_png(dir / "deep.png", 3, 1, PNG_FORMAT_LINEAR_Y, samples);
    const Tensor t = read_image((dir / "deep.png").string());
    CHECK(t(0, 0, 0) == 0.0);
    CHECK(t(0, 0, 1) == 1.0);
    CHECK(t(2, 0, 2) == doctest::Approx(32896.0 / 65535.0));
  }

  TEST_CASE("resize on read yields the requested square size in range") {
    const auto dir = scratch_dir("resize");
    write_image((dir / "a.png").string(), random_tensor(Shape{3, 10, 6}, 3, 0.0, 1.0));
    const Tensor t = read_image((dir / "a.png").string(), 8);
    CHECK(t.shape() == Shape{3, 8, 8});
    for (double v : t.values()) CHECK((v >= 0.0 && v <= 1.0));
  }

  TEST_CASE("missing and non-PNG files raise IoError naming the path") {
    const auto dir = scratch_dir("bad");
    const auto missing = (dir / "nope.png").string();
    try {
      (void)read_image(missing);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(e.path() == missing);
    }
    const auto text = dir / "text.png";
    write_text_atomic(text.string(), "definitely not an image");
    CHECK_THROWS_AS((void)read_image(text.string()), IoError);
    CHECK_THROWS_AS((void)read_mask(text.string()), IoError);
  }

  TEST_CASE("mask binarisation threshold sits between 127 and 128") {
    const auto dir = scratch_dir("mask_threshold");
    const unsigned char gray[] = {0, 127, 128, 255};
    write_raw_png(dir / "m.png", 4, 1, PNG_FORMAT_GRAY, gray);
    const PixelMask m = read_mask((dir / "m.png").string());
    CHECK(m.plane().at(0, 0) == 0.0);
    CHECK(m.plane().at(0, 1) == 0.0);
    CHECK(m.plane().at(0, 2) == 1.0);
    CHECK(m.plane().at(0, 3) == 1.0);

    const png_uint_16 deep[] = {127 * 257, 128 * 257};
    write_raw_png(dir / "deep.png", 2, 1, PNG_FORMAT_LINEAR_Y, deep);
    const PixelMask d = read_mask((dir / "deep.png").string());
    CHECK(d.plane().at(0, 0) == 0.0);
    CHECK(d.plane().at(0, 1) == 1.0);
  }

  TEST_CASE("checkerboard mask round trip is bit exact and idempotent") {
    const auto dir = scratch_dir("checker");
    Plane p(6, 7);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 7; ++x) p.at(y, x) = (x + y) % 2 == 0 ? 1.0 : 0.0;
    }
    const PixelMask mask{Plane(p)};
    const auto first = dir / "a.png";
    const auto second = dir / "b.png";
    write_mask(first.string(), mask);
    const PixelMask back = read_mask(first.string());
    CHECK(back.plane().values == p.values);
    write_mask(second.string(), back);
    CHECK(read_bytes(first) == read_bytes(second));
  }

  TEST_CASE("mask read with a target size uses nearest neighbour") {
    const auto dir = scratch_dir("mask_resize");
    const PixelMask small = box_mask(4, 4, 1, 1, 2, 2);
    write_mask((dir / "m.png").string(), small);
    const PixelMask big = read_mask((dir / "m.png").string(), 8, 8);
    CHECK(big.plane().height == 8);
    CHECK(big.plane().width == 8);
    CHECK(big.area() == 16);
    for (double v : big.plane().values) CHECK((v == 0.0 || v == 1.0));
  }

  TEST_CASE("heatmaps are min-max normalised") {
    const auto dir = scratch_dir("heatmap");
    Plane flat(3, 3);
    for (double& v : flat.values) v = 4.2;
    write_heatmap((dir / "flat.png").string(), flat);
    const unsigned char expected_mid = 128;
    const Tensor mid = read_image((dir / "flat.png").string());
    for (double v : mid.values()) CHECK(v == doctest::Approx(expected_mid / 255.0));

    Plane ramp(1, 3);
    ramp.values = {-2.0, 0.0, 2.0};
    const Plane n = normalize_min_max(ramp);
    CHECK(n.values == std::vector<double>{0.0, 0.5, 1.0});
  }

  TEST_CASE("atomic write leaves nothing behind when the writer throws") {
    const auto dir = scratch_dir("atomic");
    const auto target = (dir / "out.bin").string();
    auto failing = [](std::FILE* fp) {
      std::fputs("partial", fp);
      throw std::runtime_error("injected");
    };
    CHECK_THROWS_WITH_AS(atomic_write(target, failing), "injected", std::runtime_error);
    CHECK_FALSE(fs::exists(target));
    CHECK(entries_in(dir) == 0);

    // An existing file keeps its old contents.
    write_text_atomic(target, "old");
    CHECK_THROWS(atomic_write(target, failing));
    CHECK(read_bytes(target) == "old");
    CHECK(entries_in(dir) == 1);
  }

  TEST_CASE("atomic write creates parent directories") {
    const auto dir = scratch_dir("nested");
    const auto target = dir / "a" / "b" / "c.txt";
    write_text_atomic(target.string(), "hello");
    CHECK(read_bytes(target) == "hello");
  }
}

TEST_SUITE("config") {
  TEST_CASE("an empty file yields the defaults") {
    const RunConfig parsed = parse_config("");
    const RunConfig defaults;
    CHECK(parsed == defaults);
    CHECK(parse_config("# only a comment\n\n") == defaults);
    CHECK(parsed.removal.steps == 150);
    CHECK(parsed.harmonization.steps == 200);
    CHECK(parsed.composition_extra.steps_text == 500);
    CHECK(parsed.composition_extra.steps_sketch == 200);
  }

  TEST_CASE("a single key overrides its default and nothing else") {
    const RunConfig c = parse_config("[harmonization]\nlambda_for = 0.2\n");
    RunConfig expected;
    expected.harmonization.weights.lambda_for = 0.2;
    CHECK(c == expected);
  }

  TEST_CASE("invalid values name the offending key") {
    auto key_of = [](const std::string& text) {
      try {
        (void)parse_config(text);
      } catch (const ConfigError& e) {
        return e.key();
      }
      return std::string("<no error>");
    };
    CHECK(key_of("[removal]\nsteps = 0\n") == "removal.steps");
    CHECK(key_of("[removal]\nlearning_rate = -1.0\n") == "removal.learning_rate");
    CHECK(key_of("[removal]\nbogus = 1\n") == "removal.bogus");
    CHECK(key_of("[nowhere]\nsteps = 1\n") == "nowhere");
    CHECK(key_of("[removal]\nsteps = \"many\"\n") == "removal.steps");
    CHECK(key_of("[harmonization]\nt_min = 600\nt_max = 500\n") == "harmonization.t_min");
    CHECK(key_of("[removal]\nt_max = 1001\n") == "removal.t_max");
    CHECK(key_of("[removal]\nsteps = 1\nsteps = 2\n") == "removal.steps");
    CHECK(key_of("[backend]\nkind = \"quantum\"\n") == "backend.kind");
    CHECK(key_of("[composition]\ncondition = \"sketch\"\n") == "composition.source_condition");
  }

  TEST_CASE("overrides parse literals and fall back to strings") {
    RunConfig c;
    apply_override(c, "removal.steps=12");
    apply_override(c, "harmonization.grad_mode=mse_backprop");
    apply_override(c, "removal.target_prompt=An empty room.");
    apply_override(c, "backend.kind=toy-attention");
    CHECK(c.removal.steps == 12);
    CHECK(c.harmonization.grad_mode == GradMode::mse_backprop);
    CHECK(c.removal.target_prompt == "An empty room.");
    CHECK(c.backend.kind == "toy-attention");
    CHECK_THROWS_AS(apply_override(c, "steps=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "removal.nonexistent=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "removal.steps=fast"), ConfigError);
  }

  TEST_CASE("dump and parse round trip") {
    RunConfig c;
    c.removal.learning_rate = 0.1234567890123;
    c.harmonization.source_prompt = "quote \" and backslash \\ inside";
    c.composition_extra.condition = ConditionKind::text;
    c.backend.seed = 987654321;
    c.io.placement = "explicit";
    CHECK(parse_config(dump_config(c)) == c);
    CHECK(dump_config(parse_config(dump_config(c))) == dump_config(c));
  }

  TEST_CASE("random single-key mutations survive a dump round trip") {
    std::mt19937_64 rng(2024);
    const std::vector<std::string> keys = config_keys();
    REQUIRE_FALSE(keys.empty());
    std::uniform_int_distribution<std::size_t> pick(0, keys.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int accepted = 0;
    for (int trial = 0; trial < 500; ++trial) {
      RunConfig c;
      const std::string key = keys[pick(rng)];
      const std::string current = config_value(c, key);
      std::string value;
      if (current == "true" || current == "false") {
        value = unit(rng) < 0.5 ? "true" : "false";
      } else if (!current.empty() && current.front() == '"') {
        value = "\"s" + std::to_string(rng() % 1000) + "\"";
      } else if (current.find_first_of(".eE") != std::string::npos) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", unit(rng) * 0.9 + 1e-3);
        value = buf;
      } else {
        value = std::to_string(rng() % 300);
      }
      try {
        apply_override(c, key + "=" + value);
        validate_config(c);
      } catch (const ConfigError& e) {
        // Rejections must name a real key.
        CHECK(std::find(keys.begin(), keys.end(), e.key()) != keys.end());
        continue;
      }
      ++accepted;
      const RunConfig back = parse_config(dump_config(c));
      CHECK_MESSAGE(back == c, "mutated key " << key << " = " << value);
      CHECK(config_value(back, key) == config_value(c, key));
    }
    CHECK(accepted > 250);
  }

  TEST_CASE("read_config reports a missing file as IoError") {
    const auto dir = scratch_dir("config_file");
    CHECK_THROWS_AS((void)read_config((dir / "missing.toml").string()), IoError);
    write_text_atomic((dir / "run.toml").string(), "[removal]\nsteps = 7 # short run\n");
    CHECK(read_config((dir / "run.toml").string()).removal.steps == 7);
  }
}

TEST_SUITE("loss log") {
  TEST_CASE("csv layout") {
    LossLog log;
    CHECK(log.to_csv() == "step,t,total,dds,per_bak,per_for,grad_norm\n");
    log.append({1, 300, 1.0, 0.5, 0.25, 0.125, 2.0});
    log.append({2, 120, 0.123456789, 0.0, 0.0, 0.0, 1e-9});
    log.append({3, 51, 1234567.0, -0.5, 0.0, 0.0, 0.0});
    const std::string csv = log.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv ==
          "step,t,total,dds,per_bak,per_for,grad_norm\n"
          "1,300,1,0.5,0.25,0.125,2\n"
          "2,120,0.123457,0,0,0,1e-09\n"
          "3,51,1.23457e+06,-0.5,0,0,0\n");
  }

  TEST_CASE("rows must arrive in order starting at one") {
    LossLog log;
    CHECK_THROWS_AS(log.append({2, 0, 0, 0, 0, 0, 0}), StateError);
    log.append({1, 0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(log.append({1, 0, 0, 0, 0, 0, 0}), StateError);
    CHECK_THROWS_AS(log.append({3, 0, 0, 0, 0, 0, 0}), StateError);
    CHECK(log.size() == 1);
  }

  TEST_CASE("flushing twice writes identical bytes") {
    const auto dir = scratch_dir("loss_log");
    LossLog log;
    for (int s = 1; s <= 5; ++s) log.append({s, 400 - s, 1.0 / s, 0.5 / s, 0.0, 0.0, 0.1 * s});
    const auto a = dir / "a.csv";
    const auto b = dir / "b.csv";
    log.flush(a.string());
    log.flush(b.string());
    CHECK(read_bytes(a) == read_bytes(b));
    CHECK(read_bytes(a) == log.to_csv());
  }
}

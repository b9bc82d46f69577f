#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "age/datagen.hpp"
#include "age/runconfig.hpp"

#ifndef AGE_CLI_PATH
#error "AGE_CLI_PATH must name the built CLI binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using age::nd::Tensor;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_all(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("age_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Result run(const std::string& args) const {
    const fs::path out = dir_ / ".stdout", err = dir_ / ".stderr";
    const std::string cmd = "cd '" + dir_.string() + "' && AGE_LOG=info '" + std::string(AGE_CLI_PATH) + "' " + args +
                            " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_all(out);
    r.err = read_all(err);
    return r;
  }

  // Small ring problem that trains in well under a second.
  fs::path small_config(std::size_t iters, const std::string& extra_train = "") const {
    const fs::path p = path("config.json");
    write_all(p, R"({"data": {"kind": "ring", "params": {"n": 256, "seed": 1}},
 "model": {"M": 2, "encoder_widths": [8], "generator_widths": [8]},
 "train": {"iters": )" + std::to_string(iters) + R"(, "batch_size": 16, "seed": 3)" + extra_train + "}}");
    return p;
  }

  fs::path gaussian_csv(const std::string& name, std::size_t n, double shift, std::uint64_t seed) const {
    age::Rng rng(seed);
    Tensor t = age::latent::sample_gaussian(n, 2, rng);
    for (std::size_t i = 0; i < n; ++i) t(i, 0) += shift;
    const fs::path p = path(name);
    std::ofstream os(p);
    age::data::write_csv(os, &t, {}, 2);
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TrainZeroItersWritesInitialState) {
  const auto cfg = small_config(0);
  const auto r = run("--config " + cfg.string() + " --out run train");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_all(path("run/metrics.csv")), "iter,div_real,div_fake,loss_latent,loss_data,v2\n");
  EXPECT_TRUE(fs::exists(path("run/encoder.age")));
  EXPECT_TRUE(fs::exists(path("run/generator.age")));
  EXPECT_TRUE(fs::exists(path("run/config.resolved.json")));
}

TEST_F(Cli, MetricsHaveOneRowPerIteration) {
  const auto r = run("--config " + small_config(7).string() + " --out run train");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string metrics = read_all(path("run/metrics.csv"));
  EXPECT_EQ(count_lines(metrics), 8u);
  std::istringstream is(metrics);
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 2), "1,");
}

TEST_F(Cli, FlagsOverrideConfig) {
  const auto r = run("--config " + small_config(7).string() + " --out run train --iters 3 --lambda 5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(read_all(path("run/metrics.csv"))), 4u);
  const json resolved = json::parse(read_all(path("run/config.resolved.json")));
  EXPECT_EQ(resolved["train"]["iters"], 3);
  EXPECT_EQ(resolved["train"]["lambda"], 5.0);
}

TEST_F(Cli, TrainingIsDeterministic) {
  const auto cfg = small_config(6);
  ASSERT_EQ(run("--config " + cfg.string() + " --out a train").code, 0);
  ASSERT_EQ(run("--config " + cfg.string() + " --out b train").code, 0);
  EXPECT_EQ(read_all(path("a/metrics.csv")), read_all(path("b/metrics.csv")));
  EXPECT_EQ(read_all(path("a/encoder.age")), read_all(path("b/encoder.age")));
  EXPECT_EQ(read_all(path("a/generator.age")), read_all(path("b/generator.age")));
  ASSERT_EQ(run("--config " + cfg.string() + " --seed 99 --out c train").code, 0);
  EXPECT_NE(read_all(path("a/metrics.csv")), read_all(path("c/metrics.csv")));
}

TEST_F(Cli, ResolvedConfigReproducesTheRun) {
  ASSERT_EQ(run("--config " + small_config(4).string() + " --out a train").code, 0);
  const json resolved = json::parse(read_all(path("a/config.resolved.json")));
  for (const char* key : {"M", "encoder_widths", "generator_widths", "prior", "condition", "activation", "leaky_slope"})
    EXPECT_TRUE(resolved["model"].contains(key)) << key;
  for (const char* key : {"iters", "batch_size", "lr", "beta1", "beta2", "lambda", "mu", "gen_updates_per_enc", "seed",
                          "divergence_method"})
    EXPECT_TRUE(resolved["train"].contains(key)) << key;
  ASSERT_EQ(run("--config a/config.resolved.json --out b train").code, 0);
  EXPECT_EQ(read_all(path("a/metrics.csv")), read_all(path("b/metrics.csv")));
}

TEST_F(Cli, InvalidConfigExitsTwoWithFieldPath) {
  write_all(path("bad.json"), R"({"train": {"foo": 1}})");
  auto r = run("--config bad.json train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.foo"), std::string::npos) << r.err;

  write_all(path("bad2.json"), R"({"model": {"M": "eight"}})");
  r = run("--config bad2.json train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.M"), std::string::npos) << r.err;

  write_all(path("bad3.json"), R"({"train": {"lambda": -1}})");
  r = run("--config bad3.json train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.lambda"), std::string::npos) << r.err;

  write_all(path("bad4.json"), "{not json");
  EXPECT_EQ(run("--config bad4.json train").code, 2);
  EXPECT_EQ(run("--config missing.json train").code, 2);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("sample").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, SampleContracts) {
  ASSERT_EQ(run("--config " + small_config(2).string() + " --out run train").code, 0);
  auto r = run("--out empty.csv sample --ckpt run/generator.age -n 0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_all(path("empty.csv")), "x0,x1\n");

  ASSERT_EQ(run("--seed 5 --out s1.csv sample --ckpt run/generator.age -n 50").code, 0);
  ASSERT_EQ(run("--seed 5 --out s2.csv sample --ckpt run/generator.age -n 50").code, 0);
  const std::string s1 = read_all(path("s1.csv"));
  EXPECT_EQ(s1, read_all(path("s2.csv")));
  EXPECT_EQ(count_lines(s1), 51u);
  EXPECT_EQ(age::data::load_csv(path("s1.csv").string()).size(), 50u);

  r = run("--out s3.csv sample --ckpt run/generator.age -n 5 --prior gaussian");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("prior"), std::string::npos);

  EXPECT_EQ(run("--out s4.csv sample --ckpt run/encoder.age -n 5").code, 2);
  EXPECT_EQ(run("--out s5.csv sample --ckpt nowhere.age -n 5").code, 2);
}

TEST_F(Cli, ConditionalSampleCarriesLabels) {
  ASSERT_EQ(run("--config " + small_config(2).string() + " --out run train").code, 0);
  write_all(path("cond.json"), R"({"data": {"kind": "ring", "params": {"n": 256, "seed": 1}},
 "model": {"M": 3, "encoder_widths": [8], "generator_widths": [8], "condition": true},
 "train": {"iters": 2, "batch_size": 16}})");
  ASSERT_EQ(run("--config cond.json --out crun train").code, 0);
  ASSERT_EQ(run("--out c.csv sample --ckpt crun/generator.age -n 16").code, 0);
  const auto ds = age::data::load_csv(path("c.csv").string());
  ASSERT_EQ(ds.labels.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(ds.labels[i], i % 8);
  ASSERT_EQ(run("--out c3.csv sample --ckpt crun/generator.age -n 4 --label 3").code, 0);
  for (std::size_t l : age::data::load_csv(path("c3.csv").string()).labels) EXPECT_EQ(l, 3u);
}

TEST_F(Cli, ReconstructContracts) {
  const auto data = gaussian_csv("in.csv", 13, 0.0, 1);
  auto r = run("--out rec.csv reconstruct --data in.csv --identity-stubs");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["mean_l1"], 0.0);
  const auto rec = age::data::load_csv(path("rec.csv").string());
  EXPECT_EQ(rec.size(), 26u);

  ASSERT_EQ(run("--config " + small_config(2).string() + " --out run train").code, 0);
  r = run("--out rec2.csv reconstruct --encoder run/encoder.age --generator run/generator.age --data in.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["n"], 13);
  EXPECT_EQ(age::data::load_csv(path("rec2.csv").string()).size(), 26u);

  write_all(path("three.csv"), "x0,x1,x2\n1,2,3\n");
  EXPECT_EQ(run("reconstruct --encoder run/encoder.age --generator run/generator.age --data three.csv").code, 2);
  write_all(path("ragged.csv"), "x0,x1\n1,2\n3\n");
  EXPECT_EQ(run("reconstruct --identity-stubs --data ragged.csv").code, 2);
}

TEST_F(Cli, InterpolateContracts) {
  auto r = run("--out two.csv interpolate --identity-stubs --x1 1,0 --x2 0,1 --steps 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(age::data::load_csv(path("two.csv").string()).samples, Tensor::from_rows({{1, 0}, {0, 1}}));

  r = run("--out path.csv interpolate --identity-stubs --x1 0.6,0.8,0 --x2 0,0,1 --steps 11 --codes-out codes.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto codes = age::data::load_csv(path("codes.csv").string());
  ASSERT_EQ(codes.size(), 11u);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_NEAR(age::latent::norm(codes.samples.row_span(i)), 1.0, 1e-9);

  r = run("interpolate --identity-stubs --x1 1,0 --x2 -1,0");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("antipodal"), std::string::npos) << r.err;

  EXPECT_EQ(run("interpolate --identity-stubs --x1 1,0 --x2 0,1 --steps 1").code, 2);

  ASSERT_EQ(run("--config " + small_config(2).string() + " --out run train").code, 0);
  r = run("--out trained.csv interpolate --encoder run/encoder.age --generator run/generator.age --x1 2,0 --x2 0,2 --steps 5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(age::data::load_csv(path("trained.csv").string()).size(), 5u);
}

TEST_F(Cli, EvalDivergenceCalibration) {
  gaussian_csv("g.csv", 5000, 0.0, 7);
  auto r = run("eval-divergence --input g.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  json j = json::parse(r.out);
  EXPECT_LE(j["value"].get<double>(), 0.05);
  EXPECT_EQ(j["n"], 5000);
  EXPECT_EQ(j["M"], 2);

  r = run("eval-divergence --input g.csv --method knn-kl --k 5");
  ASSERT_EQ(r.code, 0) << r.err;
  j = json::parse(r.out);
  EXPECT_NEAR(j["value"].get<double>(), 0.0, 0.07);
  EXPECT_EQ(j["k"], 5);

  gaussian_csv("shift.csv", 5000, 1.0, 8);
  const double para = json::parse(run("eval-divergence --input shift.csv").out)["value"];
  const double knn = json::parse(run("eval-divergence --input shift.csv --method knn-kl").out)["value"];
  EXPECT_NEAR(para, 0.5, 0.07);
  EXPECT_NEAR(knn, 0.5, 0.07);
  EXPECT_NEAR(para, knn, 0.1);

  write_all(path("bad.csv"), "x0,x1\n1,zz\n");
  r = run("eval-divergence --input bad.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_EQ(run("eval-divergence --input g.csv --method nope").code, 2);
}

TEST_F(Cli, VerifyTheory) {
  auto r = run("verify-theory");
  ASSERT_EQ(r.code, 0) << r.err;
  const json certs = json::parse(r.out);
  ASSERT_TRUE(certs.is_array());
  EXPECT_GT(certs.size(), 9u);
  for (const auto& c : certs) EXPECT_TRUE(c["violations"].empty()) << c.dump();

  r = run("verify-theory --trials 0");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out).size(), 9u);

  r = run("verify-theory --inject-negated-divergence");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("VIOLATION"), std::string::npos);

  EXPECT_EQ(run("verify-theory --max-k 9").code, 2);
}

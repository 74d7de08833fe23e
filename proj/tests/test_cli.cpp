#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

struct Result {
  int status = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ODEFILTER_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "odefilter_cli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, SolveHeaderAndRows) {
  const Result r = run("solve --problem logistic --variant ekf --q 2 --h 0.01");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(first_line(r.out), "t,mean_1,std_1,residual_norm,chi2");
  EXPECT_EQ(line_count(r.out), 252u);
}

TEST(Cli, SolveTwoDimensionalHeader) {
  const Result r = run("solve --problem linear --variant kf --h 0.1");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(first_line(r.out), "t,mean_1,mean_2,std_1,std_2,residual_norm,chi2");
  EXPECT_EQ(line_count(r.out), 102u);
}

TEST(Cli, BenchmarkHeaderAndDeterminism) {
  const std::string args = "benchmark --problem logistic --variant ekf,sch --q 1,2 --h 0.05,0.1 --no-timing";
  const Result a = run(args);
  const Result b = run(args + " --jobs 2");
  ASSERT_EQ(a.status, 0);
  EXPECT_EQ(first_line(a.out), "variant,q,h,rmse,chi2_bar,sigma2_hat,runtime_ns");
  EXPECT_EQ(line_count(a.out), 9u);
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, PfOutputsAndSeeds) {
  const auto dir = scratch_dir();
  const auto out = dir / "pf.csv";
  const std::string base = "pf --particles 50 --out " + out.string();
  ASSERT_EQ(run(base + " --seed 4").status, 0);
  const std::string first = slurp(out);
  const std::string kde = slurp(dir / "pf_kde.csv");
  EXPECT_EQ(first_line(first), "variant,h,kappa,q,seed,mean_estimate");
  EXPECT_EQ(line_count(first), 3u);
  EXPECT_EQ(first_line(kde), "variant,h,kappa,q,seed,t,y,density");
  EXPECT_EQ(line_count(kde), 1u + 2u * 3u * 512u);
  ASSERT_EQ(run(base + " --seed 4").status, 0);
  EXPECT_EQ(slurp(out), first);
  ASSERT_EQ(run(base + " --seed 5").status, 0);
  EXPECT_NE(slurp(out), first);
}

TEST(Cli, StabilitySinglePoint) {
  const Result r = run("stability --q 2 --h 0.1 --lambda1 -1 --lambda2 1");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(first_line(r.out), "lambda1,lambda2,q,h,spectral_radius,certified");
  EXPECT_EQ(line_count(r.out), 2u);
  EXPECT_NE(r.out.find(",true\n"), std::string::npos);
  EXPECT_EQ(line_count(run("stability --q 1 --h 0.1 --lambda1 0 --lambda2 0").out), 1u);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("solve --problem logistic --variant bogus").status, 2);
  EXPECT_EQ(run("solve --problem logistic --h 0").status, 2);
  EXPECT_EQ(run("solve --problem logistic --variant \"\"").status, 2);
  EXPECT_EQ(run("solve").status, 2);
  EXPECT_EQ(run("--problem logistic").status, 2);
  EXPECT_EQ(run("benchmark --problem logistic --frobnicate").status, 2);
  EXPECT_EQ(run("benchmark --problem logistic --variant kf").status, 2);
  EXPECT_EQ(run("pf --r 0.1").status, 2);
  EXPECT_EQ(run("--help").status, 0);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto cfg = scratch_dir() / "run.toml";
  {
    std::ofstream f(cfg);
    f << "problem = \"logistic\"\nvariant = \"ekf\"\nh = 0.05\n";
  }
  const Result from_file = run("solve --config " + cfg.string());
  ASSERT_EQ(from_file.status, 0);
  EXPECT_EQ(line_count(from_file.out), 52u);
  const Result overridden = run("solve --config " + cfg.string() + " --h 0.1");
  ASSERT_EQ(overridden.status, 0);
  EXPECT_EQ(line_count(overridden.out), 27u);
}

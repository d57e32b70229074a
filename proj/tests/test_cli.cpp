#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/stat.h>
#include <sys/wait.h>

#include "doctest.h"
#include "nps/layout.hpp"
#include "testutil.hpp"

namespace {

std::string cli_path() {
  if (const char* p = std::getenv("NPS_CLI_PATH")) return p;
#ifdef NPS_CLI_PATH
  return NPS_CLI_PATH;
#else
  FAIL("NPS_CLI_PATH not set");
  return {};
#endif
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string out_file = "/tmp/nps_cli_out.txt";
  const std::string cmd = cli_path() + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(out_file);
    std::ostringstream os;
    os << in.rdbuf();
    *output = os.str();
  }
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

struct CliFixture {
  std::string dir;
  std::string layout_path, samples_path;

  CliFixture() {
    dir = "/tmp/nps_cli_fixture";
    ::mkdir(dir.c_str(), 0755);
    layout_path = dir + "/layout.json";
    samples_path = dir + "/samples.txt";

    nps::PatchLayout layout;
    const nps::LabeledSamples samples = fixtures::sphere_fixture(layout, 400, 77);
    nps::write_layout(layout, layout_path);
    std::ofstream out(samples_path);
    out.precision(17);
    for (const auto& p : samples.points)
      out << p.position.x() << " " << p.position.y() << " " << p.position.z() << " "
          << p.normal.x() << " " << p.normal.y() << " " << p.normal.z() << " " << p.patch_id
          << "\n";
  }

  std::string tiny_fit_flags() const {
    return "--iterations 6 --warmup_iters 2 --fair_decay_start 4 --fair_decay_iters 2 "
           "--feature_dim 4 --layers 2 --hidden 8 --m_per_edge 4 --fair_samples_per_arc 4 "
           "--batch_points 100 --seed 3";
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("help exits zero and documents the subcommands") {
  std::string out;
  CHECK(run_cli("--help", &out) == 0);
  CHECK(out.find("usage:") != std::string::npos);
  for (const char* sub : {"validate", "fit", "train-space", "mesh", "eval", "interp",
                          "fit-cloud", "edit", "NPS_SEED"})
    CHECK(out.find(sub) != std::string::npos);
}

TEST_CASE("validate distinguishes clean and broken layouts") {
  const CliFixture fx;
  std::string out;
  CHECK(run_cli("validate --layout " + fx.layout_path, &out) == 0);
  CHECK(out.find("layout ok") != std::string::npos);

  const std::string bad = fx.dir + "/bad_layout.json";
  {
    std::ofstream os(bad);
    os << R"({"corners":[{"id":0,"position":[0,0,0]},{"id":1,"position":[1,0,0]},
              {"id":2,"position":[0,1,0]}],
              "faces":[{"id":0,"corners":[0,1,1,2]}]})";
  }
  CHECK(run_cli("validate --layout " + bad, &out) == 1);
  CHECK(out.find("violation") != std::string::npos);

  CHECK(run_cli("validate --layout /tmp/nps_absent.json", &out) == 2);
}

TEST_CASE("unknown options and subcommands exit 2") {
  const CliFixture fx;
  std::string out;
  CHECK(run_cli("frobnicate", &out) == 2);
  CHECK(run_cli("validate --layout " + fx.layout_path + " --bogus 1", &out) == 2);
  CHECK(out.find("bogus") != std::string::npos);
  CHECK(run_cli("validate --layout", &out) == 2);  // missing value
}

TEST_CASE("unknown config file keys are rejected") {
  const CliFixture fx;
  const std::string cfg = fx.dir + "/bad.cfg";
  {
    std::ofstream os(cfg);
    os << "# comment\niterations = 6\nnot_a_key = 1\n";
  }
  std::string out;
  CHECK(run_cli("fit --layout " + fx.layout_path + " --samples " + fx.samples_path +
                    " --out " + fx.dir + "/x.ckpt --config " + cfg,
                &out) == 2);
  CHECK(out.find("not_a_key") != std::string::npos);
}

TEST_CASE("fit, eval and mesh round trip") {
  const CliFixture fx;
  const std::string ckpt = fx.dir + "/sphere.ckpt";
  std::string out;
  REQUIRE(run_cli("fit --layout " + fx.layout_path + " --samples " + fx.samples_path +
                      " --out " + ckpt + " " + fx.tiny_fit_flags(),
                  &out) == 0);

  // Default log path is out + ".log" with one JSON line per iteration.
  std::istringstream log(slurp(ckpt + ".log"));
  int lines = 0;
  std::string line;
  while (std::getline(log, line))
    if (!line.empty()) {
      CHECK(line.front() == '{');
      ++lines;
    }
  CHECK(lines == 6);

  const std::string report = fx.dir + "/report.json";
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --target " + fx.samples_path +
                      " --n-samples 500 --seed 1 --out " + report,
                  &out) == 0);
  const std::string json = slurp(report);
  for (const char* key : {"p2s", "hd", "nae_degrees", "max_positional_gap"})
    CHECK(json.find(key) != std::string::npos);

  const std::string obj = fx.dir + "/sphere.obj";
  REQUIRE(run_cli("mesh --checkpoint " + ckpt + " --out " + obj + " --density 4", &out) == 0);
  const std::string obj_text = slurp(obj);
  CHECK(obj_text.find("v ") != std::string::npos);
  CHECK(obj_text.find("f ") != std::string::npos);

  // interp needs a shape-space checkpoint.
  CHECK(run_cli("interp --checkpoint " + ckpt + " --a 0 --b 1 --steps 2 --out-dir " + fx.dir,
                &out) == 2);
}

TEST_CASE("fit is byte-reproducible for a fixed seed") {
  const CliFixture fx;
  const std::string a = fx.dir + "/det_a.ckpt", b = fx.dir + "/det_b.ckpt";
  std::string out;
  REQUIRE(run_cli("fit --layout " + fx.layout_path + " --samples " + fx.samples_path +
                      " --out " + a + " " + fx.tiny_fit_flags(),
                  &out) == 0);
  REQUIRE(run_cli("fit --layout " + fx.layout_path + " --samples " + fx.samples_path +
                      " --out " + b + " " + fx.tiny_fit_flags(),
                  &out) == 0);
  const std::string bytes_a = slurp(a), bytes_b = slurp(b);
  CHECK(bytes_a.size() > 0);
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("NPS_SEED environment fallback feeds the config seed") {
  const CliFixture fx;
  const std::string a = fx.dir + "/env_a.ckpt", b = fx.dir + "/env_b.ckpt";
  const std::string flags =
      "--iterations 2 --warmup_iters 0 --fair_decay_start 1 --fair_decay_iters 1 "
      "--feature_dim 4 --layers 2 --hidden 8 --m_per_edge 4 --fair_samples_per_arc 4 "
      "--batch_points 100";
  const std::string base = "fit --layout " + fx.layout_path + " --samples " + fx.samples_path;
  const int ra = std::system(("NPS_SEED=9 " + cli_path() + " " + base + " --out " + a + " " +
                              flags + " > /dev/null 2>&1")
                                 .c_str());
  const int rb = std::system(("NPS_SEED=9 " + cli_path() + " " + base + " --out " + b + " " +
                              flags + " > /dev/null 2>&1")
                                 .c_str());
  REQUIRE(WEXITSTATUS(ra) == 0);
  REQUIRE(WEXITSTATUS(rb) == 0);
  CHECK(slurp(a) == slurp(b));
}

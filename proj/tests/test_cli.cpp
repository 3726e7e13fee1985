/*
 * Copyright 2026 The magtrack Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "magtrack/io.hpp"

namespace magtrack {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("magtrack_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliResult run(const std::string& args) const {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("env -u MAGTRACK_SEED ") + MAGTRACK_CLI + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }

  void write(const std::string& name, const std::string& text) const { write_file(path(name), text); }

  // small simulated log in dir/sim
  void simulate(const std::string& sub = "sim", const std::string& extra = "") const {
    write("scenario.json", R"({"duration_s": 180, "seed": 3})");
    ASSERT_EQ(run("sim --scenario " + path("scenario.json") + " --out " + path(sub) + " " + extra).code, 0);
  }

  fs::path dir_;
};

TEST_F(Cli, SimIsDeterministicAndSeedSensitive) {
  simulate("a");
  simulate("b");
  simulate("c", "--seed 4");
  EXPECT_EQ(read_file(path("a/events.jsonl")), read_file(path("b/events.jsonl")));
  EXPECT_EQ(read_file(path("a/truth.jsonl")), read_file(path("b/truth.jsonl")));
  EXPECT_NE(read_file(path("a/events.jsonl")), read_file(path("c/events.jsonl")));
}

TEST_F(Cli, MissingScenarioExitsConfig) {
  const CliResult r = run("sim --scenario " + path("nope.json") + " --out " + path("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos) << r.err;
}

TEST_F(Cli, BadConfigExitsConfig) {
  write("cfg.json", R"({"scenario": {"p_l": 3}})");
  EXPECT_EQ(run("sim --config " + path("cfg.json") + " --out " + path("x")).code, 2);
  EXPECT_EQ(run("sim --bogus").code, 2);
}

TEST_F(Cli, UnknownSensorExitsDataNamingLine) {
  simulate();
  write("bad.jsonl",
        R"({"sensor_id":"L0-S0000","t_us":1,"direction":[1,0,0],"strength_nT":100})" "\n"
            R"({"sensor_id":"ZZ","t_us":2,"direction":[1,0,0],"strength_nT":100})" "\n");
  const CliResult r = run("track --layout " + path("sim/layout.json") + " --events " + path("bad.jsonl") + " --out " +
                    path("t.jsonl"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedLineExitsData) {
  simulate();
  write("bad.jsonl", "{not json\n");
  const CliResult r = run("track --layout " + path("sim/layout.json") + " --events " + path("bad.jsonl") + " --out " +
                    path("t.jsonl"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST_F(Cli, WindowSizeDoesNotChangeTracks) {
  simulate();
  const std::string base = "track --layout " + path("sim/layout.json") + " --events " + path("sim/events.jsonl");
  ASSERT_EQ(run(base + " --window-s 5 --out " + path("w5.jsonl")).code, 0);
  ASSERT_EQ(run(base + " --window-s 3600 --out " + path("w3600.jsonl")).code, 0);
  ASSERT_EQ(run(base + " --batch --out " + path("batch.jsonl")).code, 0);
  const std::string w5 = read_file(path("w5.jsonl"));
  EXPECT_FALSE(w5.empty());
  EXPECT_EQ(w5, read_file(path("w3600.jsonl")));
  EXPECT_EQ(w5, read_file(path("batch.jsonl")));
}

TEST_F(Cli, EvalScoresAndAsserts) {
  simulate();
  ASSERT_EQ(run("track --layout " + path("sim/layout.json") + " --events " + path("sim/events.jsonl") + " --out " +
                path("t.jsonl"))
                .code,
            0);
  const std::string base = "eval --tracks " + path("t.jsonl") + " --truth " + path("sim/truth.jsonl");
  const CliResult r = run(base + " --out " + path("report.json") + " --csv " + path("pv.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = read_json_file(path("report.json"));
  EXPECT_GE(rep.at("track_accuracy").get<double>(), 0.9);
  EXPECT_EQ(read_file(path("pv.csv")).rfind("vehicle_id,", 0), 0u);
  EXPECT_EQ(run(base + " --assert-accuracy 0.5").code, 0);
  EXPECT_EQ(run(base + " --assert-accuracy 1.01").code, 4);
}

TEST_F(Cli, EvalOfTruthEchoIsPerfect) {
  write("scenario.json", R"({"duration_s": 120, "p_false": 0, "seed": 2})");
  ASSERT_EQ(run("sim --scenario " + path("scenario.json") + " --out " + path("sim")).code, 0);
  // one track per truth vehicle holding exactly its labels
  std::ifstream in(path("sim/truth.jsonl"));
  std::string tracks;
  for (std::string line; std::getline(in, line);) {
    const json l = json::parse(line);
    tracks += json{{"vehicle_id", "V" + std::to_string(l.at("vehicle_id").get<int>())},
                   {"lane_id", 0},
                   {"t_us", l.at("t_us")},
                   {"chainage_m", l.at("chainage_m")},
                   {"speed_mps", l.at("speed_mps")},
                   {"sensor_id", l.at("sensor_id")}}
                  .dump() +
              "\n";
  }
  write("echo.jsonl", tracks);
  const CliResult r = run("eval --tracks " + path("echo.jsonl") + " --truth " + path("sim/truth.jsonl") + " --out " +
                    path("r.json") + " --assert-accuracy 1.0");
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = read_json_file(path("r.json"));
  EXPECT_EQ(rep.at("track_accuracy").get<double>(), 1.0);
  EXPECT_EQ(rep.at("id_swaps").get<int>(), 0);
}

TEST_F(Cli, EvalInconsistentTruthExitsData) {
  simulate();
  write("t.jsonl", R"({"vehicle_id":"X","lane_id":0,"t_us":7,"chainage_m":0,"speed_mps":10,"sensor_id":"L0-S0000"})" "\n");
  EXPECT_EQ(run("eval --tracks " + path("t.jsonl") + " --truth " + path("sim/truth.jsonl")).code, 3);
  EXPECT_EQ(run("eval --tracks " + path("none.jsonl") + " --truth " + path("sim/truth.jsonl")).code, 1);
}

TEST_F(Cli, RiccatiCsv) {
  CliResult r = run("riccati --model CV --steps 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("step,velocity_variance\n1,", 0), 0u) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);

  auto last = [](const std::string& csv) {
    const auto end = csv.find_last_not_of('\n');
    const auto start = csv.rfind('\n', end);
    const std::string row = csv.substr(start + 1, end - start);
    return std::stod(row.substr(row.find(',') + 1));
  };
  auto row = [](const std::string& csv, int n) {
    std::size_t pos = 0;
    for (int i = 0; i < n; ++i) pos = csv.find('\n', pos) + 1;
    const std::string line = csv.substr(pos, csv.find('\n', pos) - pos);
    return std::stod(line.substr(line.find(',') + 1));
  };
  r = run("riccati --model CV --steps 200");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(row(r.out, 199), last(r.out), 1e-9 * last(r.out));
  const double cv = last(r.out);
  // default q is (0.5 a_max)^2 with a_max = 2.78
  const double ca_half = last(run("riccati --model CA --steps 200").out);
  const double ca_full = last(run("riccati --model CA --q 7.7284 --steps 200").out);
  EXPECT_LT(cv, ca_half);
  EXPECT_LT(ca_half, ca_full);
  EXPECT_EQ(run("riccati --model XY").code, 2);
}

TEST_F(Cli, EndToEnd) {
  write("scenario.json", R"({"duration_s": 180})");
  const CliResult r = run("e2e --scenario " + path("scenario.json") + " --seed 5 --out " + path("e2e") +
                    " --assert-accuracy 0.9");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"events.jsonl", "truth.jsonl", "tracks.jsonl", "updates.jsonl", "report.json", "per_vehicle.csv"}) {
    EXPECT_TRUE(fs::exists(path("e2e/") + f)) << f;
  }
}

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run("--help").code, 0);
  for (const char* sub : {"sim", "track", "eval", "riccati", "e2e"}) {
    const CliResult r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(run("").code, 2);
}

}  // namespace
}  // namespace magtrack

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

#include <cstdlib>

#include "magtrack/config.hpp"

namespace magtrack {
namespace {

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const RunConfig c = run_config_from_json(json::object());
  EXPECT_EQ(to_json(c), to_json(RunConfig{}));
}

TEST(RunConfig, RoundTrip) {
  RunConfig c;
  c.scenario.seed = 77;
  c.scenario.motion = MotionKind::CA;
  c.scenario.p_l = 0.1;
  c.tracker.association.sigma_t_s = 0.2;
  c.tracker.motion.kind = MotionKind::CA;
  c.stream.window_s = 5.0;
  const json j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
}

TEST(RunConfig, UnknownKeysRejected) {
  for (const char* text : {R"({"bogus":1})", R"({"scenario":{"p_x":0.1}})", R"({"association":{"pl":0.1}})",
                           R"({"scenario":{"layout":{"lane":2}}})", R"({"stream":{"window":5}})"}) {
    try {
      run_config_from_json(json::parse(text));
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
      EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos) << e.what();
    }
  }
}

TEST(RunConfig, InvalidValuesRejected) {
  for (const char* text : {R"({"scenario":{"p_l":2}})", R"({"stream":{"window_s":0}})",
                           R"({"association":{"sigma_t_s":-1}})", R"({"motion":{"kind":"xx"}})",
                           R"({"scenario":{"duration_s":"long"}})", R"([1,2])"}) {
    EXPECT_THROW(run_config_from_json(json::parse(text)), Error) << text;
  }
}

TEST(RunConfig, MissingFileIsIo) {
  try {
    load_run_config("/nonexistent/config.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}

TEST(SeedFromEnv, ReadsVariable) {
  ::unsetenv("MAGTRACK_SEED");
  EXPECT_EQ(seed_from_env(5), 5u);
  ::setenv("MAGTRACK_SEED", "123", 1);
  EXPECT_EQ(seed_from_env(5), 123u);
  ::setenv("MAGTRACK_SEED", "12x", 1);
  EXPECT_THROW(seed_from_env(5), Error);
  ::unsetenv("MAGTRACK_SEED");
}

}  // namespace
}  // namespace magtrack

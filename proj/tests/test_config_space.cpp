#include <doctest.h>

#include <map>
#include <set>

#include "pipetune/config_space.hpp"
#include "pipetune/error.hpp"

using namespace pipetune;

TEST_CASE("default space has the expected size and encoding width") {
  const auto space = ConfigSpace::default_space();
  // 6 * 3^6 * 4 * 2 computed independently of the library.
  CHECK(space.size() == 6ull * 3 * 3 * 3 * 3 * 4 * 3 * 2 * 3);
  CHECK(space.size() == 34992);
  CHECK(space.encoded_width() == 6 + 8);
  CHECK(space.encoded_names().size() == space.encoded_width());
  CHECK(space.encoded_names()[0] == "base_model=Qwen2.5-1.5B-Instruct");
}

TEST_CASE("flat index round trip and enumeration order") {
  const auto space = ConfigSpace::default_space();
  const auto all = enumerate(space);
  REQUIRE(all.size() == space.size());
  for (std::uint64_t i = 0; i < all.size(); i += 97) {
    CHECK(space.flat_index(all[i]) == i);
    CHECK(space.at(i) == all[i]);
  }
  CHECK(std::is_sorted(all.begin(), all.end()));
  CHECK(all.back().indices() == std::vector<std::uint16_t>{5, 2, 2, 2, 2, 3, 2, 1, 2});
}

TEST_CASE("construction rejects malformed spaces") {
  CHECK_THROWS_AS(ConfigSpace({}), InvalidArgument);
  CHECK_THROWS_AS(ConfigSpace({{"a", {Level{1.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(ConfigSpace({{"a", {Level{1.0}, Level{1.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(ConfigSpace({{"a", {Level{1.0}, Level{"x"}}}}), InvalidArgument);
  CHECK_THROWS_AS(ConfigSpace({{"a", {Level{1.0}, Level{2.0}}}, {"a", {Level{1.0}, Level{2.0}}}}),
                  InvalidArgument);
}

TEST_CASE("validate rejects out-of-range indices") {
  const auto space = ConfigSpace::default_space();
  CHECK_THROWS_AS(space.validate(Configuration({6, 0, 0, 0, 0, 0, 0, 0, 0})), InvalidConfiguration);
  CHECK_THROWS_AS(space.validate(Configuration({0, 0})), InvalidConfiguration);
  CHECK_NOTHROW(space.validate(Configuration({5, 2, 2, 2, 2, 3, 2, 1, 2})));
}

TEST_CASE("encode emits one-hot blocks and raw numeric levels") {
  const auto space = ConfigSpace::default_space();
  const auto x = encode(Configuration({2, 1, 0, 2, 1, 3, 1, 0, 2}), space);
  const std::vector<double> expected{0, 0, 1, 0, 0, 0, 2, 32, 5e-5, 128, 1e-5, 0.05, 8, 1.1};
  CHECK(x == expected);
}

TEST_CASE("json round trips") {
  const auto space = ConfigSpace::default_space();
  CHECK(ConfigSpace::from_json(space.to_json()) == space);
  const Configuration c({3, 0, 1, 2, 0, 1, 2, 1, 0});
  const auto doc = space.config_to_json(c);
  CHECK(doc["base_model"] == "Llama3.2-1B-Instruct");
  CHECK(doc["sft_batch_size"] == 64.0);
  CHECK(space.config_from_json(doc) == c);
  auto bad = doc;
  bad["sft_epochs"] = 7;
  CHECK_THROWS_AS(space.config_from_json(bad), InvalidConfiguration);
}

TEST_CASE("balanced sampling") {
  const auto space = ConfigSpace::default_space();
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    BalanceReport report;
    const auto s = sample_balanced(space, 600, seed, &report);
    REQUIRE(s.size() == 600);
    CHECK(std::set<Configuration>(s.begin(), s.end()).size() == 600);
    // 600 is divisible by 2, 3, 4 and 6.
    CHECK(report.exact);
    for (std::size_t d = 0; d < space.dimension_count(); ++d) {
      std::map<int, int> counts;
      for (const auto& c : s) ++counts[c[d]];
      const auto levels = space.dimensions()[d].levels.size();
      REQUIRE(counts.size() == levels);
      for (const auto& [lvl, n] : counts) CHECK(n == static_cast<int>(600 / levels));
    }
    CHECK(sample_balanced(space, 600, seed) == s);
  }
  CHECK(sample_balanced(space, 600, 1) != sample_balanced(space, 600, 2));
  CHECK_THROWS_AS(sample_balanced(space, space.size() + 1, 0), InvalidArgument);
}

TEST_CASE("balanced sampling on a non-divisible count stays within one") {
  const auto space = ConfigSpace::default_space();
  BalanceReport report;
  const auto s = sample_balanced(space, 101, 9, &report);
  CHECK_FALSE(report.exact);
  for (std::size_t d = 0; d < space.dimension_count(); ++d) {
    std::map<int, int> counts;
    for (const auto& c : s) ++counts[c[d]];
    int lo = 1 << 30, hi = 0;
    for (const auto& [lvl, n] : counts) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("sampling the whole space returns every point") {
  ConfigSpace small({{"a", {Level{"x"}, Level{"y"}}}, {"b", {Level{1.0}, Level{2.0}, Level{3.0}}}});
  auto s = sample_balanced(small, 6, 3);
  std::sort(s.begin(), s.end());
  CHECK(s == enumerate(small));
}

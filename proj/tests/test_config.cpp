#include <cstdlib>
#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "sqlrl/config.hpp"
#include "sqlrl/digest.hpp"

using namespace sqlrl;
using testutil::TempDir;

TEST_CASE("environment interpolation") {
    setenv("SQLRL_TEST_TOKEN", "sekrit", 1);
    CHECK(interpolate_env("key=${SQLRL_TEST_TOKEN}!") == "key=sekrit!");
    CHECK(interpolate_env("no vars $HOME {x}") == "no vars $HOME {x}");
    CHECK_THROWS_AS(interpolate_env("${SQLRL_TEST_MISSING_VAR}"), ConfigError);
    CHECK_THROWS_AS(interpolate_env("${unterminated"), ConfigError);
    CHECK_THROWS_AS(interpolate_env("${bad name}"), ConfigError);
    unsetenv("SQLRL_TEST_TOKEN");
}

TEST_CASE("digest covers the raw bytes, not the interpolated text") {
    setenv("SQLRL_TEST_TOKEN", "sekrit", 1);
    const std::string raw = R"({"endpoints":{"e":{"api_key_env":"${SQLRL_TEST_TOKEN}"}}})";
    HarnessConfig cfg = parse_config(raw, "inline");
    CHECK(cfg.config_digest == sha256_hex(raw));
    CHECK(cfg.endpoints.at("e").api_key_env == "sekrit");
    unsetenv("SQLRL_TEST_TOKEN");
}

TEST_CASE("defaults survive an empty object and fields override them") {
    HarnessConfig cfg = parse_config("{}", "inline");
    CHECK(cfg.db_root == "fixtures/db");
    CHECK(cfg.limits.t_max == 5);
    CHECK(cfg.grpo_group_size == kDefaultGroupSize);

    const std::string raw = R"({
      "db_root": "data",
      "endpoints": {"local": {"base_url": "http://h", "model": "m", "max_concurrent": 3}},
      "roles": {"policy": "local"},
      "env": {"t_max": 2, "preview_rows": 5},
      "grpo": {"group_size": 4, "epsilon": 0.0},
      "selection": {"m": 2, "sql_weight": 0.25},
      "eval": {"n_samples": 4, "retrieval_k": 7}
    })";
    cfg = parse_config(raw, "inline");
    CHECK(cfg.db_root == "data");
    CHECK(cfg.limits.t_max == 2);
    CHECK(cfg.limits.preview_rows == 5);
    CHECK(cfg.grpo_group_size == 4);
    CHECK(cfg.grpo_epsilon == 0.0);
    CHECK(cfg.selection_m == 2);
    CHECK(cfg.sql_weight == 0.25);
    CHECK(cfg.eval_n_samples == 4);
    CHECK(cfg.retrieval_k == 7);
    CHECK(endpoint_for_role(cfg, "policy")->max_concurrent == 3);
    CHECK(!endpoint_for_role(cfg, "judge").has_value());
}

TEST_CASE("validation rejects out-of-range and inconsistent settings") {
    CHECK_THROWS_AS(parse_config("not json", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1,2]", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"transport":{"kind":"carrier-pigeon"}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"transport":{"kind":"replay"}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"env":{"t_max":0}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"grpo":{"group_size":1}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"grpo":{"epsilon":-0.1}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"selection":{"sql_weight":1.5}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"roles":{"policy":"ghost"}})", "x"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"env":{"t_max":"five"}})", "x"), ConfigError);
}

TEST_CASE("load_config reads from disk and make_transport honors the kind") {
    TempDir tmp;
    const std::string path = tmp.sub("harness.json");
    const std::string cassette = tmp.sub("cassette.jsonl");
    {
        std::ofstream out(path);
        out << R"({"transport":{"kind":"record","cassette":")" << cassette << R"("}})";
    }
    HarnessConfig cfg = load_config(path);
    CHECK(cfg.transport_kind == "record");
    auto recorder = make_transport(cfg);
    CHECK(std::dynamic_pointer_cast<RecordingTransport>(recorder) != nullptr);

    cfg.transport_kind = "replay";
    {
        std::ofstream out(cassette);  // empty cassette is a valid replay source
    }
    auto replayer = make_transport(cfg);
    CHECK(std::dynamic_pointer_cast<ReplayTransport>(replayer) != nullptr);

    cfg.transport_kind = "http";
    auto http = make_transport(cfg);
    CHECK(std::dynamic_pointer_cast<HttpTransport>(http) != nullptr);

    CHECK_THROWS_AS(load_config(tmp.sub("missing.json")), ConfigError);
}

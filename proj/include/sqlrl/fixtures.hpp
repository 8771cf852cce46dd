#pragma once

#include <string>
#include <vector>

#include "sqlrl/model_client.hpp"

namespace sqlrl::fixtures {

// Two small databases used by tests, docs and the bundled mini-benchmark.
// Layout matches db_file_for: <db_root>/<db_id>/<db_id>.sqlite. Both writers
// return the database file path and are deterministic byte-for-byte.
std::string write_concerts_db(const std::string& db_root);
std::string write_shop_db(const std::string& db_root);
void write_fixture_tree(const std::string& db_root);

struct MiniCase {
    int question_id;
    const char* db_id;
    const char* question;
    const char* gold_sql;
    const char* difficulty;
    bool scripted_correct;  // whether the scripted policy answers this one
};

// The 10-case mini-benchmark. Golds are hand-verified against the fixture
// databases; the scripted policy answers 7 of 10 correctly.
const std::vector<MiniCase>& minibench_cases();

// BIRD-layout JSON file for the cases above.
std::string write_minibench(const std::string& path);

// Substring rules reproducing the scripted policy: 7 correct answers, one
// deliberately wrong aggregate, one wrong tiebreak, one prose-only reply, and
// one two-turn interaction that inspects an observation before submitting.
void script_minibench_policy(ScriptedTransport& transport);

}  // namespace sqlrl::fixtures

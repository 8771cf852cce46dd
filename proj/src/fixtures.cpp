#include "sqlrl/fixtures.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sqlite_util.hpp"

namespace sqlrl::fixtures {

namespace {

using detail::RawCell;
using detail::WritableDb;
using ordered_json = nlohmann::ordered_json;

std::string db_path_under(const std::string& db_root, const std::string& db_id) {
    const std::filesystem::path dir = std::filesystem::path(db_root) / db_id;
    std::filesystem::create_directories(dir);
    return (dir / (db_id + ".sqlite")).string();
}

}  // namespace

std::string write_concerts_db(const std::string& db_root) {
    const std::string path = db_path_under(db_root, "concerts");
    std::filesystem::remove(path);
    WritableDb db(path);
    db.exec(
        "CREATE TABLE stadium ("
        "stadium_id INTEGER PRIMARY KEY, "
        "name TEXT NOT NULL, "
        "location TEXT, "
        "capacity INTEGER)");
    db.exec(
        "CREATE TABLE singer ("
        "singer_id INTEGER PRIMARY KEY, "
        "name TEXT NOT NULL, "
        "country TEXT, "
        "age INTEGER)");
    db.exec(
        "CREATE TABLE concert ("
        "concert_id INTEGER PRIMARY KEY, "
        "concert_name TEXT NOT NULL, "
        "stadium_id INTEGER REFERENCES stadium(stadium_id), "
        "singer_id INTEGER REFERENCES singer(singer_id), "
        "attendance INTEGER, "
        "year INTEGER)");

    const char* ins_stadium = "INSERT INTO stadium VALUES (?,?,?,?)";
    db.run(ins_stadium, {int64_t{1}, "North Arena", "Avonlea", int64_t{12000}});
    db.run(ins_stadium, {int64_t{2}, "River Dome", "Bridgeton", int64_t{8500}});
    db.run(ins_stadium, {int64_t{3}, "Sunset Field", "Caldera", int64_t{15000}});

    const char* ins_singer = "INSERT INTO singer VALUES (?,?,?,?)";
    db.run(ins_singer, {int64_t{1}, "Ava Brooks", "USA", int64_t{29}});
    db.run(ins_singer, {int64_t{2}, "Liam Chen", "China", int64_t{34}});
    db.run(ins_singer, {int64_t{3}, "Maya Ortiz", "Spain", int64_t{27}});
    db.run(ins_singer, {int64_t{4}, "Noah Petrov", "Russia", int64_t{41}});
    db.run(ins_singer, {int64_t{5}, "Zoe Hale", "USA", int64_t{22}});

    const char* ins_concert = "INSERT INTO concert VALUES (?,?,?,?,?,?)";
    db.run(ins_concert,
           {int64_t{1}, "Opening Night", int64_t{1}, int64_t{1}, int64_t{9000}, int64_t{2019}});
    db.run(ins_concert,
           {int64_t{2}, "Summer Jam", int64_t{2}, int64_t{2}, int64_t{7000}, int64_t{2019}});
    db.run(ins_concert,
           {int64_t{3}, "Harvest Fest", int64_t{3}, int64_t{3}, int64_t{14000}, int64_t{2020}});
    db.run(ins_concert,
           {int64_t{4}, "Winter Gala", int64_t{1}, int64_t{4}, int64_t{10000}, int64_t{2020}});
    db.run(ins_concert,
           {int64_t{5}, "Spring Tour", int64_t{2}, int64_t{5}, int64_t{6000}, int64_t{2021}});
    db.run(ins_concert,
           {int64_t{6}, "Encore", int64_t{1}, int64_t{1}, int64_t{11000}, int64_t{2021}});
    return path;
}

std::string write_shop_db(const std::string& db_root) {
    const std::string path = db_path_under(db_root, "shop");
    std::filesystem::remove(path);
    WritableDb db(path);
    db.exec(
        "CREATE TABLE department ("
        "dept_id INTEGER PRIMARY KEY, "
        "dept_name TEXT NOT NULL, "
        "budget REAL)");
    db.exec(
        "CREATE TABLE employee ("
        "emp_id INTEGER PRIMARY KEY, "
        "emp_name TEXT NOT NULL, "
        "dept_id INTEGER REFERENCES department(dept_id), "
        "salary REAL, "
        "hired_year INTEGER)");

    const char* ins_dept = "INSERT INTO department VALUES (?,?,?)";
    db.run(ins_dept, {int64_t{1}, "Sales", 120000.0});
    db.run(ins_dept, {int64_t{2}, "Engineering", 340000.0});
    db.run(ins_dept, {int64_t{3}, "Support", 80000.0});

    const char* ins_emp = "INSERT INTO employee VALUES (?,?,?,?,?)";
    db.run(ins_emp, {int64_t{1}, "Dana Reed", int64_t{1}, 52000.0, int64_t{2018}});
    db.run(ins_emp, {int64_t{2}, "Eli Stone", int64_t{2}, 91000.5, int64_t{2019}});
    db.run(ins_emp, {int64_t{3}, "Fay Wu", int64_t{2}, 88000.0, int64_t{2020}});
    db.run(ins_emp, {int64_t{4}, "Gus Hart", int64_t{3}, 47500.0, int64_t{2021}});
    db.run(ins_emp, {int64_t{5}, "Ivy Lane", int64_t{1}, 56000.0, int64_t{2022}});
    db.run(ins_emp, {int64_t{6}, "Jon Beck", int64_t{2}, 99000.0, int64_t{2017}});
    return path;
}

void write_fixture_tree(const std::string& db_root) {
    write_concerts_db(db_root);
    write_shop_db(db_root);
}

const std::vector<MiniCase>& minibench_cases() {
    static const std::vector<MiniCase> cases = {
        {1, "concerts", "How many singers are there?", "SELECT COUNT(*) FROM singer", "simple",
         true},
        {2, "concerts", "List the names of all stadiums.", "SELECT name FROM stadium", "simple",
         true},
        {3, "concerts", "What are the names of singers from the USA?",
         "SELECT name FROM singer WHERE country = 'USA'", "simple", true},
        {4, "concerts", "What is the average capacity of the stadiums?",
         "SELECT AVG(capacity) FROM stadium", "moderate", true},
        {5, "concerts", "What is the name of the oldest singer?",
         "SELECT name FROM singer ORDER BY age DESC LIMIT 1", "moderate", false},
        {6, "concerts", "How many concerts took place in 2019?",
         "SELECT COUNT(*) FROM concert WHERE year = 2019", "moderate", true},
        {7, "concerts", "What is the total attendance of concerts held at North Arena?",
         "SELECT SUM(concert.attendance) FROM concert JOIN stadium ON concert.stadium_id = "
         "stadium.stadium_id WHERE stadium.name = 'North Arena'",
         "moderate", false},
        {8, "shop", "List the names of employees who work in the Engineering department.",
         "SELECT employee.emp_name FROM employee JOIN department ON employee.dept_id = "
         "department.dept_id WHERE department.dept_name = 'Engineering'",
         "challenging", true},
        {9, "shop", "What is the highest salary among all employees?",
         "SELECT MAX(salary) FROM employee", "challenging", false},
        {10, "shop",
         "List the names of employees hired after 2019, ordered by salary from highest to "
         "lowest.",
         "SELECT emp_name FROM employee WHERE hired_year > 2019 ORDER BY salary DESC",
         "challenging", true},
    };
    return cases;
}

std::string write_minibench(const std::string& path) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    ordered_json doc = ordered_json::array();
    for (const MiniCase& c : minibench_cases()) {
        doc.push_back(ordered_json{{"question_id", c.question_id},
                                   {"db_id", c.db_id},
                                   {"question", c.question},
                                   {"evidence", ""},
                                   {"difficulty", c.difficulty},
                                   {"SQL", c.gold_sql}});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(2) << "\n";
    return path;
}

namespace {

std::string submit(const std::string& sql) {
    return "The query below answers the question.\nFINAL ANSWER\n```sql\n" + sql + "\n```\n";
}

std::string probe(const std::string& sql) {
    return "Checking an intermediate value first.\n```sql\n" + sql + "\n```\n";
}

}  // namespace

void script_minibench_policy(ScriptedTransport& transport) {
    transport.add_rule("How many singers", {submit("SELECT COUNT(*) FROM singer")});
    transport.add_rule("names of all stadiums",
                       {submit("SELECT name FROM stadium ORDER BY capacity")});
    transport.add_rule("singers from the USA",
                       {submit("SELECT name FROM singer WHERE country = 'USA' ORDER BY name")});
    transport.add_rule("average capacity",
                       {submit("SELECT SUM(capacity) * 1.0 / COUNT(*) FROM stadium")});
    // Wrong tiebreak: first by id instead of oldest.
    transport.add_rule("oldest singer",
                       {submit("SELECT name FROM singer ORDER BY singer_id LIMIT 1")});
    transport.add_rule("concerts took place in 2019",
                       {submit("SELECT COUNT(*) FROM concert WHERE year = 2019")});
    // Wrong aggregate: MAX instead of SUM.
    transport.add_rule(
        "total attendance",
        {submit("SELECT MAX(concert.attendance) FROM concert JOIN stadium ON "
                "concert.stadium_id = stadium.stadium_id WHERE stadium.name = 'North Arena'")});
    // Two turns: probe the department id, submit after seeing the preview.
    // The one-shot rule matches the question; the follow-up matches the
    // observation text (its column header), which never appears in other
    // cases' final messages.
    transport.add_rule("Engineering department",
                       {probe("SELECT dept_id FROM department WHERE dept_name = 'Engineering'")},
                       /*repeat_last=*/false);
    // Prose only: a format violation.
    transport.add_rule("highest salary",
                       {"I think the answer involves the salary column but I cannot "
                        "commit to a query."});
    transport.add_rule(
        "hired after 2019",
        {submit("SELECT emp_name FROM employee WHERE hired_year >= 2020 ORDER BY salary DESC")});
    transport.add_rule(
        "dept_id",
        {submit("SELECT emp_name FROM employee WHERE dept_id = (SELECT dept_id FROM "
                "department WHERE dept_name = 'Engineering')")});
    transport.set_default_reply("No idea.");
}

}  // namespace sqlrl::fixtures

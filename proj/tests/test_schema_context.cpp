#include <algorithm>
#include <fstream>
#include <set>

#include <doctest.h>

#include "helpers.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/schema_context.hpp"

using namespace sqlrl;
using testutil::TempDir;

namespace {

struct ProfileFixture {
    TempDir tmp;
    std::unique_ptr<Sandbox> handle;
    DatabaseProfile profile;

    ProfileFixture() {
        const std::string db = fixtures::write_concerts_db(tmp.sub("db"));
        handle = std::make_unique<Sandbox>(db);
        profile = build_profile(*handle, "concerts");
    }
};

const ColumnProfile& column(const DatabaseProfile& p, const std::string& table,
                            const std::string& col) {
    for (const auto& t : p.tables)
        if (t.name == table)
            for (const auto& c : t.columns)
                if (c.column == col) return c;
    throw std::runtime_error("missing column " + table + "." + col);
}

}  // namespace

TEST_CASE("profile captures tables, stats, keys and foreign keys") {
    ProfileFixture fx;
    const auto& p = fx.profile;
    REQUIRE(p.tables.size() == 3);
    CHECK(p.tables[0].name == "concert");  // name order
    CHECK(p.tables[1].name == "singer");
    CHECK(p.tables[2].name == "stadium");

    const auto& capacity = column(p, "stadium", "capacity");
    CHECK(capacity.distinct_count == 3);
    CHECK(capacity.null_fraction == 0.0);
    REQUIRE(capacity.min_value.has_value());
    CHECK(std::get<int64_t>(*capacity.min_value) == 8500);
    CHECK(std::get<int64_t>(*capacity.max_value) == 15000);

    // country frequencies: USA x2, the rest x1; exemplar order is
    // frequency-desc then value, so USA must lead.
    const auto& country = column(p, "singer", "country");
    REQUIRE(!country.exemplars.empty());
    CHECK(std::get<std::string>(country.exemplars[0]) == "USA");
    CHECK(country.exemplars.size() <= kDefaultExemplars);

    std::set<std::pair<std::string, std::string>> pks(p.primary_keys.begin(),
                                                      p.primary_keys.end());
    CHECK(pks.count({"singer", "singer_id"}) == 1);
    CHECK(pks.count({"stadium", "stadium_id"}) == 1);

    bool fk_found = false;
    for (const auto& fk : p.foreign_keys)
        if (fk.from_table == "concert" && fk.from_column == "stadium_id" &&
            fk.to_table == "stadium" && fk.to_column == "stadium_id")
            fk_found = true;
    CHECK(fk_found);
}

TEST_CASE("profile cache round-trips and misses cleanly") {
    ProfileFixture fx;
    const std::string cache = fx.tmp.sub("cache");
    save_profile(fx.profile, cache);
    auto loaded = load_cached_profile(cache, "concerts");
    REQUIRE(loaded.has_value());
    CHECK(profile_to_json(*loaded) == profile_to_json(fx.profile));
    CHECK(!load_cached_profile(cache, "other_db").has_value());
}

TEST_CASE("metadata loads from CSV with BOM and from JSON") {
    TempDir tmp;
    SUBCASE("csv") {
        const std::string path = tmp.sub("meta.csv");
        std::ofstream out(path, std::ios::binary);
        out << "\xEF\xBB\xBFtable,column,description\n"
            << "singer,country,Country of origin\n"
            << "singer,,People who sing\n";
        out.close();
        MetadataFile meta = load_metadata(path);
        CHECK(meta.find("SINGER", "Country") == "Country of origin");
        CHECK(meta.find("singer", "") == "People who sing");
        CHECK(!meta.find("singer", "age").has_value());
    }
    SUBCASE("json") {
        const std::string path = tmp.sub("meta.json");
        std::ofstream out(path);
        out << R"([{"table":"stadium","column":"capacity","description":"Seats"}])";
        out.close();
        MetadataFile meta = load_metadata(path);
        CHECK(meta.find("stadium", "capacity") == "Seats");
    }
    SUBCASE("missing file throws") {
        CHECK_THROWS(load_metadata(tmp.sub("nope.csv")));
    }
}

TEST_CASE("harvested descriptions win without any endpoint call") {
    ProfileFixture fx;
    MetadataFile meta;
    meta.entries.push_back({"singer", "country", "Country of origin"});

    auto transport = std::make_shared<ScriptedTransport>();
    transport->set_default_reply("A generated description.");
    EndpointConfig ep;
    ep.name = "desc";
    ModelClient client(ep, transport);

    auto units = generate_descriptions(fx.profile, meta, &client);
    size_t expected = fx.profile.tables.size();
    for (const auto& t : fx.profile.tables) expected += t.columns.size();
    CHECK(units.size() == expected);

    bool harvested_seen = false;
    for (const auto& u : units) {
        if (u.identifier == "singer.country") {
            harvested_seen = true;
            CHECK(u.source == UnitSource::harvested);
            CHECK(u.description == "Country of origin");
        }
    }
    CHECK(harvested_seen);
    // one call per non-harvested unit, none for the harvested one
    CHECK(transport->chat_calls() == expected - 1);
}

TEST_CASE("null client produces template descriptions with zero calls") {
    ProfileFixture fx;
    auto units = generate_descriptions(fx.profile, std::nullopt, nullptr);
    for (const auto& u : units) {
        CHECK(u.source == UnitSource::generated);
        CHECK(u.description == template_description(u, fx.profile));
        CHECK(!u.description.empty());
    }
}

TEST_CASE("endpoint failures fall back to templates per unit") {
    ProfileFixture fx;
    auto transport = std::make_shared<ScriptedTransport>();
    transport->set_default_reply("LLM text");
    transport->fail_next(1000, /*retryable=*/false);  // every call fails
    EndpointConfig ep;
    ep.name = "desc";
    ep.max_retries = 0;
    ModelClient client(ep, transport);

    auto units = generate_descriptions(fx.profile, std::nullopt, &client, 2);
    for (const auto& u : units)
        CHECK(u.description == template_description(u, fx.profile));
}

TEST_CASE("lexical overlap is a Jaccard on folded tokens") {
    CHECK(lexical_overlap("the singer name", "Singer NAME") == doctest::Approx(2.0 / 3.0));
    CHECK(lexical_overlap("abc", "xyz") == 0.0);
    CHECK(lexical_overlap("", "anything") == 0.0);
}

TEST_CASE("prune keeps key columns, nests top-k and degrades without embedder") {
    ProfileFixture fx;
    auto units = generate_descriptions(fx.profile, std::nullopt, nullptr);

    auto transport = std::make_shared<ScriptedTransport>();
    EndpointConfig ep;
    ep.name = "embed";
    ModelClient embedder(ep, transport);

    const std::string question = "How many singers are from the USA?";

    auto retained_ids = [](const SchemaContext& ctx) {
        std::set<std::string> ids;
        for (const auto& u : ctx.retained_units) ids.insert(u.identifier);
        return ids;
    };

    SchemaContext base = prune(units, fx.profile, question, &embedder, 3);
    CHECK(!base.degraded);
    // every PK and FK endpoint must sit in the retained set at any k
    auto ids = retained_ids(base);
    CHECK(ids.count("singer.singer_id"));
    CHECK(ids.count("stadium.stadium_id"));
    CHECK(ids.count("concert.concert_id"));
    CHECK(ids.count("concert.stadium_id"));
    CHECK(ids.count("concert.singer_id"));

    // retrieval@k must be a prefix-respecting subset of retrieval@(k+1)
    std::vector<std::set<std::string>> levels;
    for (int k = 1; k <= 8; ++k) {
        SchemaContext ctx = prune(units, fx.profile, question, &embedder, k);
        CHECK(ctx.retrieved_units.size() <= static_cast<size_t>(k));
        std::set<std::string> got;
        for (const auto& u : ctx.retrieved_units) got.insert(u.identifier);
        if (!levels.empty()) {
            for (const auto& id : levels.back()) CHECK(got.count(id) == 1);
        }
        levels.push_back(std::move(got));
        CHECK(retained_ids(ctx) == ids);
    }

    SchemaContext fallback = prune(units, fx.profile, question, nullptr, 3);
    CHECK(fallback.degraded);
    CHECK(retained_ids(fallback) == ids);
    CHECK(!fallback.retrieved_units.empty());
}

TEST_CASE("rendered context lists tables, kept columns, examples and foreign keys") {
    ProfileFixture fx;
    auto units = generate_descriptions(fx.profile, std::nullopt, nullptr);
    SchemaContext ctx = prune(units, fx.profile, "names of stadiums", nullptr, 5);
    const std::string text = render_context(ctx, fx.profile);
    CHECK(text.find("stadium") != std::string::npos);
    CHECK(text.find("singer_id") != std::string::npos);  // retained PK
    CHECK(text.find("->") != std::string::npos);         // FK line
    CHECK(text.find("examples:") != std::string::npos);

    const std::string full = render_profile(fx.profile, units);
    // full rendering mentions every column
    for (const auto& t : fx.profile.tables)
        for (const auto& c : t.columns) CHECK(full.find(c.column) != std::string::npos);
}

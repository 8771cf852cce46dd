// sqlrl: one binary for every pipeline stage. Exit codes: 0 success,
// 1 pipeline failure, 2 configuration or usage problem.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sqlrl/bench.hpp"
#include "sqlrl/cold_start.hpp"
#include "sqlrl/config.hpp"
#include "sqlrl/data_factory.hpp"
#include "sqlrl/digest.hpp"
#include "sqlrl/fixtures.hpp"
#include "sqlrl/version.hpp"

namespace {

using namespace sqlrl;
using ordered_json = nlohmann::ordered_json;

void log_line(const std::string& stage, ordered_json fields = ordered_json::object()) {
    ordered_json j;
    j["stage"] = stage;
    for (auto& [k, v] : fields.items()) j[k] = v;
    std::cerr << j.dump() << "\n";
}

// Every non-dry run leaves a manifest beside its primary output (or under the
// cache dir when the command writes none). No timestamps: a manifest plus the
// cassette and seeds reproduces the artifact bytes.
struct ManifestWriter {
    std::string command;
    std::string config_digest;
    ordered_json params = ordered_json::object();
    ordered_json inputs = ordered_json::object();
    ordered_json outputs = ordered_json::object();

    void add_input(const std::string& name, const std::string& path) {
        if (std::filesystem::exists(path)) inputs[name] = sha256_file(path);
    }
    void add_output(const std::string& name, const std::string& path) {
        if (std::filesystem::exists(path)) outputs[name] = sha256_file(path);
    }
    void write(const std::string& path) const {
        ordered_json j;
        j["v"] = 1;
        j["harness_version"] = kHarnessVersion;
        j["command"] = command;
        j["config_digest"] = config_digest;
        j["schema_versions"] = ordered_json{{"trajectory", kTrajectorySchemaVersion},
                                            {"rl_batch", kRlBatchSchemaVersion},
                                            {"sft", kSftSchemaVersion},
                                            {"report", kReportSchemaVersion},
                                            {"cassette", kCassetteSchemaVersion}};
        j["params"] = params;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
            std::filesystem::create_directories(dir);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write manifest: " + path);
        out << j.dump(2) << "\n";
    }
};

struct App {
    std::string config_path;
    bool dry_run = false;

    HarnessConfig cfg;
    std::shared_ptr<ModelTransport> transport;
    std::shared_ptr<CallLog> call_log = std::make_shared<CallLog>();
    bool config_loaded = false;

    void load() {
        if (config_loaded) return;
        if (config_path.empty()) {
            if (const char* env = std::getenv("HARNESS_CONFIG")) config_path = env;
        }
        if (config_path.empty())
            throw ConfigError("no config: pass --config or set HARNESS_CONFIG");
        cfg = load_config(config_path);
        transport = make_transport(cfg);
        config_loaded = true;
        log_line("config", {{"path", config_path}, {"digest", cfg.config_digest}});
    }

    // nullptr when the role is not configured.
    std::unique_ptr<ModelClient> client_for(const std::string& role) {
        load();
        auto ep = endpoint_for_role(cfg, role);
        if (!ep) return nullptr;
        return std::make_unique<ModelClient>(*ep, transport, call_log);
    }

    std::unique_ptr<ModelClient> require_client(const std::string& role) {
        auto client = client_for(role);
        if (!client) throw ConfigError("command needs a configured '" + role + "' role");
        return client;
    }

    std::string manifest_path_for(const std::string& primary_output) {
        if (!primary_output.empty()) return primary_output + ".manifest.json";
        load();
        std::filesystem::create_directories(cfg.cache_dir);
        return cfg.cache_dir + "/last_run.manifest.json";
    }
};

std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read id list: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

// Reward JSONL rows: {"question_id","trajectory_id","reward"[,"cause"]}.
std::vector<std::pair<std::string, RewardRecord>> read_rewards(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read rewards: " + path);
    std::vector<std::pair<std::string, RewardRecord>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        RewardRecord rec;
        rec.trajectory_id = j.at("trajectory_id").get<std::string>();
        rec.reward = j.at("reward").get<double>();
        const std::string cause = j.value("cause", "wrong_result");
        if (cause == "correct_execution") rec.cause = RewardCause::correct_execution;
        else if (cause == "invalid_format") rec.cause = RewardCause::invalid_format;
        else rec.cause = RewardCause::wrong_result;
        rows.emplace_back(j.at("question_id").get<std::string>(), std::move(rec));
    }
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"execution-grounded text-to-SQL RL harness"};
    app.require_subcommand(1);
    auto state = std::make_shared<App>();
    app.add_option("--config", state->config_path, "config JSON (or HARNESS_CONFIG env)");
    app.add_flag("--dry-run", state->dry_run, "validate inputs, no network or writes");

    // profile
    std::string p_db;
    auto* cmd_profile = app.add_subcommand("profile", "profile a database into the cache");
    cmd_profile->add_option("--db", p_db, "database id")->required();

    // prune-preview
    std::string pp_db, pp_question;
    int pp_k = 0;
    auto* cmd_prune = app.add_subcommand("prune-preview", "print the pruned schema context");
    cmd_prune->add_option("--db", pp_db)->required();
    cmd_prune->add_option("--question", pp_question)->required();
    cmd_prune->add_option("--k", pp_k, "retrieval depth (default from config)");

    // rollout
    std::string r_db, r_question, r_out, r_id = "cli-rollout";
    auto* cmd_rollout = app.add_subcommand("rollout", "run one agent episode");
    cmd_rollout->add_option("--db", r_db)->required();
    cmd_rollout->add_option("--question", r_question)->required();
    cmd_rollout->add_option("--out", r_out, "trajectory JSONL")->required();
    cmd_rollout->add_option("--id", r_id, "trajectory id");

    // score
    std::string s_traj, s_gold, s_out;
    auto* cmd_score = app.add_subcommand("score", "sparse rewards for recorded trajectories");
    cmd_score->add_option("--trajectories", s_traj)->required();
    cmd_score->add_option("--gold", s_gold, "gold SQL every trajectory is scored against")
        ->required();
    cmd_score->add_option("--out", s_out, "reward JSONL")->required();

    // advantage
    std::string a_rewards, a_out;
    double a_eps = -1.0;
    auto* cmd_adv = app.add_subcommand("advantage", "group-normalized advantages + audit");
    cmd_adv->add_option("--rewards", a_rewards)->required();
    cmd_adv->add_option("--out", a_out, "group audit JSONL")->required();
    cmd_adv->add_option("--epsilon", a_eps, "std floor (default from config)");

    // export-rl
    std::string erl_traj, erl_rewards, erl_out;
    double erl_eps = -1.0;
    auto* cmd_erl = app.add_subcommand("export-rl", "trainer-ready RL batch");
    cmd_erl->add_option("--trajectories", erl_traj)->required();
    cmd_erl->add_option("--rewards", erl_rewards)->required();
    cmd_erl->add_option("--out", erl_out)->required();
    cmd_erl->add_option("--epsilon", erl_eps);

    // synthesize
    std::string syn_out;
    std::vector<std::string> syn_dbs;
    int syn_k = 0, syn_n = 0;
    uint64_t syn_seed = 0;
    bool syn_seed_set = false;
    auto* cmd_syn = app.add_subcommand("synthesize", "augment + generate + verify samples");
    cmd_syn->add_option("--out", syn_out, "output directory")->required();
    cmd_syn->add_option("--dbs", syn_dbs, "database ids (default: all under db_root)");
    cmd_syn->add_option("--k", syn_k, "gen-as-check cycles");
    cmd_syn->add_option("--n", syn_n, "candidate pool size");
    cmd_syn->add_option("--seed", syn_seed)->each([&](const std::string&) { syn_seed_set = true; });

    // select
    std::string sel_traj, sel_out;
    int sel_m = 0;
    double sel_w = -1.0;
    auto* cmd_sel = app.add_subcommand("select", "diversity-aware SFT selection");
    cmd_sel->add_option("--trajectories", sel_traj)->required();
    cmd_sel->add_option("--out", sel_out, "selected trajectory ids, one per line")->required();
    cmd_sel->add_option("--m", sel_m, "how many to keep");
    cmd_sel->add_option("--sql-weight", sel_w, "hybrid mixing weight");

    // export-sft
    std::string sft_traj, sft_ids, sft_out;
    auto* cmd_sft = app.add_subcommand("export-sft", "loss-masked SFT records");
    cmd_sft->add_option("--trajectories", sft_traj)->required();
    cmd_sft->add_option("--ids", sft_ids, "optional id list filter");
    cmd_sft->add_option("--out", sft_out)->required();

    // eval
    std::string ev_bench, ev_dialect = "auto", ev_report;
    int ev_n = 0;
    bool ev_strict = false;
    auto* cmd_eval = app.add_subcommand("eval", "benchmark evaluation with EX report");
    cmd_eval->add_option("--bench", ev_bench)->required();
    cmd_eval->add_option("--dialect", ev_dialect, "auto | bird | spider");
    cmd_eval->add_option("--n", ev_n, "samples per question (default from config)");
    cmd_eval->add_flag("--strict", ev_strict, "execute every gold at load");
    cmd_eval->add_option("--report", ev_report, "report JSON path")->required();

    // fixture
    std::string fx_out;
    auto* cmd_fixture = app.add_subcommand("fixture", "materialize the bundled fixtures");
    cmd_fixture->add_option("--out", fx_out, "directory for databases and mini-benchmark")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_fixture->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "fixture"}});
                return 0;
            }
            fixtures::write_fixture_tree(fx_out + "/db");
            const std::string bench = fixtures::write_minibench(fx_out + "/minibench.json");
            log_line("fixture", {{"db_root", fx_out + "/db"}, {"bench", bench}});
            ManifestWriter m{"fixture", ""};
            m.params["out"] = fx_out;
            m.add_output("minibench", bench);
            m.add_output("concerts", fx_out + "/db/concerts/concerts.sqlite");
            m.add_output("shop", fx_out + "/db/shop/shop.sqlite");
            m.write(fx_out + "/minibench.json.manifest.json");
            return 0;
        }

        state->load();

        if (cmd_profile->parsed()) {
            const std::string db_file = db_file_for(state->cfg.db_root, p_db);
            if (state->dry_run) {
                log_line("dry-run", {{"command", "profile"}, {"db_file", db_file}});
                return 0;
            }
            Sandbox handle(db_file);
            DatabaseProfile profile = build_profile(handle, p_db);
            std::filesystem::create_directories(state->cfg.cache_dir);
            const std::string path = save_profile(profile, state->cfg.cache_dir);
            log_line("profile", {{"db", p_db}, {"path", path}});
            std::cout << path << "\n";
            ManifestWriter m{"profile", state->cfg.config_digest};
            m.params["db"] = p_db;
            m.add_input("database", db_file);
            m.add_output("profile", path);
            m.write(state->manifest_path_for(path));
        } else if (cmd_prune->parsed()) {
            const std::string db_file = db_file_for(state->cfg.db_root, pp_db);
            if (state->dry_run) {
                log_line("dry-run", {{"command", "prune-preview"}, {"db_file", db_file}});
                return 0;
            }
            Sandbox handle(db_file);
            DatabaseProfile profile = build_profile(handle, pp_db);
            auto describer = state->client_for("describer");
            auto units = generate_descriptions(profile, std::nullopt, describer.get());
            auto embedder = state->client_for("embedder");
            const int k = pp_k > 0 ? pp_k : state->cfg.retrieval_k;
            SchemaContext ctx = prune(units, profile, pp_question, embedder.get(), k);
            log_line("prune", {{"db", pp_db},
                               {"k", k},
                               {"degraded", ctx.degraded},
                               {"retained", ctx.retained_units.size()},
                               {"retrieved", ctx.retrieved_units.size()}});
            std::cout << render_context(ctx, profile);
        } else if (cmd_rollout->parsed()) {
            const std::string db_file = db_file_for(state->cfg.db_root, r_db);
            if (state->dry_run) {
                log_line("dry-run", {{"command", "rollout"}, {"db_file", db_file}});
                return 0;
            }
            auto policy = state->require_client("policy");
            Sandbox handle(db_file);
            DatabaseProfile profile = build_profile(handle, r_db);
            auto units = generate_descriptions(profile, std::nullopt, nullptr);
            const std::string context = render_profile(profile, units);
            Trajectory traj = rollout(r_id, r_question, r_db, context,
                                      builtin_prompt_template(), *policy, handle,
                                      state->cfg.limits);
            write_trajectories({traj}, r_out);
            log_line("rollout", {{"id", r_id},
                                 {"terminal", to_string(traj.terminal)},
                                 {"turns", traj.turns.size()}});
            ManifestWriter m{"rollout", state->cfg.config_digest};
            m.params = ordered_json{{"db", r_db}, {"question", r_question}, {"id", r_id}};
            m.add_input("database", db_file);
            m.add_output("trajectories", r_out);
            m.write(state->manifest_path_for(r_out));
        } else if (cmd_score->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "score"}});
                return 0;
            }
            auto trajectories = read_trajectories(s_traj);
            std::ofstream out(s_out, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + s_out);
            std::map<std::string, std::unique_ptr<Sandbox>> handles;
            const EquivalencePolicy policy = policy_for_gold(s_gold);
            for (const auto& traj : trajectories) {
                auto it = handles.find(traj.db_id);
                if (it == handles.end())
                    it = handles
                             .emplace(traj.db_id, std::make_unique<Sandbox>(db_file_for(
                                                      state->cfg.db_root, traj.db_id)))
                             .first;
                RewardRecord rec = score(traj, s_gold, *it->second, policy);
                ordered_json j;
                j["question_id"] = traj.question;
                j["trajectory_id"] = rec.trajectory_id;
                j["reward"] = rec.reward;
                j["cause"] = to_string(rec.cause);
                out << j.dump() << "\n";
            }
            log_line("score", {{"trajectories", trajectories.size()}});
            ManifestWriter m{"score", state->cfg.config_digest};
            m.params["gold"] = s_gold;
            m.add_input("trajectories", s_traj);
            m.add_output("rewards", s_out);
            m.write(state->manifest_path_for(s_out));
        } else if (cmd_adv->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "advantage"}});
                return 0;
            }
            const double eps = a_eps >= 0 ? a_eps : state->cfg.grpo_epsilon;
            auto rows = read_rewards(a_rewards);
            auto groups = build_groups(rows, eps);
            auto kept = filter_groups(groups);
            write_group_audit(groups, a_out);
            log_line("advantage",
                     {{"groups", groups.size()}, {"kept", kept.size()}, {"epsilon", eps}});
            ManifestWriter m{"advantage", state->cfg.config_digest};
            m.params["epsilon"] = eps;
            m.add_input("rewards", a_rewards);
            m.add_output("audit", a_out);
            m.write(state->manifest_path_for(a_out));
        } else if (cmd_erl->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "export-rl"}});
                return 0;
            }
            const double eps = erl_eps >= 0 ? erl_eps : state->cfg.grpo_epsilon;
            auto trajectories = read_trajectories(erl_traj);
            auto rows = read_rewards(erl_rewards);
            auto groups = build_groups(rows, eps);
            auto kept = filter_groups(groups);
            const std::string audit = erl_out + ".groups.jsonl";
            write_group_audit(groups, audit);
            const int64_t written =
                export_rl_batch(trajectories, kept, builtin_prompt_template(), erl_out);
            log_line("export-rl", {{"written", written}, {"kept_groups", kept.size()}});
            ManifestWriter m{"export-rl", state->cfg.config_digest};
            m.params["epsilon"] = eps;
            m.add_input("trajectories", erl_traj);
            m.add_input("rewards", erl_rewards);
            m.add_output("batch", erl_out);
            m.add_output("audit", audit);
            m.write(state->manifest_path_for(erl_out));
        } else if (cmd_syn->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "synthesize"}});
                return 0;
            }
            FactoryConfig fc;
            fc.db_root = state->cfg.db_root;
            fc.db_ids = syn_dbs;
            fc.out_dir = syn_out;
            fc.k_cycles = syn_k > 0 ? syn_k : state->cfg.factory_k_cycles;
            fc.n_candidates = syn_n > 0 ? syn_n : state->cfg.factory_n_candidates;
            fc.seed = syn_seed_set ? syn_seed : state->cfg.seed;
            auto generator = state->client_for("generator");
            auto judge = state->client_for("judge");
            auto policy = state->client_for("policy");
            auto regen = state->client_for("regen");
            FactoryEndpoints eps{generator.get(), judge.get(), policy.get(), regen.get()};
            FactoryReport rep = synthesize(fc, eps);
            ordered_json drops = ordered_json::object();
            for (const auto& [stage, n] : rep.drops) drops[stage] = n;
            log_line("synthesize", {{"verified", rep.verified}, {"drops", drops}});
            ManifestWriter m{"synthesize", state->cfg.config_digest};
            m.params = ordered_json{
                {"k", fc.k_cycles}, {"n", fc.n_candidates}, {"seed", fc.seed}};
            m.add_output("samples", rep.samples_path);
            m.add_output("factory_manifest", rep.manifest_path);
            m.write(state->manifest_path_for(rep.samples_path));
        } else if (cmd_sel->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "select"}});
                return 0;
            }
            auto embedder = state->require_client("embedder");
            auto trajectories = read_trajectories(sel_traj);
            const double w = sel_w >= 0 ? sel_w : state->cfg.sql_weight;
            const size_t m_count =
                sel_m > 0 ? static_cast<size_t>(sel_m) : state->cfg.selection_m;
            auto embeddings = hybrid_embed_all(trajectories, *embedder, w);
            auto ids = select_diverse(embeddings, m_count);
            std::ofstream out(sel_out, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + sel_out);
            for (const auto& id : ids) {
                out << id << "\n";
                std::cout << id << "\n";
            }
            log_line("select", {{"m", m_count}, {"population", embeddings.size()}});
            ManifestWriter m{"select", state->cfg.config_digest};
            m.params = ordered_json{{"m", m_count}, {"sql_weight", w}};
            m.add_input("trajectories", sel_traj);
            m.add_output("selected", sel_out);
            m.write(state->manifest_path_for(sel_out));
        } else if (cmd_sft->parsed()) {
            if (state->dry_run) {
                log_line("dry-run", {{"command", "export-sft"}});
                return 0;
            }
            auto trajectories = read_trajectories(sft_traj);
            if (!sft_ids.empty()) {
                const auto wanted = read_id_list(sft_ids);
                std::vector<Trajectory> filtered;
                for (const auto& id : wanted) {
                    for (const auto& t : trajectories) {
                        if (t.trajectory_id == id) {
                            filtered.push_back(t);
                            break;
                        }
                    }
                }
                trajectories = std::move(filtered);
            }
            SftExport result = export_sft(trajectories, builtin_prompt_template(),
                                          state->cfg.db_root, sft_out);
            for (const auto& note : result.notes) log_line("export-sft-skip", {{"note", note}});
            log_line("export-sft",
                     {{"written", result.written}, {"skipped", result.notes.size()}});
            ManifestWriter m{"export-sft", state->cfg.config_digest};
            m.add_input("trajectories", sft_traj);
            m.add_output("sft", sft_out);
            m.write(state->manifest_path_for(sft_out));
        } else if (cmd_eval->parsed()) {
            auto cases =
                load_benchmark(ev_bench, ev_dialect, state->cfg.db_root, ev_strict);
            int flagged = 0;
            for (const auto& c : cases) flagged += c.gold_ok ? 0 : 1;
            if (state->dry_run) {
                log_line("dry-run", {{"command", "eval"},
                                     {"cases", cases.size()},
                                     {"flagged_golds", flagged}});
                return 0;
            }
            if (flagged > 0) {
                std::vector<BenchCase> kept;
                for (auto& c : cases) {
                    if (c.gold_ok) kept.push_back(std::move(c));
                    else
                        log_line("eval-drop",
                                 {{"case_id", c.case_id}, {"gold_error", c.gold_error}});
                }
                cases = std::move(kept);
            }
            auto policy = state->require_client("policy");
            auto embedder = state->client_for("embedder");
            EvalConfig ec;
            ec.n_samples = ev_n > 0 ? ev_n : state->cfg.eval_n_samples;
            ec.limits = state->cfg.limits;
            ec.db_root = state->cfg.db_root;
            ec.model_name = policy->config().model.empty() ? policy->config().name
                                                           : policy->config().model;
            ec.config_digest = state->cfg.config_digest;
            ec.embedder = embedder.get();
            ec.retrieval_k = state->cfg.retrieval_k;
            EvalReport report = evaluate(cases, *policy, ec);
            write_report(report, ev_report);
            std::cout << render_report_table(report);
            log_line("eval", {{"cases", report.verdicts.size()},
                              {"ex_overall", report.ex_overall},
                              {"report", ev_report}});
            ManifestWriter m{"eval", state->cfg.config_digest};
            m.params = ordered_json{{"dialect", ev_dialect},
                                    {"n_samples", ec.n_samples},
                                    {"strict", ev_strict}};
            m.add_input("bench", ev_bench);
            m.add_output("report", ev_report);
            m.write(state->manifest_path_for(ev_report));
        }
    } catch (const ConfigError& e) {
        log_line("config-error", {{"what", e.what()}});
        return 2;
    } catch (const std::exception& e) {
        log_line("error", {{"what", e.what()}});
        return 1;
    }
    return 0;
}

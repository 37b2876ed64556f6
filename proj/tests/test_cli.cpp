#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "reportgen/cli.hpp"

using namespace reportgen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return sub.empty() ? path.string() : (path / sub).string();
    }
};

std::string tiny_config_json() {
    return R"({
      "model": {
        "encoder": {"scales": [1.0, 0.5], "channels": 4, "ac_bifpn_depth": 1, "pool_grid": 2},
        "decoder": {"d_model": 16, "transformer_layers": 1, "attention_heads": 2,
                    "d_ff": 32, "sequence_length": 24}
      },
      "train": {"learning_rate": 0.003, "batch_size": 5, "epochs": 2, "dropout_rate": 0.0,
                "seed": 321},
      "generation": {"beam": 2, "alpha": 0.6, "max_len": 24}
    })";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("generate-data summary, idempotence notice, and minimum size") {
    TempDir dir("reportgen_cli_data");
    std::ostringstream out;
    cli::GenerateDataOptions opt;
    opt.n = 100;
    opt.seed = 5;
    opt.out_dir = dir.str("ds");
    CHECK(cli::cmd_generate_data(opt, out) == 0);
    CHECK(out.str().find("train=80 val=10 test=10") != std::string::npos);
    CHECK(out.str().find("unchanged") == std::string::npos);

    std::ostringstream again;
    CHECK(cli::cmd_generate_data(opt, again) == 0);
    CHECK(again.str().find("unchanged (idempotent)") != std::string::npos);

    cli::GenerateDataOptions tiny;
    tiny.n = 5;
    tiny.seed = 5;
    tiny.out_dir = dir.str("tiny");
    const int code = cli::run_with_exit_codes([&] { return cli::cmd_generate_data(tiny); },
                                              again);
    CHECK(code == 2);
}

TEST_CASE("train/generate/evaluate pipeline end to end") {
    TempDir dir("reportgen_cli_pipeline");
    std::ostringstream out;

    cli::GenerateDataOptions data_opt;
    data_opt.n = 12;
    data_opt.seed = 9;
    data_opt.out_dir = dir.str("ds");
    REQUIRE(cli::cmd_generate_data(data_opt, out) == 0);

    write_text(dir.str("config.json"), tiny_config_json());

    cli::TrainOptions train_opt;
    train_opt.config_path = dir.str("config.json");
    train_opt.data_dir = dir.str("ds");
    train_opt.out_dir = dir.str("run");
    std::ostringstream train_out;
    REQUIRE(cli::cmd_train(train_opt, train_out) == 0);
    CHECK(train_out.str().find("epoch=1") != std::string::npos);
    CHECK(train_out.str().find("epoch=2") != std::string::npos);
    CHECK(fs::exists(dir.path / "run" / "checkpoint.ckpt"));
    CHECK(fs::exists(dir.path / "run" / "checkpoint.ckpt.meta"));
    CHECK(fs::exists(dir.path / "run" / "vocab.txt"));
    const std::string history = slurp(dir.str("run/history.csv"));
    CHECK(history.rfind("epoch,train_loss,val_loss,lr\n", 0) == 0);
    CHECK(std::count(history.begin(), history.end(), '\n') == 3);

    SECTION("same seed reproduces the history byte for byte") {
        cli::TrainOptions rerun = train_opt;
        rerun.out_dir = dir.str("run2");
        std::ostringstream rerun_out;
        REQUIRE(cli::cmd_train(rerun, rerun_out) == 0);
        CHECK(slurp(dir.str("run2/history.csv")) == history);
        CHECK(slurp(dir.str("run2/checkpoint.ckpt")) == slurp(dir.str("run/checkpoint.ckpt")));
    }

    SECTION("generate writes aligned reports without special tokens") {
        cli::GenerateOptions gen_opt;
        gen_opt.checkpoint = dir.str("run/checkpoint.ckpt");
        gen_opt.data_dir = dir.str("ds");
        gen_opt.split = "train";
        gen_opt.out_path = dir.str("generated.jsonl");
        std::ostringstream gen_out;
        REQUIRE(cli::cmd_generate(gen_opt, gen_out) == 0);
        const std::string lines = slurp(dir.str("generated.jsonl"));
        CHECK(std::count(lines.begin(), lines.end(), '\n') == 10);  // train split of 12 = 10
        CHECK(lines.find("<cls>") == std::string::npos);
        CHECK(lines.find("<sep>") == std::string::npos);
        CHECK(lines.find("<pad>") == std::string::npos);

        // beam width 1 must equal dedicated greedy mode
        cli::GenerateOptions beam1 = gen_opt;
        beam1.beam = 1;
        beam1.out_path = dir.str("generated_b1.jsonl");
        REQUIRE(cli::cmd_generate(beam1, gen_out) == 0);
        cli::GenerateOptions greedy = gen_opt;
        greedy.greedy = true;
        greedy.out_path = dir.str("generated_greedy.jsonl");
        REQUIRE(cli::cmd_generate(greedy, gen_out) == 0);
        CHECK(slurp(dir.str("generated_b1.jsonl")) == slurp(dir.str("generated_greedy.jsonl")));
    }

    SECTION("evaluate on truth vs itself prints the fixed points") {
        // build a truth-vs-truth pair from the dataset's reports
        const auto cases = load_split(dir.str("ds"), "train");
        std::ostringstream jsonl;
        for (const auto& item : cases) {
            nlohmann::json record;
            record["id"] = item.id;
            record["report"] = item.report;
            jsonl << record.dump() << '\n';
        }
        write_text(dir.str("truth.jsonl"), jsonl.str());

        cli::EvaluateOptions eval_opt;
        eval_opt.generated_path = dir.str("truth.jsonl");
        eval_opt.truth_path = dir.str("truth.jsonl");
        eval_opt.out_dir = dir.str("metrics");
        std::ostringstream eval_out;
        REQUIRE(cli::cmd_evaluate(eval_opt, eval_out) == 0);
        CHECK(eval_out.str().find("100.00") != std::string::npos);
        CHECK(fs::exists(dir.path / "metrics" / "metrics.json"));
        const auto metrics = nlohmann::json::parse(slurp(dir.str("metrics/metrics.json")));
        CHECK(metrics.at("bleu_1").get<double>() == 1.0);
        CHECK(metrics.at("rouge_l").get<double>() == 1.0);
        CHECK(metrics.at("cider").get<double>() == 10.0);
        CHECK(metrics.at("classification").at("micro").at("f1").get<double>() == 1.0);
    }

    SECTION("evaluate rejects misaligned ids naming the missing ones") {
        write_text(dir.str("gen.jsonl"), R"({"id": "case-000000", "report": "a"})"
                                             "\n");
        write_text(dir.str("tru.jsonl"), R"({"id": "case-000001", "report": "a"})"
                                             "\n");
        cli::EvaluateOptions eval_opt;
        eval_opt.generated_path = dir.str("gen.jsonl");
        eval_opt.truth_path = dir.str("tru.jsonl");
        std::ostringstream err;
        const int code =
            cli::run_with_exit_codes([&] { return cli::cmd_evaluate(eval_opt); }, err);
        CHECK(code == 2);
        CHECK(err.str().find("case-000000") != std::string::npos);
        CHECK(err.str().find("case-000001") != std::string::npos);
    }
}

TEST_CASE("train rejects configs that violate model invariants") {
    TempDir dir("reportgen_cli_badcfg");
    std::ostringstream out;
    cli::GenerateDataOptions data_opt;
    data_opt.n = 10;
    data_opt.seed = 2;
    data_opt.out_dir = dir.str("ds");
    REQUIRE(cli::cmd_generate_data(data_opt, out) == 0);

    write_text(dir.str("bad.json"), R"({"model": {"decoder": {"d_model": 15,
        "transformer_layers": 1, "attention_heads": 3, "sequence_length": 24}}})");
    cli::TrainOptions train_opt;
    train_opt.config_path = dir.str("bad.json");
    train_opt.data_dir = dir.str("ds");
    train_opt.out_dir = dir.str("run");
    std::ostringstream err;
    const int code = cli::run_with_exit_codes([&] { return cli::cmd_train(train_opt); }, err);
    CHECK(code == 2);
}

TEST_CASE("gradcheck command passes clean and fails when corrupted") {
    std::ostringstream out;
    cli::GradcheckOptions opt;
    CHECK(cli::cmd_gradcheck(opt, out) == 0);
    CHECK(out.str().find("gradcheck passed") != std::string::npos);

    cli::GradcheckOptions corrupt;
    corrupt.corrupt_backward = true;
    std::ostringstream corrupt_out;
    CHECK(cli::cmd_gradcheck(corrupt, corrupt_out) == 1);
    CHECK(corrupt_out.str().find("gradcheck FAILED") != std::string::npos);
}

TEST_CASE("compare emits a deterministic two-row table over the test split") {
    TempDir dir("reportgen_cli_compare");
    std::ostringstream out;
    cli::GenerateDataOptions data_opt;
    data_opt.n = 12;
    data_opt.seed = 31;
    data_opt.out_dir = dir.str("ds");
    REQUIRE(cli::cmd_generate_data(data_opt, out) == 0);
    write_text(dir.str("config.json"), tiny_config_json());

    cli::CompareOptions cmp;
    cmp.config_path = dir.str("config.json");
    cmp.data_dir = dir.str("ds");
    std::ostringstream first, second;
    REQUIRE(cli::cmd_compare(cmp, first) == 0);
    REQUIRE(cli::cmd_compare(cmp, second) == 0);
    CHECK(first.str() == second.str());
    CHECK(first.str().find("baseline") != std::string::npos);
    CHECK(first.str().find("ac-bifpn") != std::string::npos);
    CHECK(first.str().find("BLEU-U1") != std::string::npos);
}

TEST_CASE("config paths section supplies --data/--out defaults") {
    TempDir dir("reportgen_cli_paths");
    std::ostringstream out;
    cli::GenerateDataOptions data_opt;
    data_opt.n = 10;
    data_opt.seed = 77;
    data_opt.out_dir = dir.str("ds");
    REQUIRE(cli::cmd_generate_data(data_opt, out) == 0);

    nlohmann::json j = nlohmann::json::parse(tiny_config_json());
    j["paths"] = {{"data", dir.str("ds")}, {"out", dir.str("run")}};
    write_text(dir.str("config.json"), j.dump());

    cli::TrainOptions train_opt;  // no --data / --out flags
    train_opt.config_path = dir.str("config.json");
    REQUIRE(cli::cmd_train(train_opt, out) == 0);
    CHECK(fs::exists(dir.path / "run" / "checkpoint.ckpt"));

    cli::TrainOptions missing;  // neither flags nor config paths
    missing.config_path = "";
    std::ostringstream err;
    CHECK(cli::run_with_exit_codes([&] { return cli::cmd_train(missing); }, err) == 2);
}

TEST_CASE("exit codes map error families") {
    std::ostringstream err;
    CHECK(cli::run_with_exit_codes([]() -> int { throw ConfigError("x"); }, err) == 2);
    CHECK(cli::run_with_exit_codes([]() -> int { throw DataError("x"); }, err) == 2);
    CHECK(cli::run_with_exit_codes([]() -> int { throw VocabularyError("x"); }, err) == 2);
    CHECK(cli::run_with_exit_codes([]() -> int { throw DimensionError("x"); }, err) == 2);
    CHECK(cli::run_with_exit_codes([]() -> int { throw NumericError("x"); }, err) == 3);
    CHECK(cli::run_with_exit_codes([]() -> int { return 0; }, err) == 0);
}

TEST_CASE("REPORTGEN_SEED environment variable overrides the config seed") {
    setenv("REPORTGEN_SEED", "424242", 1);
    const RunConfig cfg = parse_run_config(nlohmann::json::object());
    unsetenv("REPORTGEN_SEED");
    CHECK(cfg.train.seed == 424242);

    const RunConfig plain = parse_run_config(nlohmann::json::object());
    CHECK(plain.train.seed != 424242);
}

TEST_CASE("profiles carry the two published recipes") {
    const RunConfig desk = default_profile();
    CHECK(desk.train.learning_rate == 0.001);
    CHECK(desk.train.batch_size == 16);
    CHECK(desk.train.dropout == 0.3);
    CHECK(desk.train.epochs == 50);
    CHECK(desk.train.clip_norm == 1.0);

    const RunConfig paper = rsna_paper_profile();
    CHECK(paper.train.learning_rate == 0.0001);
    CHECK(paper.train.batch_size == 8);
    CHECK(paper.train.dropout == 0.5);
    CHECK(paper.decoder.n_layers == 6);
    CHECK(paper.decoder.n_heads == 8);
    CHECK(paper.decoder.max_len == 512);

    CHECK_THROWS_AS(profile_by_name("mystery"), ConfigError);
}

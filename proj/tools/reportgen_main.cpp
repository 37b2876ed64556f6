#include <CLI11.hpp>

#include <optional>
#include <string>

#include "reportgen/cli.hpp"

// reportgen: synthetic-scan report generation pipeline.
// Subcommands: generate-data, train, generate, evaluate, gradcheck, compare.

int main(int argc, char** argv) {
    using namespace reportgen;

    CLI::App app{"Multi-scale encoder + transformer decoder report generation pipeline"};
    app.require_subcommand(1);

    cli::GenerateDataOptions gen_data;
    auto* sc_data = app.add_subcommand("generate-data", "Generate a synthetic scan dataset");
    sc_data->add_option("--n", gen_data.n, "Number of cases (minimum 10)")->required();
    sc_data->add_option("--seed", gen_data.seed, "Generator seed")->required();
    sc_data->add_option("--out", gen_data.out_dir, "Output directory")->required();

    cli::TrainOptions train_opt;
    auto* sc_train = app.add_subcommand("train", "Train a model on a generated dataset");
    sc_train->add_option("--config", train_opt.config_path, "JSON config file");
    sc_train->add_option("--profile", train_opt.profile, "Profile: default | rsna-paper");
    sc_train->add_option("--data", train_opt.data_dir, "Dataset directory (or config paths.data)");
    sc_train->add_option("--out", train_opt.out_dir, "Output directory (or config paths.out)");
    sc_train->add_option("--val-split", train_opt.val_split,
                         "Split monitored for validation (default: val)");

    cli::GenerateOptions gen_opt;
    std::optional<std::size_t> beam_flag, max_len_flag;
    std::optional<double> alpha_flag;
    auto* sc_gen = app.add_subcommand("generate", "Generate reports from a checkpoint");
    sc_gen->add_option("--checkpoint", gen_opt.checkpoint, "Checkpoint file")->required();
    sc_gen->add_option("--data", gen_opt.data_dir, "Dataset directory")->required();
    sc_gen->add_option("--split", gen_opt.split, "Split to decode (default: test)");
    sc_gen->add_option("--out", gen_opt.out_path, "Output JSONL file")->required();
    sc_gen->add_option("--beam", beam_flag, "Beam width (default: from checkpoint config)");
    sc_gen->add_option("--alpha", alpha_flag, "Length-penalty exponent");
    sc_gen->add_option("--max-len", max_len_flag, "Maximum sequence length");
    sc_gen->add_flag("--greedy", gen_opt.greedy, "Greedy decoding instead of beam search");

    cli::EvaluateOptions eval_opt;
    auto* sc_eval = app.add_subcommand("evaluate", "Score generated reports against truth");
    sc_eval->add_option("--generated", eval_opt.generated_path, "Generated JSONL")->required();
    sc_eval->add_option("--truth", eval_opt.truth_path, "Ground-truth JSONL")->required();
    sc_eval->add_option("--out", eval_opt.out_dir, "Directory for metrics.json and table");
    sc_eval->add_option("--label", eval_opt.row_label, "Row label in the printed table");

    cli::GradcheckOptions grad_opt;
    auto* sc_grad = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
    sc_grad->add_option("--tolerance", grad_opt.tolerance, "Pass threshold (default 1e-3)");
    sc_grad
        ->add_flag("--self-test-corrupt", grad_opt.corrupt_backward,
                   "Deliberately corrupt a gradient rule (failure-path fixture)")
        ->group("");  // hidden

    cli::CompareOptions cmp_opt;
    auto* sc_cmp = app.add_subcommand("compare", "Train and score baseline vs ac-bifpn encoders");
    sc_cmp->add_option("--config", cmp_opt.config_path, "JSON config file");
    sc_cmp->add_option("--profile", cmp_opt.profile, "Profile: default | rsna-paper");
    sc_cmp->add_option("--data", cmp_opt.data_dir, "Dataset directory (or config paths.data)");
    sc_cmp->add_option("--out", cmp_opt.out_dir, "Directory for the comparison table");

    CLI11_PARSE(app, argc, argv);

    return cli::run_with_exit_codes([&]() -> int {
        if (sc_data->parsed()) return cli::cmd_generate_data(gen_data);
        if (sc_train->parsed()) return cli::cmd_train(train_opt);
        if (sc_gen->parsed()) {
            gen_opt.beam = beam_flag;
            gen_opt.alpha = alpha_flag;
            gen_opt.max_len = max_len_flag;
            return cli::cmd_generate(gen_opt);
        }
        if (sc_eval->parsed()) return cli::cmd_evaluate(eval_opt);
        if (sc_grad->parsed()) return cli::cmd_gradcheck(grad_opt);
        if (sc_cmp->parsed()) return cli::cmd_compare(cmp_opt);
        return 2;
    });
}

// cfm_lab: train, sample, distill, verify and evaluate velocity fields.
//
// Exit codes: 0 ok, 1 usage error, 2 a verification check failed, 3 runtime abort.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfm/runner.hpp"

namespace {

std::vector<std::size_t> parse_nfe_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw cfm::UsageError("--nfe expects a comma-separated list of positive integers");
    }
    if (used != item.size() || v == 0) throw cfm::UsageError("--nfe expects a comma-separated list of positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw cfm::UsageError("--nfe expects at least one value");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency flow matching lab"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a velocity field from a JSON config");
  train->add_option("--config", config_path, "config file")->required();

  auto* distill = app.add_subcommand("distill", "distill a student from a teacher checkpoint");
  distill->add_option("--config", config_path, "config file (loss=distill, teacher=<ckpt>)")->required();

  cfm::SampleArgs sample_args;
  std::string sample_out;
  std::uint64_t sample_seed = 0;
  auto* sample = app.add_subcommand("sample", "draw samples with the EMA parameters");
  sample->add_option("--ckpt", sample_args.ckpt, "checkpoint")->required();
  sample->add_option("--nfe-k", sample_args.segments, "segments K (one evaluation each when m=1)")->required();
  sample->add_option("--steps-per-segment", sample_args.steps_per_segment, "Euler steps per segment m")->required();
  sample->add_option("--n", sample_args.n, "number of samples")->required();
  sample->add_option("--out", sample_out, "output directory")->required();
  sample->add_flag("--ppm", sample_args.ppm, "also write a 512x512 scatter plot");
  auto* sample_seed_opt = sample->add_option("--seed", sample_seed, "override the checkpoint seed");

  std::string suite, verify_out;
  auto* verify = app.add_subcommand("verify", "run theorem checks");
  verify->add_option("--suite", suite, "lemma|theorem1|theorem2|continuity|corollary|quick|all")->required();
  verify->add_option("--out", verify_out, "output directory")->required();

  cfm::EvalArgs eval_args;
  std::string nfe_text = "2,6,8", eval_out;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "score samples at several NFE budgets");
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint")->required();
  eval->add_option("--nfe", nfe_text, "comma-separated NFE list")->default_val("2,6,8");
  eval->add_option("--n", eval_args.n, "samples per NFE (<= 1024)")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "override the checkpoint seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cfm::kExitOk : cfm::kExitUsage;
  }

  try {
    const std::size_t threads = cfm::thread_budget();
    (void)threads;  // every command runs on one thread; the budget only caps it
    if (*train) return cfm::cmd_train(cfm::load_config(config_path), std::cout);
    if (*distill) return cfm::cmd_distill(cfm::load_config(config_path), std::cout);
    if (*sample) {
      sample_args.out = sample_out;
      if (*sample_seed_opt) sample_args.seed = sample_seed;
      return cfm::cmd_sample(sample_args, std::cout);
    }
    if (*verify) return cfm::cmd_verify(suite, verify_out, std::cout);
    if (*eval) {
      eval_args.out = eval_out;
      eval_args.nfe = parse_nfe_list(nfe_text);
      if (*eval_seed_opt) eval_args.seed = eval_seed;
      return cfm::cmd_eval(eval_args, std::cout);
    }
  } catch (const cfm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return cfm::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cfm::kExitAbort;
  }
  return cfm::kExitUsage;
}

// Command-line front end: dataset generation, training, sensitivity sweeps,
// influence validation, bound evaluation, SGD probes, and record summaries.
// Exit codes: 0 ok, 2 config error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "elastab/elastab.hpp"

namespace {

nlohmann::json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
  nlohmann::json j;
  in >> j;
  return j;
}

void apply_seed_override(nlohmann::json& cfg, const std::optional<std::uint64_t>& seed) {
  if (seed) cfg["seed"] = *seed;
}

void print_files(const std::vector<std::string>& files) {
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locally elastic sensitivity and stability-bound toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  app.add_option("--config", config_path, "JSON config file")->envname("ELASTAB_CONFIG");
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--out", out_dir, "output directory");

  // gen: synthetic dataset to CSV
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset CSV");
  std::string gen_kind = "two_cluster", gen_out = "dataset.csv";
  int gen_d = 10, gen_m = 1000, gen_K = 10, gen_per_class = 100;
  double gen_spread = 0.1;
  std::uint64_t gen_seed = 1;
  gen->add_option("--kind", gen_kind, "two_cluster | blobs");
  gen->add_option("--d", gen_d);
  gen->add_option("--m", gen_m, "two_cluster size");
  gen->add_option("--K", gen_K, "blobs classes");
  gen->add_option("--per-class", gen_per_class);
  gen->add_option("--spread", gen_spread);
  gen->add_option("--gen-seed", gen_seed);
  gen->add_option("--out-file", gen_out);

  auto* train = app.add_subcommand("train", "train a model and save it as JSON");
  auto* sensitivity = app.add_subcommand("sensitivity", "pairwise influence sweep");
  auto* validate = app.add_subcommand("validate", "influence vs exact leave-one-out");
  auto* bounds = app.add_subcommand("bounds", "evaluate generalization bounds");
  auto* sgd_probe = app.add_subcommand("sgd-probe", "stepwise sensitivity sweep");
  auto* couple = app.add_subcommand("couple", "coupled SGD divergence trace");
  auto* summary = app.add_subcommand("summary", "stability summary of a records CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (seed_override) gen_seed = *seed_override;
      elastab::Dataset ds =
          gen_kind == "blobs"
              ? elastab::gen_blobs(gen_d, gen_K, gen_per_class, gen_spread, gen_seed)
              : elastab::gen_two_cluster(gen_d, gen_m, gen_seed);
      std::filesystem::create_directories(out_dir);
      const auto path = std::filesystem::path(out_dir) / gen_out;
      elastab::emit_csv(ds, path.string());
      std::cout << "wrote " << path.string() << " (m=" << ds.m() << ", d=" << ds.dim()
                << ")\n";
      return 0;
    }

    nlohmann::json cfg = load_config(config_path);
    apply_seed_override(cfg, seed_override);

    if (train->parsed()) {
      const elastab::Dataset ds =
          elastab::pipelines::dataset_from_config(cfg.at("dataset"));
      const auto pm = elastab::pipelines::model_from_config(ds, cfg.at("model"));
      std::filesystem::create_directories(out_dir);
      const auto path = std::filesystem::path(out_dir) /
                        cfg.value("out_file", std::string("model.json"));
      elastab::save_model(pm.model, path.string());
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
    if (sensitivity->parsed()) {
      print_files(elastab::pipelines::pipeline_sensitivity(cfg, out_dir));
      return 0;
    }
    if (validate->parsed()) {
      print_files(elastab::pipelines::pipeline_validate(cfg, out_dir));
      return 0;
    }
    if (bounds->parsed()) {
      const auto files = elastab::pipelines::pipeline_bounds(cfg, out_dir);
      print_files(files);
      std::ifstream in(files.front());
      nlohmann::json report;
      in >> report;
      for (const auto& [name, value] : report.at("bounds").items())
        std::cout << name << " = " << value.get<double>() << "\n";
      for (const auto& [name, value] : report.at("verdicts").items())
        std::cout << name << ": " << (value.get<bool>() ? "yes" : "no") << "\n";
      return 0;
    }
    if (sgd_probe->parsed()) {
      print_files(elastab::pipelines::pipeline_sgd_probe(cfg, out_dir));
      return 0;
    }
    if (couple->parsed()) {
      print_files(elastab::pipelines::pipeline_couple(cfg, out_dir));
      return 0;
    }
    if (summary->parsed()) {
      print_files(elastab::pipelines::pipeline_summary(cfg, out_dir));
      return 0;
    }
  } catch (const elastab::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const elastab::unsupported_operation& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

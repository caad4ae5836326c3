#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "fedwarm/error.hpp"

namespace fedwarm::cli {

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << text;
}

int parse_args(CLI::App& app, const std::vector<std::string>& args) {
  std::vector<std::string> argv_storage{app.get_name()};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  app.parse(static_cast<int>(argv.size()), argv.data());
  return 0;
}

}  // namespace

void add_run_options(CLI::App& app, RunConfig& c) {
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Flat key=value config file; flags override its values");
  app.allow_config_extras(CLI::config_extras_mode::error);

  app.add_option("--dataset", c.dataset, "gaussian or csv:<path> (required)");
  app.add_option("--gaussian_classes", c.gaussian_classes, "Classes in the synthetic mixture");
  app.add_option("--gaussian_per_class", c.gaussian_per_class, "Samples per class");
  app.add_option("--gaussian_dim", c.gaussian_dim, "Feature dimension");
  app.add_option("--gaussian_spread", c.gaussian_spread, "Per-class standard deviation");
  app.add_option("--model", c.model, "softmax_linear, mlp1 or quadratic");
  app.add_option("--hidden_dim", c.hidden_dim, "Hidden units for mlp1");
  app.add_option("--algorithm", c.algorithm, "fedavg, fedprox, scaffold or fedacg");
  app.add_option("--variant", c.variant, "proposed, previous, average, continuous or random_pilot");
  app.add_option("--num_clients", c.num_clients, "Clients per session");
  app.add_option("--num_sessions", c.num_sessions, "Sessions S");
  app.add_option("--num_sessions_pilot", c.num_sessions_pilot, "Pilot sessions P");
  app.add_option("--num_rounds_pilot", c.num_rounds_pilot, "Global rounds per pilot session");
  app.add_option("--num_rounds_actual", c.num_rounds_actual, "Global rounds per post-pilot session T");
  app.add_option("--num_round_grad_cal", c.num_round_grad_cal, "Gradient computation rounds V");
  app.add_option("--cross_session_label_overlap", c.cross_session_label_overlap,
                 "Fraction of labels shared by consecutive sessions, in [0, 1)");
  app.add_option("--labels_per_session", c.labels_per_session, "Labels per session (0: half of the classes)");
  app.add_option("--in_session_label_dist", c.in_session_label_dist,
                 "dirichlet, two_shard, half, partial_overlap or distinct");
  app.add_option("--dirichlet_alpha", c.dirichlet_alpha, "Dirichlet concentration");
  app.add_option("--partial_overlap_set", c.partial_overlap_set, "partial_overlap: label share per group");
  app.add_option("--partial_overlap_shared", c.partial_overlap_shared, "partial_overlap: shared label share");
  app.add_option("--recurrence", c.recurrence, "Recurring sessions as session:earlier,...");
  app.add_flag("--unseen_final", c.unseen_final, "Last session uses never-seen labels");
  app.add_option("--test_fraction", c.test_fraction, "Held-out share of each session's data");
  app.add_option("--lr", c.lr, "Local learning rate");
  app.add_option("--lr_config_path", c.lr_config_path, "JSON schedule with base_lr, power, end_lr");
  app.add_option("--num_SGD_training", c.num_SGD_training, "Local SGD steps e_k (minimum)");
  app.add_option("--num_SGD_training_max", c.num_SGD_training_max, "Maximum e_k (0: fixed)");
  app.add_option("--batch_size_training", c.batch_size_training, "Local batch size B_k");
  app.add_option("--num_SGD_grad_cal", c.num_SGD_grad_cal, "Local steps in gradient computation (0: same)");
  app.add_option("--batch_size_grad_cal", c.batch_size_grad_cal, "Batch size in gradient computation (0: same)");
  app.add_option("--similarity_scale", c.similarity_scale, "Similarity scaling factor R");
  app.add_option("--similarity", c.similarity, "Gradient distance (two_norm)");
  app.add_option("--prox_alpha", c.prox_alpha, "FedProx coefficient mu");
  app.add_option("--acg_beta", c.acg_beta, "FedACG regularizer beta");
  app.add_option("--acg_lambda", c.acg_lambda, "FedACG momentum lambda");
  app.add_option("--kl_coefficient", c.kl_coefficient, "Distillation weight for the continuous baseline");
  app.add_option("--participation_fraction", c.participation_fraction, "Share of clients per round");
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--output_dir", c.output_dir, "Output directory");
  app.add_option("--threads", c.threads, "Client threads");
  app.add_option("--bound_lambda", c.bound_lambda, "Lambda used by the bound report, in (0, 1)");
  app.add_option("--transition_window", c.transition_window, "Rounds averaged after a transition");
  app.add_flag("--timing", c.timing, "Record wall-clock time per round");
  app.add_flag("--checkpoint", c.checkpoint, "Save the model and gradient stores");
}

RunConfig parse_config(const std::vector<std::string>& args) {
  RunConfig config;
  CLI::App app{"fedwarm run", "fedwarm"};
  add_run_options(app, config);
  try {
    parse_args(app, args);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }
  config.validate();
  return config;
}

int run_main(int argc, char** argv) {
  CLI::App app{"Session-based federated learning simulator with similarity-weighted warm start", "fedwarm"};
  app.require_subcommand(1);

  RunConfig run_config;
  auto* run = app.add_subcommand("run", "Run one experiment");
  add_run_options(*run, run_config);

  RunConfig sweep_config;
  std::string variants = "proposed,previous,average,continuous,random_pilot";
  std::string seeds = "0,1,2";
  std::string scales;
  auto* sweep = app.add_subcommand("sweep", "Run variants x seeds (x similarity scales) into subdirectories");
  add_run_options(*sweep, sweep_config);
  sweep->add_option("--variants", variants, "Comma-separated variants");
  sweep->add_option("--seeds", seeds, "Comma-separated seeds");
  sweep->add_option("--scales", scales, "Comma-separated similarity scales for the proposed variant");

  std::vector<std::string> files;
  int window = 10;
  std::string csv_out;
  auto* transitions = app.add_subcommand("transitions", "Transition-average table over metrics files");
  transitions->add_option("files", files, "metrics.csv files sharing one schedule")->required();
  transitions->add_option("--window", window, "Rounds averaged after each transition")->capture_default_str();
  transitions->add_option("--csv", csv_out, "Also write the table as CSV");

  std::string plot_in;
  std::string plot_out;
  auto* plotdata = app.add_subcommand("plotdata", "Long-format accuracy curve from a metrics file");
  plotdata->add_option("file", plot_in, "metrics.csv")->required();
  plotdata->add_option("--out", plot_out, "Output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) {
      const auto out = run_experiment(run_config);
      std::cout << out.metrics.string() << '\n'
                << out.summary.string() << '\n'
                << out.bound_report.string() << '\n'
                << out.schedule.string() << '\n';
    } else if (*sweep) {
      sweep_config.validate();
      const auto seed_list = split_list(seeds);
      const auto scale_list = split_list(scales);
      for (const auto& seed_text : seed_list) {
        std::vector<std::vector<MetricsRow>> runs;
        auto base = sweep_config;
        try {
          base.seed = std::stoull(seed_text);
        } catch (const std::exception&) {
          throw ConfigError("invalid seed '" + seed_text + "' in --seeds");
        }
        const std::string seed_dir = sweep_config.output_dir + "/seed_" + seed_text;
        for (const auto& variant : split_list(variants)) {
          const bool scaled = variant == "proposed" && !scale_list.empty();
          for (std::size_t i = 0; i < (scaled ? scale_list.size() : 1); ++i) {
            auto c = base;
            c.variant = variant;
            c.output_dir = seed_dir + "/" + variant;
            if (scaled) {
              try {
                c.similarity_scale = std::stod(scale_list[i]);
              } catch (const std::exception&) {
                throw ConfigError("invalid scale '" + scale_list[i] + "' in --scales");
              }
              c.output_dir += "_R" + scale_list[i];
            }
            const auto out = run_experiment(c);
            std::cout << out.metrics.string() << '\n';
            runs.push_back(read_metrics(out.metrics));
          }
        }
        const auto table = transition_table(runs, sweep_config.transition_window);
        write_text(seed_dir + "/transitions.csv", table.to_csv());
        std::cout << "seed " << seed_text << '\n' << table.to_text();
      }
    } else if (*transitions) {
      std::vector<std::vector<MetricsRow>> runs;
      for (const auto& f : files) runs.push_back(read_metrics(f));
      const auto table = transition_table(runs, window);
      std::cout << table.to_text();
      if (!csv_out.empty()) write_text(csv_out, table.to_csv());
    } else if (*plotdata) {
      const auto text = emit_plotdata(read_metrics(plot_in));
      if (plot_out.empty()) {
        std::cout << text;
      } else {
        write_text(plot_out, text);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace fedwarm::cli

#include "placekit/cli.hpp"

#include "placekit/checkpoint.hpp"
#include "placekit/config.hpp"
#include "placekit/csv.hpp"
#include "placekit/errors.hpp"
#include "placekit/experiment.hpp"
#include "placekit/heatmap.hpp"
#include "placekit/metrics.hpp"
#include "placekit/parallel.hpp"
#include "placekit/random.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace placekit {

void set_thread_limit(int threads) {
#ifdef _OPENMP
  if (threads > 0)
    omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char *kVersion = "placekit 0.1.0";

std::uint64_t fnv1a(const std::string &s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

struct Options {
  std::string command;
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::vector<std::string> argv;
};

class Run {
public:
  Run(const Options &opt, ExperimentConfig cfg, std::string root)
      : opt_(opt), cfg_(std::move(cfg)), root_(std::move(root)),
        start_(std::chrono::steady_clock::now()) {}

  const ExperimentConfig &cfg() const { return cfg_; }
  const std::string &root() const { return root_; }

  const SyntheticEnvironment &env() {
    if (!env_)
      env_ = std::make_unique<SyntheticEnvironment>(build_environment(cfg_.environment));
    return *env_;
  }
  const Dataset &data() {
    if (!data_)
      data_ = std::make_unique<Dataset>(env());
    return *data_;
  }

  std::string path(const std::string &rel) const { return (fs::path(root_) / rel).string(); }

  void write(const std::string &rel, const std::string &content) {
    write_file_atomic(path(rel), content);
    artifacts_.push_back(rel);
  }
  void heatmap(const std::string &rel, const GridField &f, const std::string &title) {
    emit_heatmap(f, path(rel), title);
    artifacts_.push_back(rel);
  }
  void container(const std::string &rel, const std::function<void(const std::string &)> &save) {
    fs::create_directories(fs::path(path(rel)).parent_path());
    save(path(rel));
    artifacts_.push_back(rel);
  }

  void manifest(const std::string &dir) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m;
    m["subcommand"] = opt_.command;
    m["argv"] = opt_.argv;
    m["version"] = kVersion;
    m["config_path"] = opt_.config_path;
    m["config_text"] = cfg_.source_text;
    m["config_hash_fnv1a64"] = hex64(fnv1a(cfg_.source_text));
    m["seeds"] = {{"environment", cfg_.environment.seed},
                  {"seed_override", opt_.seed ? json(*opt_.seed) : json(nullptr)},
                  {"gp_fit", cfg_.gp.fit.seed},
                  {"np_train", cfg_.np.train.seed},
                  {"stations", cfg_.placement.station_seed}};
    m["threads"] = opt_.threads;
    m["output_root"] = root_;
    m["wall_time_seconds"] = wall;
    m["artifacts"] = artifacts_;
    m["notes"] = {"GP hyperparameters fitted with Adam for every kernel variant",
                  "metrics reported in target-variable units (training-split normalizer)"};
    write_file_atomic(path(dir + "/manifest.json"), m.dump(2) + "\n");
  }

private:
  const Options &opt_;
  ExperimentConfig cfg_;
  std::string root_;
  std::chrono::steady_clock::time_point start_;
  std::unique_ptr<SyntheticEnvironment> env_;
  std::unique_ptr<Dataset> data_;
  std::vector<std::string> artifacts_;
};

GridField full_grid(const SyntheticEnvironment &env, const Eigen::VectorXd &values,
                    bool mask_sea) {
  GridField f;
  f.rows = env.grid().rows;
  f.cols = env.grid().cols;
  f.values = values;
  if (mask_sea)
    for (Eigen::Index i = 0; i < values.size(); ++i)
      f.masked.push_back(env.mask()(i) < 0.5);
  return f;
}

/// Field on the search lattice; lattice nodes outside the search set are masked.
GridField lattice_grid(const SyntheticEnvironment &env, int stride,
                       const std::vector<int> &cells, const Eigen::VectorXd &values) {
  const int g = env.grid().cols;
  GridField f;
  f.rows = (env.grid().rows + stride - 1) / stride;
  f.cols = (g + stride - 1) / stride;
  f.values = Eigen::VectorXd::Zero(f.rows * f.cols);
  f.masked.assign(static_cast<std::size_t>(f.rows * f.cols), true);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const int idx = (cells[i] / g / stride) * f.cols + (cells[i] % g) / stride;
    f.values(idx) = values(static_cast<Eigen::Index>(i));
    f.masked[static_cast<std::size_t>(idx)] = false;
  }
  return f;
}

std::string grid_csv(const SyntheticEnvironment &env,
                     const std::vector<std::pair<std::string, Eigen::VectorXd>> &columns) {
  std::ostringstream os;
  os << "x1,x2";
  for (const auto &c : columns)
    os << ',' << c.first;
  os << '\n';
  const Locations nodes = env.grid().nodes();
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    os << format_double(nodes(i, 0)) << ',' << format_double(nodes(i, 1));
    for (const auto &c : columns)
      os << ',' << format_double(c.second(i));
    os << '\n';
  }
  return os.str();
}

// gen-env ----------------------------------------------------------------------

void cmd_gen_env(Run &run) {
  const SyntheticEnvironment &env = run.env();
  run.container("env/environment.npsp",
                [&](const std::string &p) { save_environment(env, p); });
  const Locations nodes = env.grid().nodes();
  Eigen::VectorXd l1(nodes.rows()), l2(nodes.rows());
  for (Eigen::Index i = 0; i < nodes.rows(); ++i)
    std::tie(l1(i), l2(i)) = env.lengthscale(nodes.row(i));
  run.write("env/fields.csv", grid_csv(env, {{"mask", env.mask()},
                                             {"elevation", env.elevation()},
                                             {"l1", l1},
                                             {"l2", l2}}));
  const Dataset &data = run.data();
  std::mt19937_64 rng(derive_seed(run.cfg().environment.seed, {0xe8a3}));
  std::ostringstream task_csv;
  write_task_csv(task_csv, sample_task(data, data.split().train.front(), rng,
                                       run.cfg().sampling));
  run.write("env/example_task.csv", task_csv.str());
  std::ostringstream split;
  split << "date,split\n";
  for (int d : data.split().train)
    split << d << ",train\n";
  for (int d : data.split().validation)
    split << d << ",validation\n";
  for (int d : data.split().test)
    split << d << ",test\n";
  run.write("env/dates.csv", split.str());
  run.manifest("env");
}

// fit-gp -----------------------------------------------------------------------

void cmd_fit_gp(Run &run) {
  const Dataset &data = run.data();
  for (KernelVariant v : run.cfg().gp.variants) {
    const std::string name = variant_name(v);
    std::cerr << "fitting " << name << " GP\n";
    const GPFitResult fit = fit_variant(run.cfg(), data, v);
    run.container("gp/" + name + ".npsp",
                  [&](const std::string &p) { save_gp(fit.params, p); });
    std::ostringstream hist;
    hist << "epoch,val_objective\n";
    for (std::size_t e = 0; e < fit.history.size(); ++e)
      hist << e << ',' << format_double(fit.history[e]) << '\n';
    run.write("gp/" + name + "_history.csv", hist.str());
    if (v == KernelVariant::Gibbs) {
      const auto &g = std::get<GibbsParams>(fit.params.kernel);
      const Locations nodes = run.env().grid().nodes();
      Eigen::VectorXd l1(nodes.rows()), l2(nodes.rows());
      for (Eigen::Index i = 0; i < nodes.rows(); ++i)
        std::tie(l1(i), l2(i)) = lengthscale_field(g, nodes.row(i));
      run.write("gp/" + name + "_lengthscale.csv", grid_csv(run.env(), {{"l1", l1}, {"l2", l2}}));
    }
  }
  run.manifest("gp");
}

// train-np ---------------------------------------------------------------------

void cmd_train_np(Run &run) {
  const TrainResult result =
      train_neural_process(run.cfg(), run.data(), [](const EpochRecord &r) {
        std::cerr << "epoch " << r.epoch << " train " << r.train_nll << " val " << r.val_nll
                  << (r.checkpointed ? " *" : "") << '\n';
      });
  run.container("np/convgnp.npsp",
                [&](const std::string &p) { save_checkpoint(result.model, p); });
  std::ostringstream hist;
  write_history_csv(hist, result.history);
  run.write("np/history.csv", hist.str());
  run.manifest("np");
}

// eval-sweep -------------------------------------------------------------------

void cmd_eval_sweep(Run &run) {
  const auto &cfg = run.cfg();
  const Dataset &data = run.data();
  std::vector<std::unique_ptr<Predictor>> models;
  for (const auto &name : cfg.sweep.models)
    models.push_back(load_model(run.root(), name));
  std::ostringstream os;
  bool header = true;
  for (std::size_t m = 0; m < models.size(); ++m)
    for (int nc : cfg.sweep.nc_ladder) {
      const std::vector<Task> tasks = sweep_tasks(cfg, data, nc);
      const MetricReport r = evaluate_tasks(*models[m], tasks, data.normalizer());
      write_metric_rows(os, cfg.sweep.models[m], nc, r, header);
      header = false;
    }
  run.write("sweep/metrics.csv", os.str());
  run.manifest("sweep");
}

// place ------------------------------------------------------------------------

std::string plan_table(const PlacementPlan *plan, const PlanEvaluation &ev) {
  std::ostringstream os;
  os << "step,x1,x2,alpha,rmse,marginal_nll,joint_nll_normalized,mean_variance\n";
  for (std::size_t k = 0; k < ev.reports.size(); ++k) {
    os << k << ',';
    if (k == 0 || !plan) {
      os << ",,";
    } else {
      const auto &s = plan->steps[k - 1];
      os << format_double(s.location(0)) << ',' << format_double(s.location(1)) << ','
         << format_double(s.alpha);
    }
    const auto &r = ev.reports[k];
    os << ',' << format_double(r.rmse) << ',' << format_double(r.marginal_nll) << ','
       << format_double(r.joint_nll_normalized) << ',' << format_double(ev.mean_variance[k])
       << '\n';
  }
  return os.str();
}

struct PlacementSetup {
  std::unique_ptr<Predictor> model;
  std::vector<int> dates;
  PlacementProblem problem;
};

PlacementSetup placement_setup(Run &run) {
  const auto &cfg = run.cfg();
  PlacementSetup s;
  s.model = load_model(run.root(), cfg.placement.model);
  s.dates = spread_dates(run.data().split().validation, cfg.placement.num_dates);
  const std::vector<int> stations =
      choose_stations(run.env(), cfg.placement.num_stations, cfg.placement.station_seed);
  s.problem = placement_problem(run.data(), s.dates, stations, cfg.placement.search_stride);
  return s;
}

void cmd_place(Run &run) {
  const auto &cfg = run.cfg();
  PlacementSetup s = placement_setup(run);
  const PlacementProblem &p = s.problem;
  const Locations &search = p.space.locations;
  const std::vector<int> eval_dates = spread_dates(run.data().split().test, cfg.placement.eval_dates);
  const std::string prefix = "place/" + cfg.placement.model + "_";

  std::ostringstream st;
  st << "x1,x2\n";
  for (Eigen::Index i = 0; i < p.tasks.front().observations().size(); ++i)
    st << format_double(p.tasks.front().observations().locations(i, 0)) << ','
       << format_double(p.tasks.front().observations().locations(i, 1)) << '\n';
  run.write("place/stations.csv", st.str());

  for (AcquisitionKind kind : cfg.placement.kinds) {
    const std::string name = kind_name(kind);
    std::cerr << "placing with " << name << '\n';
    const int seeds = kind == AcquisitionKind::Random ? cfg.placement.random_seeds : 1;
    std::vector<PlanEvaluation> evals;
    for (int r = 0; r < seeds; ++r) {
      const std::uint64_t seed =
          derive_seed(cfg.environment.seed, {0x52, static_cast<std::uint64_t>(r)});
      const PlacementPlan plan =
          greedy_place(*s.model, kind, p.tasks, search, search, cfg.placement.K, seed);
      PlanEvaluation ev = evaluate_indices(*s.model, run.data(), eval_dates, p, plan.indices());
      const std::string stem =
          prefix + name + (kind == AcquisitionKind::Random ? "_seed" + std::to_string(r) : "");
      run.write(stem + ".csv", plan_table(&plan, ev));
      if (!plan.steps.empty()) {
        std::ostringstream field;
        write_field_csv(field, plan.steps.front().field);
        run.write(stem + "_step1_field.csv", field.str());
        run.heatmap(stem + "_step1.svg",
                    lattice_grid(run.env(), cfg.placement.search_stride, p.space.cells,
                                 plan.steps.front().field.values),
                    name + " step 1");
      }
      evals.push_back(std::move(ev));
    }
    if (kind == AcquisitionKind::Random) {
      std::ostringstream sum;
      sum << "step,rmse_mean,rmse_stderr,marginal_nll_mean,marginal_nll_stderr\n";
      for (std::size_t k = 0; k < evals.front().reports.size(); ++k) {
        std::vector<MetricReport> at_k;
        for (const auto &e : evals)
          at_k.push_back(e.reports[k]);
        const MetricReport agg = aggregate_reports(at_k);
        sum << k << ',' << format_double(agg.rmse) << ',' << format_double(agg.rmse_stderr)
            << ',' << format_double(agg.marginal_nll) << ','
            << format_double(agg.marginal_nll_stderr) << '\n';
      }
      run.write(prefix + "Random_summary.csv", sum.str());
    }
  }
  run.manifest("place");
}

// oracle-corr ------------------------------------------------------------------

Eigen::VectorXd averaged_field(const Predictor &model, AcquisitionKind kind,
                               const PlacementProblem &p, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> per_date;
  for (const Task &t : p.tasks)
    per_date.push_back(
        acquisition_eval(model, kind, t, p.space.locations, p.space.locations, seed));
  return acquisition_average(per_date);
}

void cmd_oracle_corr(Run &run) {
  const auto &cfg = run.cfg();
  PlacementSetup s = placement_setup(run);
  const PlacementProblem &p = s.problem;
  const std::uint64_t seed = derive_seed(cfg.environment.seed, {0x52, 0});

  std::vector<std::pair<std::string, Eigen::VectorXd>> fields;
  for (AcquisitionKind k : cfg.placement.kinds)
    fields.emplace_back(kind_name(k), averaged_field(*s.model, k, p, seed));
  const std::size_t n_model = fields.size();
  for (AcquisitionKind k : {AcquisitionKind::OracleRMSE, AcquisitionKind::OracleMarginalNLL,
                            AcquisitionKind::OracleJointNLL})
    fields.emplace_back(kind_name(k), oracle_acquisition(*s.model, k, p.tasks, p.search_truth,
                                                         p.space.locations, p.space.locations)
                                          .values);

  std::ostringstream fcsv;
  fcsv << "x1,x2";
  for (const auto &f : fields)
    fcsv << ',' << f.first;
  fcsv << '\n';
  for (Eigen::Index i = 0; i < p.space.locations.rows(); ++i) {
    fcsv << format_double(p.space.locations(i, 0)) << ','
         << format_double(p.space.locations(i, 1));
    for (const auto &f : fields)
      fcsv << ',' << format_double(f.second(i));
    fcsv << '\n';
  }
  run.write("oracle/fields.csv", fcsv.str());

  std::ostringstream corr;
  bool header = true;
  for (std::size_t o = n_model; o < fields.size(); ++o)
    for (std::size_t m = 0; m < n_model; ++m) {
      const CorrelationReport r =
          correlation_report(fields[m].second, fields[o].second,
                             cfg.placement.bootstrap_resamples,
                             derive_seed(cfg.environment.seed, {0xb007, m, o}));
      write_correlation_csv(corr, fields[m].first + "_vs_" + fields[o].first, r, header);
      header = false;
    }
  run.write("oracle/correlation.csv", corr.str());
  for (const auto &f : fields)
    run.heatmap("oracle/" + f.first + ".svg",
                lattice_grid(run.env(), cfg.placement.search_stride, p.space.cells, f.second),
                f.first);
  run.manifest("oracle");
}

// pareto -----------------------------------------------------------------------

void cmd_pareto(Run &run) {
  const auto &cfg = run.cfg();
  PlacementSetup s = placement_setup(run);
  const PlacementProblem &p = s.problem;
  const Eigen::VectorXd info = averaged_field(*s.model, AcquisitionKind::DeltaVar, p, 0);
  const Eigen::VectorXd cost = averaged_field(*s.model, AcquisitionKind::ContextDist, p, 0);
  const std::vector<ParetoPoint> points = pareto_points(info, cost);
  std::ostringstream os;
  os << "index,x1,x2,informativeness,cost,rank\n";
  Eigen::VectorXd ranks(static_cast<Eigen::Index>(points.size()));
  for (const auto &pt : points) {
    os << pt.index << ',' << format_double(p.space.locations(pt.index, 0)) << ','
       << format_double(p.space.locations(pt.index, 1)) << ','
       << format_double(pt.informativeness) << ',' << format_double(pt.cost) << ',' << pt.rank
       << '\n';
    ranks(pt.index) = pt.rank;
  }
  run.write("pareto/scatter.csv", os.str());
  run.heatmap("pareto/rank_heatmap.svg",
              lattice_grid(run.env(), cfg.placement.search_stride, p.space.cells, ranks),
              "Pareto rank (DeltaVar vs ContextDist)");
  run.manifest("pareto");
}

// plot -------------------------------------------------------------------------

void cmd_plot(Run &run) {
  const SyntheticEnvironment &env = run.env();
  const Dataset &data = run.data();
  const Locations nodes = env.grid().nodes();
  Eigen::VectorXd l1(nodes.rows());
  for (Eigen::Index i = 0; i < nodes.rows(); ++i)
    l1(i) = env.lengthscale(nodes.row(i)).first;
  run.heatmap("plot/mask.svg", full_grid(env, env.mask(), false), "mask");
  run.heatmap("plot/elevation.svg", full_grid(env, env.elevation(), true), "elevation");
  run.heatmap("plot/true_lengthscale_l1.svg", full_grid(env, l1, false), "true l1(x)");
  const int date = data.split().test.front();
  run.heatmap("plot/truth_date" + std::to_string(date) + ".svg",
              full_grid(env, denormalize(data.field(date), data.normalizer()), false),
              "truth, date " + std::to_string(date));

  const fs::path gibbs = fs::path(run.root()) / "gp" / (variant_name(KernelVariant::Gibbs) + ".npsp");
  if (fs::exists(gibbs)) {
    const KernelParams params = load_gp(gibbs.string());
    const auto &g = std::get<GibbsParams>(params.kernel);
    Eigen::VectorXd fitted(nodes.rows());
    for (Eigen::Index i = 0; i < nodes.rows(); ++i)
      fitted(i) = lengthscale_field(g, nodes.row(i)).first;
    run.heatmap("plot/gibbs_lengthscale_l1.svg", full_grid(env, fitted, false),
                "fitted Gibbs l1(x)");
  }
  const fs::path np = fs::path(run.root()) / "np" / "convgnp.npsp";
  if (fs::exists(np)) {
    const NPModel model = load_checkpoint(np.string());
    const std::vector<int> stations = choose_stations(
        env, run.cfg().placement.num_stations, run.cfg().placement.station_seed);
    std::vector<int> all(static_cast<std::size_t>(env.grid().size()));
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = static_cast<int>(i);
    const GaussianPredictive pred = affine_transform(
        model.predict(make_task(data, date, stations, all)), data.normalizer().mean,
        data.normalizer().std);
    run.heatmap("plot/np_mean.svg", full_grid(env, predictive_mean(pred), false),
                "ConvGNP mean");
    run.heatmap("plot/np_std.svg",
                full_grid(env, marginal_variances(pred).cwiseSqrt(), false), "ConvGNP std");
  }
  run.manifest("plot");
}

std::string resolve_root(const Options &opt, const ExperimentConfig &cfg) {
  if (!opt.out.empty())
    return opt.out;
  if (!cfg.output_dir.empty())
    return cfg.output_dir;
  if (const char *env = std::getenv("PLACEKIT_OUT"); env && *env)
    return env;
  return "placekit_out";
}

} // namespace

int run_cli(const std::vector<std::string> &args) {
  Options opt;
  opt.argv = args;
  CLI::App app{"Sensor-placement experiments on a synthetic non-stationary environment",
               "placekit"};
  app.require_subcommand(1);
  const std::map<std::string, std::string> commands{
      {"gen-env", "generate the environment and its static fields"},
      {"fit-gp", "fit the EQ / RQ / Gibbs GP baselines"},
      {"train-np", "train the convolutional Gaussian neural process"},
      {"eval-sweep", "evaluate models over the context-size ladder"},
      {"place", "greedy sensor placement and plan evaluation"},
      {"oracle-corr", "correlate acquisition fields with oracle fields"},
      {"pareto", "rank sites by informativeness versus cost"},
      {"plot", "render heatmaps of the environment and models"},
  };
  for (const auto &[name, help] : commands) {
    CLI::App *sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "experiment config (INI)")->required();
    sub->add_option("--out", opt.out, "output root (default: PLACEKIT_OUT)");
    sub->add_option("--seed", opt.seed, "override the environment seed");
    sub->add_option("--threads", opt.threads, "worker thread cap")->check(CLI::NonNegativeNumber);
    sub->callback([&opt, name = name] { opt.command = name; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty())
    reversed.pop_back(); // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    std::cerr << "placekit: " << e.what() << '\n';
    return kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(opt.config_path);
    if (opt.seed)
      cfg.apply_seed(*opt.seed);
  } catch (const InvalidConfig &e) {
    std::cerr << "placekit: config error: " << e.what() << '\n';
    return kExitConfig;
  }
  set_thread_limit(opt.threads);

  try {
    Run run(opt, cfg, resolve_root(opt, cfg));
    const std::map<std::string, void (*)(Run &)> dispatch{
        {"gen-env", cmd_gen_env},       {"fit-gp", cmd_fit_gp},
        {"train-np", cmd_train_np},     {"eval-sweep", cmd_eval_sweep},
        {"place", cmd_place},           {"oracle-corr", cmd_oracle_corr},
        {"pareto", cmd_pareto},         {"plot", cmd_plot},
    };
    dispatch.at(opt.command)(run);
  } catch (const InvalidConfig &e) {
    std::cerr << "placekit: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception &e) {
    std::cerr << "placekit: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

} // namespace placekit

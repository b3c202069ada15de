// ivs: generate synthetic quotes, fit the surface models, evaluate and simulate.
//
//   ivs gen-data --days 500 --seed 7 --out run
//   ivs fit --features sam --step2 dnn --out run
//   ivs evaluate --models sam-dnn,dfw --out run
//   ivs simulate --paths 100 --horizon 5 --seed 1 --out run
//
// Exit codes: 0 success, 2 config or input error, 3 numerical failure.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "ivs/errors.hpp"
#include "ivs/evaluation.hpp"
#include "ivs/pipeline.hpp"
#include "ivs/runtime.hpp"
#include "ivs/simulate.hpp"
#include "manifest.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace ivs;
using ivs::cli::Manifest;
using ivs::cli::RunConfig;

namespace {

struct Paths {
  fs::path out;

  fs::path quotes() const { return out / "quotes.csv"; }
  fs::path models() const { return out / "models"; }
  fs::path reports() const { return out / "reports"; }
  fs::path manifest(const std::string& cmd) const { return out / "manifests" / (cmd + ".json"); }
  fs::path lstm(FeatureMethod m) const { return models() / (to_string(m) + "_lstm.ivsp"); }
  fs::path dnn(FeatureMethod m) const { return models() / (to_string(m) + "_dnn.ivsp"); }
  fs::path feature_model(FeatureMethod m) const {
    return models() / (m == FeatureMethod::pca ? "pca_basis.ivsp" : "vae.ivsp");
  }
};

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw StateError("missing " + p.string() + " (" + hint + ")");
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

Manifest start_manifest(const std::string& cmd, const Paths& paths, const RunConfig& cfg) {
  Manifest m(cmd, paths.out);
  m.info()["seed"] = cfg.seed;
  m.info()["config_sha256"] = cli::sha256_hex(cfg.to_ini());
  return m;
}

void finish_manifest(const Manifest& m, const std::string& cmd, const Paths& paths) {
  const fs::path p = paths.manifest(cmd);
  fs::create_directories(p.parent_path());
  m.write(p);
}

struct LoadedPanel {
  Panel panel;
  std::size_t n_train = 0;
};

LoadedPanel load_panel(const fs::path& quotes, const RunConfig& cfg) {
  require_file(quotes, "run gen-data first or pass --data");
  LoadedPanel lp;
  lp.panel = build_panel(load_quotes(quotes), default_grid());
  const PanelSplit split =
      cfg.split_date.empty() ? split_panel_ratio(lp.panel, cfg.split_ratio) : split_panel(lp.panel, cfg.split_date);
  lp.n_train = split.train.days();
  if (lp.n_train <= static_cast<std::size_t>(kLongWindow) || lp.n_train >= lp.panel.days()) {
    throw DataError("the split leaves " + std::to_string(lp.n_train) + " training days of " +
                    std::to_string(lp.panel.days()) + "; need more than " + std::to_string(kLongWindow) +
                    " and at least one test day");
  }
  return lp;
}

// Models of one feature method as stored by `fit`.
struct StoredPipeline {
  FeatureModel features;
  Predictor predictor;
  std::optional<SurfaceNet> net;
};

StoredPipeline load_pipeline(const Paths& paths, FeatureMethod m, bool need_dnn, Manifest& manifest) {
  StoredPipeline s;
  const std::string hint = "run fit --features " + to_string(m);
  if (m != FeatureMethod::sam) {
    require_file(paths.feature_model(m), hint);
    manifest.input(paths.feature_model(m));
  }
  s.features = FeatureModel::load(paths.feature_model(m), m);
  require_file(paths.lstm(m), hint);
  manifest.input(paths.lstm(m));
  s.predictor = Predictor::from_params(nn::load_params(paths.lstm(m)));
  if (need_dnn) {
    require_file(paths.dnn(m), hint + " --step2 dnn");
    manifest.input(paths.dnn(m));
    s.net = SurfaceNet::from_params(nn::load_params(paths.dnn(m)));
  }
  return s;
}

std::string num(double v) { return nn::format_double(v); }

// Commands ---------------------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const Paths& paths) {
  cfg.synth.validate();
  const SynthPanel sp = synth_generate(cfg.synth, cfg.seed);
  fs::create_directories(paths.out);
  write_quotes(paths.quotes(), sp.snapshots);
  Manifest m = start_manifest("gen-data", paths, cfg);
  m.info()["days"] = cfg.synth.days;
  m.info()["redraws"] = sp.redraws;
  m.output(paths.quotes());
  finish_manifest(m, "gen-data", paths);
  std::cerr << "gen-data: " << sp.snapshots.size() << " days written to " << paths.quotes().string() << '\n';
}

void write_lstm_curve(const fs::path& p, const PredictorHistory& h) {
  auto f = open_out(p);
  f << "epoch,train,val,test\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    f << e + 1 << ',' << num(h.train_loss[e]) << ',' << (e < h.val_loss.size() ? num(h.val_loss[e]) : "") << ','
      << (e < h.test_loss.size() ? num(h.test_loss[e]) : "") << '\n';
  }
}

void write_vae_curve(const fs::path& p, const VaeHistory& h) {
  auto f = open_out(p);
  f << "epoch,loss,RE,KL\n";
  for (std::size_t e = 0; e < h.loss.size(); ++e) {
    f << e + 1 << ',' << num(h.loss[e]) << ',' << num(h.re[e]) << ',' << num(h.kl[e]) << '\n';
  }
}

void cmd_fit(const RunConfig& cfg, const Paths& paths, const fs::path& data, const std::vector<FeatureMethod>& methods,
             bool dnn) {
  cfg.fit.validate();
  const LoadedPanel lp = load_panel(data, cfg);
  Manifest m = start_manifest("fit", paths, cfg);
  m.input(data);
  m.info()["train_days"] = lp.n_train;
  m.info()["test_days"] = lp.panel.days() - lp.n_train;
  fs::create_directories(paths.models());

  FitConfig fc = cfg.fit;
  fc.seed = cfg.seed;
  fc.fit_dnn = dnn;
  for (FeatureMethod fm : methods) {
    const std::string name = to_string(fm);
    std::cerr << "fit " << name << ": " << lp.n_train << " training days\n";
    const FittedPipeline fit = fit_pipeline(lp.panel, lp.n_train, fm, fc);
    std::vector<fs::path> written;
    if (fm != FeatureMethod::sam) {
      fit.features.save(paths.feature_model(fm));
      written.push_back(paths.feature_model(fm));
    }
    nn::save_params(fit.predictor.to_params(), paths.lstm(fm));
    written.push_back(paths.lstm(fm));
    write_lstm_curve(paths.reports() / (name + "_lstm_loss.csv"), fit.predictor_history);
    written.push_back(paths.reports() / (name + "_lstm_loss.csv"));
    if (fm == FeatureMethod::vae) {
      write_vae_curve(paths.reports() / "vae_loss.csv", fit.vae_history);
      written.push_back(paths.reports() / "vae_loss.csv");
    }
    if (fit.net) {
      nn::save_params(fit.net->to_params(), paths.dnn(fm));
      written.push_back(paths.dnn(fm));
      fit.penalties.write_csv(paths.reports() / (name + "_penalties.csv"));
      written.push_back(paths.reports() / (name + "_penalties.csv"));
      const auto& last = fit.penalties.rows.back();
      std::cerr << "fit " << name << ": final " << last.split << " L_S " << num(last.ls) << " L_C3 " << num(last.c3)
                << " L_C4 " << num(last.c4) << " L_C5 " << num(last.c5) << '\n';
    }
    for (const auto& p : written) m.output(p);
  }
  finish_manifest(m, "fit", paths);
}

struct Backtests {
  LoadedPanel lp;
  std::vector<PredictionRun> train, test;
};

Backtests run_models(const RunConfig& cfg, const Paths& paths, const fs::path& data, Manifest& m) {
  Backtests b{load_panel(data, cfg), {}, {}};
  m.input(data);
  std::map<FeatureMethod, StoredPipeline> loaded;
  for (const auto& name : cfg.models) {
    const ModelTag tag = parse_model_tag(name);
    PipelineModels pm;
    if (!tag.benchmark) {
      const bool need_dnn = tag.step2 == Step2::dnn;
      auto it = loaded.find(tag.features);
      if (it == loaded.end() || (need_dnn && !it->second.net)) {
        it = loaded.insert_or_assign(tag.features, load_pipeline(paths, tag.features, need_dnn, m)).first;
      }
      pm = {&it->second.features, &it->second.predictor, it->second.net ? &*it->second.net : nullptr};
    }
    b.train.push_back(run_backtest(b.lp.panel, kLongWindow, b.lp.n_train, tag, pm));
    b.test.push_back(run_backtest(b.lp.panel, b.lp.n_train, b.lp.panel.days(), tag, pm));
  }
  return b;
}

void cmd_evaluate(const RunConfig& cfg, const Paths& paths, const fs::path& data) {
  Manifest m = start_manifest("evaluate", paths, cfg);
  const Backtests b = run_models(cfg, paths, data, m);
  std::vector<SummaryRow> rows;
  for (std::size_t i = 0; i < b.test.size(); ++i) {
    rows.push_back({b.train[i].model, "train", rmse(b.train[i]), mape(b.train[i])});
    rows.push_back({b.test[i].model, "test", rmse(b.test[i]), mape(b.test[i])});
  }
  const fs::path summary = paths.reports() / "summary.csv", daily = paths.reports() / "daily.csv",
                 dm = paths.reports() / "dm.csv", viol = paths.reports() / "violations.csv";
  {
    auto f = open_out(summary);
    write_summary_csv(f, rows);
  }
  {
    auto f = open_out(daily);
    write_daily_csv(f, b.test);
  }
  {
    auto f = open_out(dm);
    write_dm_csv(f, b.test);
  }
  {
    auto f = open_out(viol);
    write_violation_csv(f, b.test);
  }
  for (const auto& p : {summary, daily, dm, viol}) m.output(p);
  finish_manifest(m, "evaluate", paths);
  for (const auto& r : rows) {
    std::cerr << "evaluate " << r.model << ' ' << r.split << ": RMSE " << num(r.rmse) << " MAPE " << num(r.mape) << '\n';
  }
}

void cmd_predict(const RunConfig& cfg, const Paths& paths, const fs::path& data) {
  Manifest m = start_manifest("predict", paths, cfg);
  const Backtests b = run_models(cfg, paths, data, m);
  const fs::path out = paths.reports() / "predictions.csv";
  {
    auto f = open_out(out);
    f << "model,date,m,tau,truth,predicted\n";
    for (const auto& run : b.test) {
      for (std::size_t t = 0; t < run.days(); ++t) {
        for (Eigen::Index k = 0; k < run.truth[t].size(); ++k) {
          f << run.model << ',' << run.dates[t] << ',' << num(run.m[t](k)) << ',' << num(run.tau[t](k)) << ','
            << num(run.truth[t](k)) << ',' << num(run.predicted[t](k)) << '\n';
        }
      }
    }
  }
  m.output(out);
  finish_manifest(m, "predict", paths);
}

void cmd_simulate(const RunConfig& cfg, const Paths& paths, const fs::path& data) {
  const FeatureMethod fm = feature_method_from_string(cfg.sim_features);
  const ErrorMode mode = cfg.error_mode == "auto" ? default_error_mode(fm) : error_mode_from_string(cfg.error_mode);
  const ErrorDistribution dist = error_distribution_from_string(cfg.error_dist);
  SimulationConfig sc = cfg.sim;
  sc.seed = cfg.seed;
  sc.scan_grid = cfg.fit.constructor.grids;
  sc.validate();

  Manifest m = start_manifest("simulate", paths, cfg);
  const LoadedPanel lp = load_panel(data, cfg);
  m.input(data);
  const StoredPipeline s = load_pipeline(paths, fm, true, m);
  const FeatureSeries all = s.features.series(lp.panel.surfaces);
  FeatureSeries train = all;
  train.values = all.values.leftCols(static_cast<Eigen::Index>(lp.n_train));
  train.dates.resize(lp.n_train);
  const ErrorModel err = fit_error_model(train, s.predictor, mode, dist);
  const Ensemble e = simulate_paths({&s.predictor, &s.features, &*s.net, &err}, all.values, lp.panel.grid, sc);

  const fs::path ens = paths.reports() / "ensemble.csv", scan = paths.reports() / "simulation_scan.csv";
  {
    auto f = open_out(ens);
    write_ensemble_csv(f, e);
  }
  {
    auto f = open_out(scan);
    f << "paths,horizon,min_cal,min_but\n"
      << e.paths.size() << ',' << e.horizon << ',' << (e.scanned ? num(e.min_cal) : "") << ','
      << (e.scanned ? num(e.min_but) : "") << '\n';
  }
  m.info()["features"] = to_string(fm);
  m.info()["error_mode"] = to_string(mode);
  m.info()["error_dist"] = to_string(dist);
  m.output(ens);
  m.output(scan);
  finish_manifest(m, "simulate", paths);
  std::cerr << "simulate: " << e.paths.size() << " paths x " << e.horizon << " steps";
  if (e.scanned) std::cerr << ", min ell_cal " << num(e.min_cal) << ", min ell_but " << num(e.min_but);
  std::cerr << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Implied-volatility surface prediction and simulation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "run", data_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--set", overrides, "Config override section.key=value (repeatable)");

  std::map<std::string, std::string> flags;  // config key -> value from subcommand flags
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic quote panel");
  flag(gen, "--days", "data.days", "Number of business days");
  flag(gen, "--ar-coef", "data.ar_coef", "Latent AR(1) coefficient");
  flag(gen, "--noise-scale", "data.noise_scale", "Stationary sd of the latent state");
  flag(gen, "--iv-noise", "data.iv_noise", "Quote noise sd");

  std::string features = "sam", step2 = "dnn";
  auto* fit = app.add_subcommand("fit", "Train feature model, LSTM and surface net");
  fit->add_option("--features", features, "sam, pca, vae or all")->capture_default_str();
  fit->add_option("--step2", step2, "dnn or dfw")->capture_default_str();
  flag(fit, "--latent-dim", "vae.latent_dim", "VAE latent dimension");
  flag(fit, "--components", "features.pca_components", "PCA components");
  flag(fit, "--lstm-epochs", "predictor.epochs", "LSTM epochs");
  flag(fit, "--dnn-epochs", "constructor.epochs", "Surface net epochs");
  flag(fit, "--lambda", "constructor.lambda", "Penalty weight");

  auto* pred = app.add_subcommand("predict", "Write test-period predictions");
  auto* eval = app.add_subcommand("evaluate", "Backtest and write the evaluation reports");
  for (auto* sub : {pred, eval}) flag(sub, "--models", "evaluate.models", "Comma-separated model tags");

  auto* sim = app.add_subcommand("simulate", "Simulate future surfaces");
  flag(sim, "--paths", "simulate.paths", "Number of paths");
  flag(sim, "--horizon", "simulate.horizon", "Steps per path");
  flag(sim, "--features", "simulate.features", "Feature method of the models to use");
  flag(sim, "--error-mode", "simulate.error_mode", "additive, multiplicative or auto");
  flag(sim, "--error-dist", "simulate.error_dist", "gaussian or bootstrap");

  for (auto* sub : {fit, pred, eval, sim}) sub->add_option("--data", data_path, "Quote CSV (default <out>/quotes.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunConfig cfg;
  if (!config_path.empty()) cfg.load(config_path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  for (const auto& [k, v] : flags) cfg.set(k, v);
  if (seed) cfg.seed = *seed;
  cfg.validate();

  const Paths paths{out_dir};
  const fs::path data = data_path.empty() ? paths.quotes() : fs::path(data_path);
  if (*gen) {
    cmd_gen_data(cfg, paths);
  } else if (*fit) {
    std::vector<FeatureMethod> methods;
    if (features == "all") {
      methods = {FeatureMethod::sam, FeatureMethod::pca, FeatureMethod::vae};
    } else {
      methods = {feature_method_from_string(features)};
    }
    if (step2 != "dnn" && step2 != "dfw") throw ConfigError("--step2 must be dnn or dfw");
    cmd_fit(cfg, paths, data, methods, step2 == "dnn");
  } else if (*pred) {
    cmd_predict(cfg, paths, data);
  } else if (*eval) {
    cmd_evaluate(cfg, paths, data);
  } else if (*sim) {
    cmd_simulate(cfg, paths, data);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  ivs::tune_allocator();
  try {
    return run(argc, argv);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

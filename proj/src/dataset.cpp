#include "ivs/dataset.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "ivs/errors.hpp"
#include "ivs/interpolation.hpp"
#include "ivs/nn/serialize.hpp"

namespace ivs {

namespace {

constexpr const char* kQuoteHeader = "date,coord_kind,coord1,tau_days,iv,rate,div_yield";
constexpr double kDaysPerYear = 365.0;

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

std::chrono::year_month_day parse_date(const std::string& s) {
  const bool shape = s.size() == 10 && s[4] == '-' && s[7] == '-' &&
                     std::all_of(s.begin(), s.end(), [](char c) { return c == '-' || (c >= '0' && c <= '9'); });
  if (!shape) throw ConfigError("bad ISO-8601 date '" + s + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{std::stoi(s.substr(0, 4))},
                                        std::chrono::month{static_cast<unsigned>(std::stoi(s.substr(5, 2)))},
                                        std::chrono::day{static_cast<unsigned>(std::stoi(s.substr(8, 2)))}};
  if (!ymd.ok()) throw ConfigError("invalid calendar date '" + s + "'");
  return ymd;
}

std::string format_date(const std::chrono::year_month_day& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_field(const std::string& s, const char* name, long line) {
  try {
    return nn::parse_double(s);
  } catch (const FormatError&) {
    throw ParseError(std::string("field '") + name + "' is not a number: '" + s + "'", line);
  }
}

void check_no_duplicates(const SurfaceSnapshot& s) {
  std::set<std::pair<double, double>> seen;
  for (const auto& p : s.points) {
    if (!seen.insert({p.m, p.tau}).second) {
      throw ValidationError("duplicate (m, tau) = (" + nn::format_double(p.m) + ", " + nn::format_double(p.tau) +
                            ") on " + s.date);
    }
  }
}

}  // namespace

void FixedGrid::validate() const {
  if (m.empty() || tau.empty()) throw ConfigError("grid levels must be non-empty");
  if (!strictly_increasing(m) || !strictly_increasing(tau)) throw ConfigError("grid levels must be strictly increasing");
  if (!(tau.front() > 0.0)) throw ConfigError("grid maturities must be positive");
}

FixedGrid default_grid() {
  FixedGrid g;
  for (double k : {0.6, 0.8, 0.9, 0.95, 0.975, 1.0, 1.025, 1.05, 1.1, 1.2, 1.3, 1.5, 1.75, 2.0}) {
    g.m.push_back(std::log(k));
  }
  for (double d : {10.0, 30.0, 60.0, 91.0, 122.0, 152.0, 182.0, 273.0, 365.0, 547.0, 730.0}) {
    g.tau.push_back(d / kDaysPerYear);
  }
  return g;
}

GriddedSurface resample_to_grid(const SurfaceSnapshot& snapshot, const FixedGrid& grid) {
  const DfwCoeffs c = fit_dfw(snapshot.points);
  GriddedSurface out{snapshot.date, Eigen::VectorXd(static_cast<Eigen::Index>(grid.size()))};
  for (std::size_t i = 0; i < grid.m.size(); ++i) {
    for (std::size_t j = 0; j < grid.tau.size(); ++j) {
      out.vols(static_cast<Eigen::Index>(grid.index(i, j))) = eval_dfw(c, grid.m[i], grid.tau[j]);
    }
  }
  return out;
}

double quote_moneyness(const QuoteSource& q, double vol) {
  const double tau = q.tau_days / kDaysPerYear;
  if (q.kind == CoordKind::moneyness) return q.coord;
  const double call_delta = q.coord < 0.0 ? q.coord + std::exp(-q.div_yield * tau) : q.coord;
  return delta_to_moneyness(call_delta, vol, tau, q.div_yield);
}

std::vector<SurfaceSnapshot> load_quotes(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kQuoteHeader) throw ParseError(std::string("expected header '") + kQuoteHeader + "'", line_no);

  std::map<std::string, SurfaceSnapshot> by_date;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw ParseError("expected 7 fields, got " + std::to_string(f.size()), line_no);
    try {
      parse_date(f[0]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }

    QuoteSource src;
    if (f[1] == "delta") {
      src.kind = CoordKind::delta;
    } else if (f[1] == "moneyness") {
      src.kind = CoordKind::moneyness;
    } else {
      throw ParseError("coord_kind must be 'delta' or 'moneyness', got '" + f[1] + "'", line_no);
    }
    src.coord = parse_field(f[2], "coord1", line_no);
    src.tau_days = parse_field(f[3], "tau_days", line_no);
    const double iv = parse_field(f[4], "iv", line_no);
    src.rate = parse_field(f[5], "rate", line_no);
    src.div_yield = parse_field(f[6], "div_yield", line_no);
    if (!(iv > 0.0) || !std::isfinite(iv)) throw ValidationError("line " + std::to_string(line_no) + ": iv must be > 0");
    if (!(src.tau_days > 0.0) || !std::isfinite(src.tau_days)) {
      throw ValidationError("line " + std::to_string(line_no) + ": tau_days must be > 0");
    }

    double m;
    try {
      m = quote_moneyness(src, iv);
    } catch (const DomainError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto& snap = by_date[f[0]];
    snap.date = f[0];
    snap.points.push_back({m, src.tau_days / kDaysPerYear, iv});
    snap.sources.push_back(src);
  }

  std::vector<SurfaceSnapshot> out;
  out.reserve(by_date.size());
  for (auto& [date, snap] : by_date) {
    check_no_duplicates(snap);
    out.push_back(std::move(snap));
  }
  return out;
}

std::vector<SurfaceSnapshot> load_quotes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open quote file '" + path.string() + "'");
  return load_quotes(in);
}

void write_quotes(std::ostream& out, const std::vector<SurfaceSnapshot>& snapshots) {
  using nn::format_double;
  out << kQuoteHeader << '\n';
  for (const auto& s : snapshots) {
    if (!s.sources.empty() && s.sources.size() != s.points.size()) {
      throw ValidationError("snapshot " + s.date + ": sources do not match points");
    }
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto& p = s.points[i];
      QuoteSource src;
      if (s.sources.empty()) {
        src.coord = p.m;
        src.tau_days = p.tau * kDaysPerYear;
      } else {
        src = s.sources[i];
      }
      out << s.date << ',' << (src.kind == CoordKind::delta ? "delta" : "moneyness") << ','
          << format_double(src.coord) << ',' << format_double(src.tau_days) << ',' << format_double(p.vol) << ','
          << format_double(src.rate) << ',' << format_double(src.div_yield) << '\n';
    }
  }
}

void write_quotes(const std::filesystem::path& path, const std::vector<SurfaceSnapshot>& snapshots) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write quote file '" + path.string() + "'");
  write_quotes(out, snapshots);
}

Panel Panel::slice(std::size_t begin, std::size_t end) const {
  Panel p;
  p.grid = grid;
  p.snapshots.assign(snapshots.begin() + static_cast<long>(begin), snapshots.begin() + static_cast<long>(end));
  p.surfaces.assign(surfaces.begin() + static_cast<long>(begin), surfaces.begin() + static_cast<long>(end));
  return p;
}

Panel build_panel(std::vector<SurfaceSnapshot> snapshots, const FixedGrid& grid) {
  grid.validate();
  std::sort(snapshots.begin(), snapshots.end(),
            [](const SurfaceSnapshot& a, const SurfaceSnapshot& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < snapshots.size(); ++i) {
    if (snapshots[i].date == snapshots[i - 1].date) throw ValidationError("duplicate date " + snapshots[i].date);
  }
  Panel p;
  p.grid = grid;
  p.surfaces.reserve(snapshots.size());
  for (const auto& s : snapshots) p.surfaces.push_back(resample_to_grid(s, grid));
  p.snapshots = std::move(snapshots);
  return p;
}

PanelSplit split_panel(const Panel& panel, const std::string& split_date) {
  const auto it = std::upper_bound(panel.snapshots.begin(), panel.snapshots.end(), split_date,
                                   [](const std::string& d, const SurfaceSnapshot& s) { return d < s.date; });
  const auto n_train = static_cast<std::size_t>(it - panel.snapshots.begin());
  if (n_train == 0 || n_train == panel.days()) {
    throw ConfigError("split at " + split_date + " leaves an empty side (" + std::to_string(n_train) + " of " +
                      std::to_string(panel.days()) + " days in training)");
  }
  return {panel.slice(0, n_train), panel.slice(n_train, panel.days())};
}

PanelSplit split_panel_ratio(const Panel& panel, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(panel.days())));
  if (n_train == 0 || n_train >= panel.days()) throw ConfigError("split ratio leaves an empty side");
  return split_panel(panel, panel.snapshots[n_train - 1].date);
}

void save_panel_cache(const std::filesystem::path& path, const FixedGrid& grid,
                      const std::vector<GriddedSurface>& surfaces) {
  nn::NetworkParams p;
  p.architecture = "panel_cache";
  p.add("m_levels", Eigen::Map<const Eigen::VectorXd>(grid.m.data(), static_cast<Eigen::Index>(grid.m.size())));
  p.add("tau_levels",
        Eigen::Map<const Eigen::VectorXd>(grid.tau.data(), static_cast<Eigen::Index>(grid.tau.size())));
  nn::Matrix vols(static_cast<Eigen::Index>(surfaces.size()), static_cast<Eigen::Index>(grid.size()));
  std::string dates;
  for (std::size_t t = 0; t < surfaces.size(); ++t) {
    if (surfaces[t].vols.size() != vols.cols()) throw ShapeError("panel cache: surface size mismatch");
    vols.row(static_cast<Eigen::Index>(t)) = surfaces[t].vols.transpose();
    if (t) dates += ',';
    dates += surfaces[t].date;
  }
  p.add("vols", std::move(vols));
  p.attributes["dates"] = dates;
  nn::save_params(p, path);
}

std::vector<GriddedSurface> load_panel_cache(const std::filesystem::path& path, const FixedGrid& expected) {
  const auto p = nn::load_params(path);
  p.expect_architecture("panel_cache");
  const auto& ml = p.tensor("m_levels");
  const auto& tl = p.tensor("tau_levels");
  FixedGrid g;
  g.m.assign(ml.data(), ml.data() + ml.size());
  g.tau.assign(tl.data(), tl.data() + tl.size());
  if (!(g == expected)) throw FormatError("panel cache was written for a different grid");
  const auto& vols = p.tensor("vols");
  std::vector<std::string> dates;
  std::istringstream ss(p.attribute("dates"));
  for (std::string d; std::getline(ss, d, ',');) dates.push_back(d);
  if (static_cast<Eigen::Index>(dates.size()) != vols.rows() || vols.cols() != static_cast<Eigen::Index>(g.size())) {
    throw FormatError("panel cache: dates and values disagree");
  }
  std::vector<GriddedSurface> out;
  for (Eigen::Index t = 0; t < vols.rows(); ++t) out.push_back({dates[static_cast<std::size_t>(t)], vols.row(t).transpose()});
  return out;
}

// SSVI -------------------------------------------------------------------

double SsviParams::theta(double tau) const {
  const double a = sigma_inf * sigma_inf;
  const double b = sigma0 * sigma0 - a;
  return a * tau - b * std::expm1(-kappa * tau) / kappa;
}

double SsviParams::theta_tau(double tau) const {
  const double a = sigma_inf * sigma_inf;
  return a + (sigma0 * sigma0 - a) * std::exp(-kappa * tau);
}

double SsviParams::phi(double th) const { return eta * std::pow(th, -gamma) * std::pow(1.0 + th, gamma - 1.0); }

double SsviParams::total_variance(double m, double tau) const {
  const double th = theta(tau);
  const double ph = phi(th);
  const double z = ph * m + rho;
  return 0.5 * th * (1.0 + rho * ph * m + std::sqrt(z * z + 1.0 - rho * rho));
}

double SsviParams::vol(double m, double tau) const { return std::sqrt(total_variance(m, tau) / tau); }

LocalDerivs<double> SsviParams::derivs(double m, double tau) const {
  const double th = theta(tau);
  const double ph = phi(th);
  const double dph = ph * (-gamma / th + (gamma - 1.0) / (1.0 + th));
  const double z = ph * m + rho;
  const double r = std::sqrt(z * z + 1.0 - rho * rho);
  const double w = 0.5 * th * (1.0 + rho * ph * m + r);
  const double w_k = 0.5 * th * (rho * ph + ph * z / r);
  const double w_kk = 0.5 * th * ph * ph * (1.0 - rho * rho) / (r * r * r);
  const double w_th = w / th + 0.5 * th * m * dph * (rho + z / r);
  const double w_tau = w_th * theta_tau(tau);

  const double s = std::sqrt(w / tau);
  LocalDerivs<double> d;
  d.vol = s;
  d.d_m = w_k / (2.0 * s * tau);
  d.d_mm = w_kk / (2.0 * s * tau) - w_k * w_k / (4.0 * s * s * s * tau * tau);
  d.d_tau = (w_tau / tau - w / (tau * tau)) / (2.0 * s);
  return d;
}

double ssvi_arbitrage_margin(const SsviParams& p) {
  constexpr int n = 41;
  double worst = std::numeric_limits<double>::infinity();
  const double lt0 = std::log(1.0 / kDaysPerYear);
  const double lt1 = std::log(3.0);
  for (int i = 0; i < n; ++i) {
    const double m = -1.5 + 3.0 * i / (n - 1);
    for (int j = 0; j < n; ++j) {
      const double tau = std::exp(lt0 + (lt1 - lt0) * j / (n - 1));
      const auto d = p.derivs(m, tau);
      worst = std::min({worst, ell_cal(d, tau), ell_but(d, m, tau)});
    }
  }
  return worst;
}

void SynthConfig::validate() const {
  if (days < 1) throw ConfigError("synth: days must be >= 1");
  if (!(std::abs(ar_coef) < 1.0)) throw ConfigError("synth: |AR coefficient| must be < 1");
  if (!(noise_scale >= 0.0)) throw ConfigError("synth: noise scale must be >= 0");
  for (const auto* b : {&sigma0, &sigma_inf, &rho, &eta}) {
    if (!(b->lo <= b->hi)) throw ConfigError("synth: parameter bounds must satisfy lo <= hi");
  }
  if (!(sigma0.lo > 0.0) || !(sigma_inf.lo > 0.0)) throw ConfigError("synth: ATM vol bounds must be positive");
  if (!(rho.lo > -1.0 && rho.hi < 1.0)) throw ConfigError("synth: rho bounds must lie in (-1, 1)");
  if (!(eta.lo > 0.0)) throw ConfigError("synth: eta bounds must be positive");
  if (!(gamma > 0.0 && gamma <= 0.5)) throw ConfigError("synth: gamma must lie in (0, 0.5]");
  if (!(kappa > 0.0)) throw ConfigError("synth: kappa must be positive");
  if (!(iv_noise >= 0.0)) throw ConfigError("synth: iv noise must be >= 0");
  for (double d : calls()) {
    if (!(d > 0.0 && d < 1.0)) throw ConfigError("synth: call deltas must lie in (0, 1)");
  }
  for (double d : puts()) {
    if (!(d > -1.0 && d < 0.0)) throw ConfigError("synth: put deltas must lie in (-1, 0)");
  }
  for (double t : maturities_days()) {
    if (!(t > 0.0)) throw ConfigError("synth: maturities must be positive");
  }
  if (calls().size() + puts().size() == 0) throw ConfigError("synth: empty quote layout");
  parse_date(start_date);
}

std::vector<double> SynthConfig::calls() const {
  if (!call_deltas.empty()) return call_deltas;
  std::vector<double> v;
  for (int i = 2; i <= 18; ++i) v.push_back(0.05 * i);
  return v;
}

std::vector<double> SynthConfig::puts() const {
  if (!put_deltas.empty()) return put_deltas;
  std::vector<double> v;
  for (int i = 18; i >= 2; --i) v.push_back(-0.05 * i);
  return v;
}

std::vector<double> SynthConfig::maturities_days() const {
  if (!tau_days.empty()) return tau_days;
  return {10, 30, 60, 91, 122, 152, 182, 273, 365, 547, 730};
}

std::vector<std::string> business_days(const std::string& start, int count) {
  using namespace std::chrono;
  sys_days d{parse_date(start)};
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < count) {
    const weekday wd{d};
    if (wd != Saturday && wd != Sunday) out.push_back(format_date(year_month_day{d}));
    d += days{1};
  }
  return out;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double map_bounds(const Bounds& b, double x) { return b.lo + (b.hi - b.lo) * logistic(x); }

SsviParams params_from_state(const SynthConfig& c, const std::array<double, 4>& x) {
  SsviParams p;
  p.sigma0 = map_bounds(c.sigma0, x[0]);
  p.sigma_inf = map_bounds(c.sigma_inf, x[1]);
  p.rho = map_bounds(c.rho, x[2]);
  p.eta = map_bounds(c.eta, x[3]);
  p.gamma = c.gamma;
  p.kappa = c.kappa;
  return p;
}

// Moneyness at which the SSVI smile has the given call delta: root of
// d1(m) - N^{-1}(e^{q tau} delta) with the vol taken from the surface itself.
double solve_delta_point(const SsviParams& p, double call_delta, double tau, double q) {
  const double z = norm_quantile(std::exp(q * tau) * call_delta);
  const auto f = [&](double m) {
    const double sd = p.vol(m, tau) * std::sqrt(tau);
    return (-m + 0.5 * sd * sd) / sd - z;
  };
  double lo = -1.0;
  double hi = 1.0;
  for (int k = 0; k < 60 && f(lo) < 0.0; ++k) lo *= 2.0;
  for (int k = 0; k < 60 && f(hi) > 0.0; ++k) hi *= 2.0;
  if (f(lo) < 0.0 || f(hi) > 0.0) throw NumericalError("synth: cannot bracket delta " + std::to_string(call_delta));
  std::uintmax_t iters = 200;
  const auto root = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(52), iters);
  return 0.5 * (root.first + root.second);
}

}  // namespace

SynthPanel synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto dates = business_days(config.start_date, config.days);
  const auto calls = config.calls();
  const auto puts = config.puts();
  const auto mats = config.maturities_days();
  const double innov_sd = config.noise_scale * std::sqrt(1.0 - config.ar_coef * config.ar_coef);

  SynthPanel out;
  std::array<double, 4> state{};
  for (int t = 0; t < config.days; ++t) {
    std::array<double, 4> next{};
    SsviParams p;
    for (int attempt = 0;; ++attempt) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double e = normal(rng);
        next[k] = t == 0 ? config.noise_scale * e : config.ar_coef * state[k] + innov_sd * e;
      }
      p = params_from_state(config, next);
      if (ssvi_arbitrage_margin(p) >= -1e-10) break;
      ++out.redraws;
      if (attempt >= config.max_redraws) throw NumericalError("synth: arbitrage scan keeps failing");
    }
    state = next;

    SurfaceSnapshot snap;
    snap.date = dates[static_cast<std::size_t>(t)];
    for (double days : mats) {
      const double tau = days / kDaysPerYear;
      auto add_quote = [&](double delta) {
        QuoteSource src{CoordKind::delta, delta, days, config.rate, config.div_yield};
        const double call_delta = delta < 0.0 ? delta + std::exp(-config.div_yield * tau) : delta;
        const double m_true = solve_delta_point(p, call_delta, tau, config.div_yield);
        double iv = p.vol(m_true, tau);
        if (config.iv_noise > 0.0) iv = std::max(0.01, iv + config.iv_noise * normal(rng));
        snap.points.push_back({quote_moneyness(src, iv), tau, iv});
        snap.sources.push_back(src);
      };
      for (double d : calls) add_quote(d);
      for (double d : puts) add_quote(d);
    }
    check_no_duplicates(snap);
    out.snapshots.push_back(std::move(snap));
    out.truth.push_back(p);
  }
  return out;
}

}  // namespace ivs

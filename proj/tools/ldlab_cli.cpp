// ldlab command line: single runs, steering sweeps, rate evaluation,
// assumption checks and config-driven sweeps.
//
// Exit codes: 0 success, 2 configuration / input error, 3 numerical divergence.

#include "ldlab/lab.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace ldlab;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicas;
};

/// Config file text with `overrides` replacing (or adding) keys.
std::string merged_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string base;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    base = ss.str();
  }
  std::ostringstream out;
  std::istringstream lines(base);
  std::string line;
  while (std::getline(lines, line)) {
    const std::string body = detail::trim(line.substr(0, line.find('#')));
    const auto eq = body.find('=');
    const std::string key = eq == std::string::npos ? "" : detail::trim(body.substr(0, eq));
    bool replaced = false;
    for (const auto& [k, v] : overrides) replaced = replaced || k == key;
    if (!replaced) out << line << '\n';
  }
  for (const auto& [k, v] : overrides) out << k << " = " << v << '\n';
  return out.str();
}

/// Writes to --out (or the config's out key) when given, stdout otherwise.
void emit(const std::string& out, const std::function<void(std::ostream&)>& write) {
  if (out.empty() || out == "-") {
    write(std::cout);
    return;
  }
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write " + out);
  write(f);
}

Params parse_params(const std::vector<std::string>& items) {
  Params p;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--param expects key=value, got " + item);
    p[item.substr(0, eq)] = detail::to_number(item.substr(0, eq), item.substr(eq + 1));
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large-deviation lab: simulate, steer and evaluate rate functions for small-noise diffusions"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Key-value config file");
  app.add_option("--out", g.out, "Output file (default stdout)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--replicas", g.replicas, "Replicas per eps");

  // simulate
  auto* sim = app.add_subcommand("simulate", "One uncontrolled run; CSV t,y_1.. (t,x_1..,y_1.. for slow-fast models)");
  std::string sim_model = "quadratic", sim_noise = "power:0.25";
  std::vector<std::string> sim_params;
  double sim_eps = 0.01, sim_horizon = 1.0;
  std::size_t sim_steps = 0, sim_stride = 1;
  sim->add_option("--model", sim_model, "Builtin model");
  sim->add_option("--param", sim_params, "Model parameter key=value");
  sim->add_option("--eps", sim_eps, "Time-scale parameter");
  sim->add_option("--noise", sim_noise, "Noise schedule (power:a, log_inv, constant:s, table:...)");
  sim->add_option("--horizon", sim_horizon, "Final time");
  sim->add_option("--steps", sim_steps, "Euler steps (default eps/10 step)");
  sim->add_option("--stride", sim_stride, "Record every n-th state");

  // steer / multiscale / laplace / sweep share config overrides
  std::string model, target, eps, plan, noise, functional, center, cap, exponent;
  auto add_overrides = [&](CLI::App* sub, bool with_plan, bool with_functional) {
    sub->add_option("--model", model, "Builtin model");
    sub->add_option("--target", target, "Target atoms, e.g. \"-1@0.3; 1@0.7\"");
    sub->add_option("--eps", eps, "Decreasing eps list, comma separated");
    sub->add_option("--noise", noise, "Noise schedule");
    if (with_plan) {
      sub->add_option("--plan", plan, "JSON plan file");
      sub->add_option("--exponent", exponent, "Delta = eps^exponent");
    }
    if (with_functional) {
      sub->add_option("--functional", functional, "zero | constant | mean_penalty | dbl_penalty");
      sub->add_option("--center", center, "mean_penalty centre (or the constant)");
      sub->add_option("--cap", cap, "Functional cap");
    }
  };
  auto* steer = app.add_subcommand("steer", "Steered single-scale runs; CSV eps,replica,cost,dbl_to_target");
  add_overrides(steer, false, false);
  auto* multi = app.add_subcommand(
      "multiscale", "Steered slow-fast runs; CSV eps,replica,u_cost,v_cost,sup_dist_xi,dbl_lambda");
  add_overrides(multi, true, false);
  auto* laplace =
      app.add_subcommand("laplace", "Laplace functional estimates; CSV eps,scale,estimate,std_error,variational,gap");
  add_overrides(laplace, false, true);
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the experiment named in the config over eps.list");
  add_overrides(sweep_cmd, true, true);

  // rate
  auto* rate = app.add_subcommand("rate", "Rate function of a measure (single-scale) or a plan (slow-fast); JSON");
  std::string rate_model = "quadratic", rate_atoms, rate_plan;
  std::vector<std::string> rate_params;
  std::size_t rate_nodes = 2000;
  rate->add_option("--model", rate_model, "Builtin model");
  rate->add_option("--param", rate_params, "Model parameter key=value");
  rate->add_option("--atoms", rate_atoms, "Measure atoms for single-scale models");
  rate->add_option("--plan", rate_plan, "JSON plan for slow-fast models");
  rate->add_option("--nodes", rate_nodes, "Quadrature steps for the plan path");

  // check
  auto* check = app.add_subcommand("check", "Grid-based assumption checks; JSON report");
  std::string check_model = "quadratic";
  std::vector<std::string> check_params;
  CheckGrid grid;
  check->add_option("--model", check_model, "Builtin model");
  check->add_option("--param", check_params, "Model parameter key=value");
  check->add_option("--lo", grid.lo, "Box lower corner");
  check->add_option("--hi", grid.hi, "Box upper corner");
  check->add_option("--points", grid.points, "Points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) {
      const AnyModel any = builtin(sim_model, parse_params(sim_params));
      const NoiseSchedule sched = NoiseSchedule::parse(sim_noise);
      const std::uint64_t seed = g.seed.value_or(1);
      if (sim_stride == 0) throw ConfigError("--stride must be positive");
      auto steps_for = [&](double max_dt) {
        return sim_steps > 0 ? TimeGrid(0.0, sim_horizon, sim_steps) : TimeGrid::with_max_step(sim_horizon, max_dt);
      };
      SimulationOptions opt;
      opt.record_stride = sim_stride;
      if (const auto* m = std::get_if<SingleScaleModel>(&any)) {
        const TimeGrid tg = steps_for(sim_eps / 10.0);
        opt.record_stride = std::min(sim_stride, tg.steps());
        const auto run = simulate_single(*m, sched, sim_eps, tg, seed, NoControl{}, opt);
        emit(g.out, [&](std::ostream& os) { write_path_csv(os, run.path); });
      } else {
        const auto& mm = std::get<MultiscaleModel>(any);
        const TimeGrid tg = steps_for(sim_eps / 10.0);
        opt.record_stride = std::min(sim_stride, tg.steps());
        const auto run = simulate_multiscale(mm, sched, sim_eps, tg, seed, NoControl{}, NoControl{}, opt);
        emit(g.out, [&](std::ostream& os) { write_path_csv(os, run.path, "x", &run.fast, "y"); });
      }
      return 0;
    }

    if (rate->parsed()) {
      const AnyModel any = builtin(rate_model, parse_params(rate_params));
      nlohmann::json result;
      if (const auto* m = std::get_if<SingleScaleModel>(&any)) {
        if (rate_atoms.empty()) throw ConfigError("rate: --atoms is required for single-scale models");
        result = eval_I1(*m, parse_atoms(rate_atoms)).to_json();
      } else {
        const auto& mm = std::get<MultiscaleModel>(any);
        if (rate_plan.empty()) throw ConfigError("rate: --plan is required for slow-fast models");
        PiecewisePlan p = load_plan(rate_plan);
        const TimeGrid tg(0.0, p.horizon(), rate_nodes);
        solve_xi_star(mm, p, tg);
        result = eval_I2(mm, p.xi_star, p.space_time()).to_json();
        result["static_cost"] = static_cost(mm, p.xi_star, p.space_time());
      }
      emit(g.out, [&](std::ostream& os) { os << result.dump(2) << '\n'; });
      return 0;
    }

    if (check->parsed()) {
      const AnyModel any = builtin(check_model, parse_params(check_params));
      const AssumptionReport report = std::holds_alternative<SingleScaleModel>(any)
                                          ? check_single(std::get<SingleScaleModel>(any), grid)
                                          : check_multiscale(std::get<MultiscaleModel>(any), grid);
      emit(g.out, [&](std::ostream& os) { os << report.to_json().dump(2) << '\n'; });
      return 0;
    }

    std::vector<std::pair<std::string, std::string>> overrides;
    if (steer->parsed()) overrides.emplace_back("experiment", "steer");
    if (multi->parsed()) overrides.emplace_back("experiment", "multiscale");
    if (laplace->parsed()) overrides.emplace_back("experiment", "laplace");
    auto set = [&](const char* key, const std::string& v) {
      if (!v.empty()) overrides.emplace_back(key, v);
    };
    set("model", model);
    set("target.atoms", target);
    set("eps.list", eps);
    set("noise", noise);
    set("plan", plan);
    set("exponent", exponent);
    set("functional", functional);
    set("functional.c", center);
    set("functional.cap", cap);
    if (g.seed) overrides.emplace_back("seed", std::to_string(*g.seed));
    if (g.replicas) overrides.emplace_back("replicas", std::to_string(*g.replicas));
    if (!g.out.empty()) overrides.emplace_back("out", g.out);
    const ExperimentConfig config = parse_config(merged_config(g.config, overrides));
    const ResultTable table = ldlab::sweep(config);
    emit(config.out, [&](std::ostream& os) { table.write_csv(os); });
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StiffnessGuardError& e) {
    std::cerr << "step too coarse: " << e.what() << '\n';
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 3;
  } catch (const OverflowError& e) {
    std::cerr << "overflow: " << e.what() << '\n';
    return 3;
  } catch (const SingularityError& e) {
    std::cerr << "singular diffusion: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

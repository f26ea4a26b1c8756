//! The `plan`, `simulate`, `sweep`, `bounds` and `oracle-check` commands.
//!
//! Every file starts with `#` comment lines holding the tool version and the
//! resolved config. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::{
    d_tilde, error_bound_general, error_bound_linear, ges_condition, ges_margin, min_d_bar,
    relative_performance_bound, running_cost_gap, Provenance, StabilityCertificate,
};
use crate::config::{CertificateConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::oracle::{check_instance, sample_instances};
use crate::planner::{budget_for_stability_exact, min_budget_for_depth_exact, plan_with_trace, ExpansionEvent};
use crate::sim::{
    check_practical_stability, closed_loop, fit_exponential_envelope, fitted_certificate,
    lyapunov_diagnostic, partial_running_costs, running_cost, verify_running_cost_bounds,
    Trajectory,
};
use crate::system::{build_system, check_state, SwitchedSystem};

/// Tool version embedded in output headers.
pub const VERSION: &str = concat!("opmin ", env!("CARGO_PKG_VERSION"));

/// Files written by a command and whether its checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub summary: String,
}

/// `{:.16e}`: 17 significant digits, round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(config: &ExperimentConfig) -> String {
    let mut h = format!("# {VERSION}\n# config:\n");
    for line in config.to_toml().lines() {
        let _ = writeln!(h, "# {line}");
    }
    h
}

struct Output<'a> {
    config: &'a ExperimentConfig,
    files: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&config.output_dir)?;
        Ok(Output { config, files: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn csv(&mut self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut file = BufWriter::new(File::create(&path)?);
        file.write_all(header(self.config).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(columns)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, format!("{}{body}", header(self.config)))?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, passed: bool, summary: String) -> CommandOutcome {
        CommandOutcome { files: self.files, passed, summary }
    }
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn state_columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn load_system(config: &ExperimentConfig) -> Result<Arc<dyn SwitchedSystem>> {
    let sys = build_system(&config.system)?;
    for x in &config.initial_states {
        check_state(sys.as_ref(), x)?;
    }
    Ok(sys)
}

fn single_budget(config: &ExperimentConfig) -> Result<u64> {
    config.budget.ok_or_else(|| Error::Config("`budget` is required".into()))
}

fn require_states(config: &ExperimentConfig) -> Result<()> {
    if config.initial_states.is_empty() {
        return Err(Error::Config("`initial_states` must not be empty".into()));
    }
    Ok(())
}

/// Single planner call. Writes `plan_result.csv`, `plan_values.csv` and,
/// with `trace = true`, `plan_trace.csv`.
pub fn cmd_plan(config: &ExperimentConfig) -> Result<CommandOutcome> {
    let sys = load_system(config)?;
    let budget = single_budget(config)?;
    let [x0] = config.initial_states.as_slice() else {
        return Err(Error::Config("`plan` needs exactly one initial state".into()));
    };
    let mut trace: Vec<ExpansionEvent> = Vec::new();
    let record = config.trace;
    let result = plan_with_trace(sys.as_ref(), x0, config.gamma, budget, |e| {
        if record {
            trace.push(*e);
        }
    })?;

    let mut out = Output::new(config)?;
    let s = &result.stats;
    out.csv(
        "plan_result.csv",
        &cols(&[
            "horizon", "value", "sequence", "first_input", "nodes_expanded", "nodes_created",
            "max_depth_reached", "open_list_peak",
        ]),
        &[vec![
            result.horizon.to_string(),
            fmt_f64(result.value),
            result.sequence.to_string(),
            result.first_input().to_string(),
            s.nodes_expanded.to_string(),
            s.nodes_created.to_string(),
            s.max_depth_reached.to_string(),
            s.open_list_peak.to_string(),
        ]],
    )?;
    let values: Vec<Vec<String>> = result
        .values_by_horizon
        .iter()
        .enumerate()
        .map(|(d, v)| vec![d.to_string(), fmt_f64(*v)])
        .collect();
    out.csv("plan_values.csv", &cols(&["horizon", "value"]), &values)?;
    if record {
        let rows: Vec<Vec<String>> = trace
            .iter()
            .map(|e| {
                vec![
                    e.iteration.to_string(),
                    e.depth.to_string(),
                    fmt_f64(e.cost),
                    e.selected.to_string(),
                    e.horizon.map(|h| h.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        out.csv("plan_trace.csv", &cols(&["iteration", "depth", "cost", "selected", "horizon"]), &rows)?;
    }
    let summary = format!("horizon {} value {}", result.horizon, fmt_f64(result.value));
    Ok(out.finish(true, summary))
}

fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<String>> {
    let partial = partial_running_costs(traj);
    (0..=traj.steps())
        .map(|k| {
            let mut row = vec![k.to_string()];
            row.extend(traj.states[k].iter().map(|&v| fmt_f64(v)));
            if k < traj.steps() {
                row.extend([
                    traj.modes[k].to_string(),
                    fmt_f64(traj.stage_costs[k]),
                    fmt_f64(traj.sigmas[k]),
                    traj.horizons[k].to_string(),
                    fmt_f64(traj.plan_values[k]),
                    fmt_f64(partial[k]),
                ]);
            } else {
                row.extend([String::new(), String::new(), fmt_f64(traj.sigmas[k])]);
                row.extend([String::new(), String::new(), String::new()]);
            }
            row
        })
        .collect()
}

fn trajectory_report(config: &ExperimentConfig, traj: &Trajectory, report: &mut String) -> Result<bool> {
    let mut passed = true;
    let _ = writeln!(report, "running_cost = {}", fmt_f64(running_cost(traj)));
    let d_bar = traj.horizons.iter().copied().min().unwrap_or(0);
    let _ = writeln!(report, "min_horizon = {d_bar}");
    let _ = writeln!(report, "max_horizon = {}", traj.horizons.iter().max().unwrap_or(&0));

    let t = &config.tolerances;
    let ps = check_practical_stability(traj, t.delta, t.big_delta);
    let _ = writeln!(
        report,
        "practical_stability: delta = {} big_delta = {} starts_within = {} entry_time = {} remains = {} peak_sigma = {}",
        fmt_f64(ps.delta),
        fmt_f64(ps.big_delta),
        ps.starts_within_big_delta,
        ps.entry_time.map_or("none".to_string(), |k| k.to_string()),
        ps.remains,
        fmt_f64(ps.peak_sigma)
    );

    let fit = match fit_exponential_envelope(traj, 0..traj.sigmas.len()) {
        Ok(fit) => {
            let _ = writeln!(
                report,
                "envelope_fit: K = {} lambda = {} residual = {} window = {}..{}",
                fmt_f64(fit.k),
                fmt_f64(fit.lambda),
                fmt_f64(fit.residual),
                fit.window_start,
                fit.window_end
            );
            Some(fit)
        }
        Err(e) => {
            let _ = writeln!(report, "envelope_fit: unavailable ({e})");
            None
        }
    };

    if let Some(bounds) = &config.bounds {
        let data = bounds.comparison_data()?;
        if data.has_storage() {
            let ly = lyapunov_diagnostic(traj, &data, d_bar)?;
            let _ = writeln!(
                report,
                "lyapunov: d_bar = {} horizons_reach_d_bar = {} violations = {}",
                ly.d_bar,
                ly.horizons_reach_d_bar,
                ly.violations.len()
            );
            for v in &ly.violations {
                let _ = writeln!(
                    report,
                    "  violation step = {} check = {} lhs = {} rhs = {}",
                    v.step,
                    v.check,
                    fmt_f64(v.lhs),
                    fmt_f64(v.rhs)
                );
            }
            passed &= ly.violations.is_empty();
        }
        let params = &bounds.linear;
        let cert = match config.certificate {
            Some(CertificateConfig::Explicit(c)) => Some(StabilityCertificate::new(
                c.gamma_star,
                c.d_bar,
                c.k,
                c.lambda,
                Provenance::UserSupplied,
                params,
            )?),
            Some(CertificateConfig::Mode(_)) => match &fit {
                Some(fit) => Some(fitted_certificate(params, fit, d_bar as u32)?),
                None => None,
            },
            None => None,
        };
        if let Some(cert) = cert {
            let chain_d_bar = match cert.provenance {
                Provenance::UserSupplied => cert.d_bar,
                Provenance::Fitted => (d_bar as u32).max(1),
            };
            match verify_running_cost_bounds(traj, params, &cert, chain_d_bar) {
                Ok(chain) => {
                    let _ = writeln!(
                        report,
                        "running_cost_chain: lower = {} running_cost = {} upper = {} w = {} tail_allowance = {} lower_holds = {} upper_holds = {} certified = {}",
                        fmt_f64(chain.lower),
                        fmt_f64(chain.running_cost),
                        fmt_f64(chain.upper),
                        fmt_f64(chain.gap_w),
                        fmt_f64(chain.tail_allowance),
                        chain.lower_holds,
                        chain.upper_holds,
                        chain.certified
                    );
                    if chain.certified {
                        passed &= chain.holds();
                    }
                }
                Err(e) => {
                    let _ = writeln!(report, "running_cost_chain: unavailable ({e})");
                }
            }
        }
    }
    Ok(passed)
}

/// Closed-loop runs, one per initial state. Writes `trajectory_<i>.csv`
/// and `simulate_report.txt`.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<CommandOutcome> {
    let sys = load_system(config)?;
    let budget = single_budget(config)?;
    require_states(config)?;
    let mut out = Output::new(config)?;
    let n = sys.state_dim();
    let mut columns = vec!["k".to_string()];
    columns.extend(state_columns("x", n));
    columns.extend(cols(&["mode", "stage_cost", "sigma", "horizon", "plan_value", "partial_running_cost"]));

    let mut report = String::new();
    let mut passed = true;
    for (i, x0) in config.initial_states.iter().enumerate() {
        let traj = closed_loop(sys.as_ref(), x0, config.gamma, budget, config.steps)?;
        out.csv(&format!("trajectory_{i}.csv"), &columns, &trajectory_rows(&traj))?;
        let x0_text: Vec<String> = x0.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(report, "[trajectory {i}] x0 = [{}] budget = {budget}", x0_text.join(", "));
        passed &= trajectory_report(config, &traj, &mut report)?;
    }
    out.text("simulate_report.txt", &report)?;
    Ok(out.finish(passed, format!("{} trajectories", config.initial_states.len())))
}

/// Running cost for every (initial state, budget) cell, in parallel.
/// Writes `sweep.csv` with one row per state and one column per budget.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<CommandOutcome> {
    let sys = load_system(config)?;
    require_states(config)?;
    let budgets = config
        .budgets
        .clone()
        .ok_or_else(|| Error::Config("`sweep` needs a `budgets` list".into()))?;
    let cells: Vec<(usize, u64)> = (0..config.initial_states.len())
        .flat_map(|i| budgets.iter().map(move |&b| (i, b)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let costs: Vec<Result<f64>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, b)| {
                closed_loop(sys.as_ref(), &config.initial_states[i], config.gamma, b, config.steps)
                    .map(|t| running_cost(&t))
            })
            .collect()
    });
    let costs: Vec<f64> = costs.into_iter().collect::<Result<_>>()?;

    let mut columns = state_columns("x", sys.state_dim());
    columns.extend(budgets.iter().map(|b| format!("budget_{b}")));
    let rows: Vec<Vec<String>> = config
        .initial_states
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut row: Vec<String> = x0.iter().map(|&v| fmt_f64(v)).collect();
            row.extend(costs[i * budgets.len()..(i + 1) * budgets.len()].iter().map(|&c| fmt_f64(c)));
            row
        })
        .collect();
    let mut out = Output::new(config)?;
    out.csv("sweep.csv", &columns, &rows)?;
    Ok(out.finish(true, format!("{} cells", cells.len())))
}

/// Certificate arithmetic. Writes `bounds_report.txt` and `bound_curves.csv`.
pub fn cmd_bounds(config: &ExperimentConfig) -> Result<CommandOutcome> {
    let sys = build_system(&config.system)?;
    let bounds = config
        .bounds
        .as_ref()
        .ok_or_else(|| Error::Config("`bounds` needs a [bounds] table".into()))?;
    let p = &bounds.linear;
    let m = sys.mode_count();
    let gamma_star = bounds.gamma_star;

    let mut r = String::new();
    let _ = writeln!(r, "a_w = {}", fmt_f64(p.a_w));
    let _ = writeln!(r, "bar_a_v = {}", fmt_f64(p.bar_a_v));
    let _ = writeln!(r, "bar_a_w = {}", fmt_f64(p.bar_a_w));
    let _ = writeln!(r, "modes = {m}");
    let _ = writeln!(r, "gamma_star = {}", fmt_f64(gamma_star));
    let _ = writeln!(r, "rate = {}", fmt_f64(p.rate()));
    let _ = writeln!(r, "coefficient = {}", fmt_f64(p.coefficient()));
    let dt = d_tilde(p);
    let _ = writeln!(r, "d_tilde = {dt}");
    match min_d_bar(gamma_star, p) {
        Ok(d) => {
            let _ = writeln!(r, "min_d_bar = {d}");
            for (label, d_bar) in [("d_tilde", dt.max(1)), ("min_d_bar", d)] {
                let _ = writeln!(
                    r,
                    "candidate {label}: d_bar = {d_bar} ges_condition = {} ges_margin = {} min_budget_for_depth = {} budget_for_stability = {}",
                    ges_condition(gamma_star, d_bar, p),
                    fmt_f64(ges_margin(gamma_star, d_bar, p)),
                    min_budget_for_depth_exact(d_bar, m)?,
                    budget_for_stability_exact(d_bar, m)?
                );
            }
        }
        Err(e) => {
            let _ = writeln!(r, "min_d_bar = infeasible ({e})");
        }
    }
    if let Some(CertificateConfig::Explicit(c)) = config.certificate {
        let cert = StabilityCertificate::unchecked(c.gamma_star, c.d_bar, c.k, c.lambda, Provenance::UserSupplied, p)?;
        let _ = writeln!(
            r,
            "certificate: K = {} lambda = {} gamma_star = {} d_bar = {} holds = {} margin = {}",
            fmt_f64(c.k),
            fmt_f64(c.lambda),
            fmt_f64(c.gamma_star),
            c.d_bar,
            cert.holds(),
            fmt_f64(cert.ges_margin)
        );
        match (
            running_cost_gap(p, &cert, config.gamma, c.d_bar),
            relative_performance_bound(p, &cert, config.gamma, c.d_bar),
        ) {
            (Ok(w), Ok(rel)) => {
                let _ = writeln!(r, "running_cost_gap = {}", fmt_f64(w));
                let _ = writeln!(r, "relative_performance_bound = {}", fmt_f64(rel));
            }
            (Err(e), _) | (_, Err(e)) => {
                let _ = writeln!(r, "running_cost_gap = unavailable ({e})");
            }
        }
    }

    let sigma = config.initial_states.first().map_or(1.0, |x| sys.measure(x));
    let data = bounds.functions.as_ref().map(|_| bounds.comparison_data()).transpose()?;
    let rows: Vec<Vec<String>> = (0..=bounds.d_max)
        .map(|d| {
            let general = match (&data, d) {
                (Some(data), 1..) => error_bound_general(sigma, config.gamma, d, data)
                    .map(fmt_f64)
                    .unwrap_or_else(|e| format!("error:{}", e.kind())),
                _ => String::new(),
            };
            vec![
                d.to_string(),
                fmt_f64(sigma),
                fmt_f64(error_bound_linear(sigma, p, d)),
                general,
                fmt_f64(ges_margin(gamma_star, d as u32, p)),
                ges_condition(gamma_star, d as u32, p).to_string(),
            ]
        })
        .collect();
    let mut out = Output::new(config)?;
    out.text("bounds_report.txt", &r)?;
    out.csv(
        "bound_curves.csv",
        &cols(&["d", "sigma", "linear_bound", "general_bound", "ges_margin", "ges_condition"]),
        &rows,
    )?;
    Ok(out.finish(true, format!("d_tilde {dt}")))
}

/// Planner against enumeration on seeded random instances. Writes `oracle_check.csv`.
pub fn cmd_oracle_check(config: &ExperimentConfig) -> Result<CommandOutcome> {
    let o = &config.oracle;
    let instances = sample_instances(config.seed, o.instances, o.max_budget);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rel = config.tolerances.oracle_rel;
    let checks: Vec<Result<_>> =
        pool.install(|| instances.par_iter().map(|i| check_instance(i, o.cap, rel)).collect());
    let mut rows = Vec::with_capacity(checks.len());
    let mut failures = 0;
    for (inst, check) in instances.iter().zip(checks) {
        let mut row = vec![
            inst.index.to_string(),
            config.seed.to_string(),
            inst.system_seed.to_string(),
            inst.modes.to_string(),
            inst.state_dim.to_string(),
            fmt_f64(inst.gamma),
            inst.budget.to_string(),
            inst.x0.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" "),
        ];
        match check {
            Ok(c) => {
                failures += usize::from(!c.passed);
                let set: Vec<String> = c.first_input_set.iter().map(|u| u.to_string()).collect();
                row.extend([
                    c.horizon.to_string(),
                    fmt_f64(c.plan_value),
                    fmt_f64(c.oracle_value),
                    fmt_f64(c.relative_error),
                    c.first_input.to_string(),
                    set.join(" "),
                    c.passed.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.extend(["false".to_string(), e.kind().to_string()]);
            }
        }
        rows.push(row);
    }
    let mut out = Output::new(config)?;
    out.csv(
        "oracle_check.csv",
        &cols(&[
            "instance", "seed", "system_seed", "modes", "state_dim", "gamma", "budget", "x0",
            "horizon", "plan_value", "oracle_value", "relative_error", "first_input",
            "first_input_set", "pass", "error",
        ]),
        &rows,
    )?;
    let total = instances.len();
    Ok(out.finish(failures == 0, format!("{} of {total} instances passed", total - failures)))
}

/// Command names accepted by [`run_command`].
pub const COMMANDS: &[&str] = &["plan", "simulate", "sweep", "bounds", "oracle-check"];

/// Dispatches a command by name.
pub fn run_command(name: &str, config: &ExperimentConfig) -> Result<CommandOutcome> {
    match name {
        "plan" => cmd_plan(config),
        "simulate" => cmd_simulate(config),
        "sweep" => cmd_sweep(config),
        "bounds" => cmd_bounds(config),
        "oracle-check" => cmd_oracle_check(config),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

/// Path of a file written by a command, for callers that know its name.
pub fn output_file(config: &ExperimentConfig, name: &str) -> PathBuf {
    Path::new(&config.output_dir).join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(body: &str, dir: &Path) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(body)
            .unwrap()
            .with_overrides(Some(dir.to_path_buf()), None, None)
            .unwrap()
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(3.5), "3.5000000000000000e0");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        let x = 2.527_525_231_651_946_7;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn plan_zero_cost_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(
            "budget = 5\ninitial_states = [[1.0, 2.0]]\ntrace = true\n[system]\nname = \"zero_cost_fixture\"\n",
            dir.path(),
        );
        let out = cmd_plan(&c).unwrap();
        assert!(out.passed);
        assert_eq!(out.files.len(), 3);
        let text = fs::read_to_string(output_file(&c, "plan_result.csv")).unwrap();
        assert!(text.starts_with(&format!("# {VERSION}\n# config:\n")));
        let row = text.lines().last().unwrap();
        assert!(row.starts_with("4,0.0000000000000000e0,1 1 1 1 1,1,"), "{row}");
    }

    #[test]
    fn plan_rejects_zero_budget() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(
            "budget = 0\ninitial_states = [[1.0, 2.0]]\n[system]\nname = \"cubic_integrator\"\n",
            dir.path(),
        );
        assert_eq!(cmd_plan(&c).unwrap_err().kind(), "precondition");
    }

    #[test]
    fn bounds_report_contents() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(
            "[system]\nname = \"cubic_integrator\"\n[bounds]\nlinear = { a_w = 1.0, bar_a_v = 14.0, bar_a_w = 0.0 }\n",
            dir.path(),
        );
        cmd_bounds(&c).unwrap();
        let r = fs::read_to_string(output_file(&c, "bounds_report.txt")).unwrap();
        assert!(r.contains("d_tilde = 71\n"));
        assert!(r.contains("min_d_bar = 72\n"));
        assert!(r.contains("33792599317408761617760221812158961"));
        assert!(r.contains("101377797952226284853280665436476884"));
    }
}

//! Scenario dispatch and file output for the command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Scenario};
use crate::equilibrium::{
    solve_equilibrium, solve_equilibrium_with, sweep_gbar, EquilibriumOptions, EquilibriumSolution,
};
use crate::error::Error;
use crate::evolution::{run_quench, step, EvolutionConfig, SystemState, TimeSeriesRecord};
use crate::memory::{extrapolate_memory, MemoryCheck, NonMarkovian};
use crate::model::{bose_einstein, kernel_c, overlaps, CounterTerm, Mode, MODES};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Model(#[from] Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

impl RunError {
    /// Process exit status: 2 configuration, 3 convergence, 4 domain, 1
    /// anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Model(e) => match e.root() {
                Error::Convergence { .. } | Error::Accuracy { .. } => 3,
                Error::Domain(_) | Error::Initialization(_) => 4,
                _ => 1,
            },
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Files created by one run, removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), RunError> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }

    fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Summary returned by [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    /// Chemical potential of the initial equilibrium, if one was solved.
    pub mu: Option<f64>,
}

/// Runs `cfg.scenario`, writing into `cfg.output_dir`. On failure every file
/// written by this call is removed.
pub fn run(cfg: &RunConfig, parallel: bool) -> Result<RunSummary, RunError> {
    cfg.params.validate()?;
    cfg.evolution.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        written: Vec::new(),
    };
    let start = Instant::now();
    match dispatch(cfg, parallel, &mut out) {
        Ok(notes) => {
            let mu = notes.mu;
            let meta = metadata(cfg, &notes, start.elapsed().as_secs_f64());
            if let Err(e) = out
                .write("config.resolved", &cfg.render())
                .and_then(|_| out.write("metadata.txt", &meta))
            {
                out.discard();
                return Err(e);
            }
            Ok(RunSummary {
                files: out.written,
                mu,
            })
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

#[derive(Default)]
struct Notes {
    mu: Option<f64>,
    lines: Vec<String>,
}

fn metadata(cfg: &RunConfig, notes: &Notes, wall: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "program = {} {}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION")
    );
    let _ = writeln!(s, "scenario = {}", cfg.scenario);
    match notes.mu {
        Some(mu) => {
            let _ = writeln!(s, "mu = {}", num(mu));
        }
        None => {
            let _ = writeln!(s, "mu = n/a");
        }
    }
    for line in &notes.lines {
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "wall_time_s = {wall:.3}");
    s
}

fn dispatch(cfg: &RunConfig, parallel: bool, out: &mut Outputs) -> Result<Notes, RunError> {
    match cfg.scenario {
        Scenario::InitEq => init_eq(cfg, out),
        Scenario::SweepG => {
            let notes = sweep(cfg, parallel, out)?;
            emit_plot_scripts_into(out)?;
            Ok(notes)
        }
        Scenario::Quench => {
            let notes = quench(cfg, out)?;
            emit_plot_scripts_into(out)?;
            Ok(notes)
        }
        Scenario::Validate => validate(cfg, out),
        Scenario::MemoryCheck => memory_check(cfg, out),
    }
}

fn initial_equilibrium(cfg: &RunConfig) -> Result<EquilibriumSolution, Error> {
    let opts = EquilibriumOptions {
        counter_term: cfg.evolution.counter_term,
        ..Default::default()
    };
    solve_equilibrium_with(&cfg.params, cfg.params.gbar_before, &opts, None)
}

fn equilibrium_header() -> Vec<String> {
    let mut h: Vec<String> = ["gbar", "mu"].map(String::from).to_vec();
    for prefix in ["omega", "n"] {
        h.extend(Mode::ALL.iter().map(|m| format!("{prefix}_{}", m.label())));
    }
    for x in ["p1", "0", "m1"] {
        h.extend(Mode::ALL.iter().map(|m| format!("abs_u_{x}_{}", m.label())));
    }
    h.push("residual".into());
    h
}

fn equilibrium_row(eq: &EquilibriumSolution) -> Vec<String> {
    let mut row = vec![num(eq.gbar), num(eq.mu)];
    row.extend(eq.omega.iter().map(|&w| num(w)));
    row.extend(eq.n0.iter().map(|&n| num(n)));
    for x in 0..MODES {
        row.extend((0..MODES).map(|l| num(eq.frame.get(x, l).norm())));
    }
    row.push(num(eq.residual));
    row
}

fn init_eq(cfg: &RunConfig, out: &mut Outputs) -> Result<Notes, RunError> {
    let eq = initial_equilibrium(cfg)?;
    out.csv(
        "equilibrium.csv",
        &equilibrium_header(),
        [equilibrium_row(&eq)],
    )?;
    Ok(Notes {
        mu: Some(eq.mu),
        lines: vec![format!("gbar = {}", num(eq.gbar))],
    })
}

fn sweep(cfg: &RunConfig, parallel: bool, out: &mut Outputs) -> Result<Notes, RunError> {
    let rows = sweep_gbar(&cfg.params, &cfg.gbar_grid(), parallel);
    let header = ["gbar", "abs_u_pm1_g", "mu", "converged"].map(String::from);
    let mut failed = 0;
    let lines: Vec<Vec<String>> = rows
        .iter()
        .map(|r| match &r.solution {
            Ok(eq) => vec![num(r.gbar), num(eq.abs_u_pm1_g()), num(eq.mu), "1".into()],
            Err(_) => {
                failed += 1;
                vec![num(r.gbar), "NaN".into(), "NaN".into(), "0".into()]
            }
        })
        .collect();
    out.csv("fig1.csv", &header, lines)?;
    let mut notes = Notes {
        mu: None,
        lines: vec![format!("failed_points = {failed}")],
    };
    for r in &rows {
        if let Err(e) = &r.solution {
            notes.lines.push(format!("# gbar = {}: {e}", r.gbar));
        }
    }
    Ok(notes)
}

fn quench(cfg: &RunConfig, out: &mut Outputs) -> Result<Notes, RunError> {
    let eq = initial_equilibrium(cfg)?;
    let traj = run_quench(&eq, &cfg.params, &cfg.evolution)?;
    let recs = &traj.records;

    let mut header = TimeSeriesRecord::header();
    let rows = recs.iter().map(|r| {
        let mut row: Vec<String> = r.values().into_iter().map(num).collect();
        row.push(r.sc_iters.to_string());
        row
    });
    out.csv("timeseries.csv", &header, rows)?;

    header = ["tJ", "abs_v_p1_g", "abs_v_m1_g"]
        .map(String::from)
        .to_vec();
    out.csv(
        "fig2.csv",
        &header,
        recs.iter()
            .map(|r| vec![num(r.t), num(r.abs_v[0][0]), num(r.abs_v[2][0])]),
    )?;

    header = ["tJ", "n_g", "n_o", "n_e"].map(String::from).to_vec();
    out.csv(
        "fig3a.csv",
        &header,
        recs.iter()
            .map(|r| vec![num(r.t), num(r.n[0]), num(r.n[1]), num(r.n[2])]),
    )?;

    let g = Mode::Ground.index();
    let n_end = traj.final_state.n[g];
    header = ["tJ", "abs_n_g_minus_final"].map(String::from).to_vec();
    out.csv(
        "fig3b.csv",
        &header,
        recs.iter()
            .map(|r| vec![num(r.t), num((r.n[g] - n_end).abs())]),
    )?;

    let fin = &traj.final_state;
    Ok(Notes {
        mu: Some(eq.mu),
        lines: vec![
            format!("t_final = {}", num(fin.t)),
            "fig3b_reference = n_g(t_max), used as the proxy for n_g(infinity)".to_string(),
            format!("n_g_t_max = {}", num(n_end)),
            format!(
                "bose_einstein_g_t_max = {}",
                num(bose_einstein(cfg.params.beta, fin.omega[g])?)
            ),
            format!("max_unitarity_drift = {:.3e}", traj.max_unitarity_drift),
        ],
    })
}

/// Gnuplot scripts for the figure CSVs present in `dir`.
pub fn emit_plot_scripts(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut out = Outputs {
        dir: dir.to_path_buf(),
        written: Vec::new(),
    };
    match emit_plot_scripts_into(&mut out) {
        Ok(()) => Ok(out.written),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn emit_plot_scripts_into(out: &mut Outputs) -> Result<(), RunError> {
    let figures: [(&str, &str); 4] = [
        (
            "fig1",
            "set xlabel 'gbar/J'\nset ylabel '|u_{+-1,g}|'\nset xrange [0:0.3]\nset yrange [0.4994:0.5]\nplot 'fig1.csv' using 1:2 with linespoints title '|u_{+-1,g}|'\n",
        ),
        (
            "fig2",
            "set xlabel 'tJ'\nset ylabel '|v_{+-1,g}(t)|'\nset yrange [0.498:0.502]\nplot 'fig2.csv' using 1:2 with lines title '|v_{+-1,g}|'\n",
        ),
        (
            "fig3a",
            "set xlabel 'tJ'\nset ylabel 'n_l(t)'\nset logscale y\nplot 'fig3a.csv' using 1:2 with lines title 'n_g', '' using 1:3 with lines title 'n_o', '' using 1:4 with lines title 'n_e'\n",
        ),
        (
            "fig3b",
            "set xlabel 'tJ'\nset ylabel '|n_g(t) - n_g(inf)|'\nset logscale y\nset yrange [1e-4:1e0]\nplot 'fig3b.csv' using 1:2 with lines title '|n_g(t) - n_g(t_max)|'\n",
        ),
    ];
    let mut any = false;
    for (name, body) in figures {
        let csv = format!("{name}.csv");
        if !out.dir.join(&csv).is_file() {
            continue;
        }
        any = true;
        let script = format!(
            "# gnuplot script for {csv}\nset datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 800,600\nset output '{name}.png'\n{body}"
        );
        out.write(&format!("{name}.gp"), &script)?;
    }
    if !any {
        return Err(RunError::MissingInput(out.dir.join("fig1.csv or fig2.csv")));
    }
    Ok(())
}

fn check(lines: &mut Vec<String>, failures: &mut usize, name: &str, ok: bool, detail: String) {
    if !ok {
        *failures += 1;
    }
    lines.push(format!(
        "{} {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    ));
}

/// Short invariant suite on the configured parameters.
fn validate(cfg: &RunConfig, out: &mut Outputs) -> Result<Notes, RunError> {
    let p = &cfg.params;
    let mut lines = Vec::new();
    let mut failures = 0;

    let eq = solve_equilibrium(p, p.gbar_before)?;
    check(
        &mut lines,
        &mut failures,
        "particle number",
        (eq.total_number() - p.n_total).abs() <= 1e-8 * p.n_total,
        format!("sum n = {}", num(eq.total_number())),
    );
    check(
        &mut lines,
        &mut failures,
        "equilibrium fixed point",
        eq.residual <= 1e-10,
        format!("residual {:.2e}", eq.residual),
    );

    let short = EvolutionConfig {
        t_max: cfg.evolution.t_max.min(10.0),
        counter_term: CounterTerm::Full,
        ..cfg.evolution
    };
    let still = SystemState::after_quench(&eq, p, p.gbar_before, CounterTerm::Full)?;
    let (next, _) = step(&still, p, p.gbar_before, &short)?;
    let moved = (0..MODES)
        .flat_map(|x| (0..MODES).map(move |l| (x, l)))
        .map(|(x, l)| (next.frame.get(x, l) - still.frame.get(x, l)).norm())
        .fold(0.0, f64::max);
    check(
        &mut lines,
        &mut failures,
        "stationarity",
        moved <= 1e-9,
        format!("one-step frame change {moved:.2e}"),
    );

    let traj = run_quench(&eq, p, &short)?;
    check(
        &mut lines,
        &mut failures,
        "unitarity",
        traj.max_unitarity_defect <= 1e-10,
        format!("max defect {:.2e}", traj.max_unitarity_defect),
    );
    check(
        &mut lines,
        &mut failures,
        "odd mode",
        traj.max_odd_deviation <= 1e-10,
        format!("max deviation {:.2e}", traj.max_odd_deviation),
    );
    let o = Mode::Odd.index();
    let drift_o = traj
        .records
        .iter()
        .map(|r| (r.n[o] - eq.n0[o]).abs())
        .fold(0.0, f64::max);
    check(
        &mut lines,
        &mut failures,
        "odd occupation",
        drift_o <= 1e-12,
        format!("max drift {drift_o:.2e}"),
    );

    let s0 = SystemState::after_quench(&eq, p, p.gbar_after, CounterTerm::Full)?;
    let mem = extrapolate_memory(
        &s0,
        p,
        p.gbar_after,
        &cfg.memory_epsilons,
        cfg.memory_k_points,
    )?;
    let err = mem.delta_omega_error();
    check(
        &mut lines,
        &mut failures,
        "memory oracle",
        err <= 0.02,
        format!("counter-term relative error {err:.2e}"),
    );

    let g = Mode::Ground.index();
    let rate = 2.0
        * std::f64::consts::PI
        * p.gbar_after.powi(2)
        * overlaps(&s0.frame).get(Mode::Ground).norm_sqr()
        * kernel_c(s0.omega[g], p.delta)?;
    check(
        &mut lines,
        &mut failures,
        "transport direction",
        traj.records.iter().all(|r| r.n.iter().all(|&n| n >= 0.0)) && rate > 0.0,
        format!("ground-mode rate {rate:.5}"),
    );

    let mut text = lines.join("\n");
    text.push('\n');
    out.write("validate.txt", &text)?;
    if failures > 0 {
        return Err(RunError::Validation(
            lines
                .into_iter()
                .filter(|l| l.starts_with("FAIL"))
                .collect(),
        ));
    }
    let count = lines.len();
    Ok(Notes {
        mu: Some(eq.mu),
        lines: vec![format!("checks = {count}")],
    })
}

fn memory_row(label: String, r: &NonMarkovian) -> Vec<String> {
    let mut row = vec![label];
    for a in 0..MODES {
        for b in a..MODES {
            let z = r.delta_omega.get(a, b);
            row.push(num(z.re));
            row.push(num(z.im));
        }
    }
    row.extend(r.n_dot.iter().map(|&x| num(x)));
    row
}

fn memory_table(check: &MemoryCheck) -> (Vec<String>, Vec<Vec<String>>) {
    let labels = ["g", "o", "e"];
    let mut header = vec!["epsilon".to_string()];
    for a in 0..MODES {
        for b in a..MODES {
            header.push(format!("re_dw_{}{}", labels[a], labels[b]));
            header.push(format!("im_dw_{}{}", labels[a], labels[b]));
        }
    }
    header.extend(labels.iter().map(|l| format!("n_dot_{l}")));
    let mut rows: Vec<Vec<String>> = check
        .rows
        .iter()
        .map(|(e, r)| memory_row(num(*e), r))
        .collect();
    rows.push(memory_row("extrapolated".into(), &check.extrapolated));
    rows.push(memory_row("markovian".into(), &check.markovian));
    (header, rows)
}

fn memory_check(cfg: &RunConfig, out: &mut Outputs) -> Result<Notes, RunError> {
    let p = &cfg.params;
    let eq = solve_equilibrium(p, p.gbar_before)?;
    let s0 = SystemState::after_quench(&eq, p, p.gbar_after, CounterTerm::Full)?;
    let check = extrapolate_memory(
        &s0,
        p,
        p.gbar_after,
        &cfg.memory_epsilons,
        cfg.memory_k_points,
    )?;
    let (header, rows) = memory_table(&check);
    out.csv("memory_check.csv", &header, rows)?;
    Ok(Notes {
        mu: Some(eq.mu),
        lines: vec![
            "state = quench start (frame and n from gbar_before, coupling gbar_after)".into(),
            format!(
                "delta_omega_max_relative_error = {:.3e}",
                check.delta_omega_error()
            ),
        ],
    })
}

//! Desk-scale presets for `vme-lab reproduce`. They shrink chain lengths and
//! ensemble sizes but keep every algorithmic constant at its default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use vme_core::model::LocalKind;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::io;
use crate::pipeline::{self, density_tag, Analysis, Context};

pub struct Preset {
    pub id: &'static str,
    pub description: &'static str,
    pub sizes: &'static [usize],
    pub densities: &'static [f64],
    pub runs: u64,
    pub operators: &'static [LocalKind],
    pub analyses: &'static [Analysis],
    check: fn(&Context) -> LabResult<Vec<Check>>,
}

/// One line of a preset's verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: String,
    pub pass: bool,
}

impl Check {
    fn new(label: String, value: String, pass: bool) -> Self {
        Self { label, value, pass }
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        id: "fig3",
        description: "diagonal error against ensemble size at N=10",
        sizes: &[10],
        densities: &[-0.5],
        runs: 96,
        operators: &[LocalKind::Z, LocalKind::X, LocalKind::ZZ],
        analyses: &[Analysis::Diag],
        check: check_fig3,
    },
    Preset {
        id: "fig4",
        description: "scrambled off-diagonal error, averaged over N=8..10",
        sizes: &[8, 9, 10],
        densities: &[-0.5],
        runs: 96,
        operators: &[LocalKind::X],
        analyses: &[Analysis::Offdiag],
        check: check_fig4,
    },
    Preset {
        id: "fig5",
        description: "subsystem trace distance for N=6, 8, 10",
        sizes: &[6, 8, 10],
        densities: &[-0.5],
        runs: 160,
        operators: &[LocalKind::Z],
        analyses: &[Analysis::Trace],
        check: check_fig5,
    },
    Preset {
        id: "fig6",
        description: "local observables across energy densities at N=8",
        sizes: &[8],
        densities: &[-1.0, -0.5, 0.0, 0.5],
        runs: 32,
        operators: &[LocalKind::Z, LocalKind::ZZ, LocalKind::X, LocalKind::XX],
        analyses: &[Analysis::Observables],
        check: check_fig6,
    },
    Preset {
        id: "fig7ab",
        description: "half-chain entanglement of ensemble states at N=10",
        sizes: &[10],
        densities: &[-0.5],
        runs: 48,
        operators: &[LocalKind::Z],
        analyses: &[Analysis::Entropy],
        check: check_fig7ab,
    },
    Preset {
        id: "fig7c",
        description: "circuit depth at convergence for N=6, 8, 10",
        sizes: &[6, 8, 10],
        densities: &[-0.5],
        runs: 24,
        operators: &[LocalKind::Z],
        analyses: &[Analysis::Resources],
        check: check_fig7c,
    },
    Preset {
        id: "fig8",
        description: "Gaussian fit of the density of states at N=12",
        sizes: &[12],
        densities: &[-0.5],
        runs: 1,
        operators: &[LocalKind::Z],
        analyses: &[Analysis::Dos],
        check: check_fig8,
    },
    Preset {
        id: "table1",
        description: "Gaussian fit of the diagonal ensemble at N=10",
        sizes: &[10],
        densities: &[-0.5],
        runs: 96,
        operators: &[LocalKind::Z],
        analyses: &[Analysis::Diag],
        check: check_table1,
    },
    Preset {
        id: "appendix",
        description: "window capture and energy moments at N=10",
        sizes: &[10],
        densities: &[-0.5],
        runs: 96,
        operators: &[LocalKind::Z, LocalKind::ZZ, LocalKind::X, LocalKind::XX],
        analyses: &[Analysis::Appendix],
        check: check_appendix,
    },
];

pub fn ids() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.id).collect()
}

pub fn find(id: &str) -> LabResult<&'static Preset> {
    PRESETS.iter().find(|p| p.id == id).ok_or_else(|| {
        LabError::Config(format!("unknown figure id `{id}`; available: {}", ids().join(", ")))
    })
}

impl Preset {
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.model.sizes = self.sizes.to_vec();
        cfg.vme.target_densities = self.densities.to_vec();
        cfg.vme.runs = self.runs;
        cfg.analysis.operators = self.operators.to_vec();
        cfg
    }

    fn needs_runs(&self) -> bool {
        self.analyses.iter().any(|a| *a != Analysis::Dos)
    }
}

#[derive(Debug)]
pub struct Reproduction {
    pub id: &'static str,
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {} {}: {}\n",
                self.id,
                if c.pass { "PASS" } else { "FAIL" },
                c.label,
                c.value
            ));
        }
        out
    }
}

/// Runs spectrum, vme and the preset's analyses, then checks the outputs
/// against the preset's bands.
pub fn reproduce(id: &str, base: &ExperimentConfig, out: Option<PathBuf>) -> LabResult<Reproduction> {
    let preset = find(id)?;
    let cfg = preset.config(base);
    cfg.validate()?;
    let out = out.unwrap_or_else(|| base.io.output_dir.join(preset.id));
    let ctx = Context::new(cfg, Some(out.clone()));
    pipeline::cmd_spectrum(&ctx)?;
    if preset.needs_runs() {
        let summary = pipeline::cmd_vme(&ctx)?;
        print!("{}", pipeline::format_vme_summary(&summary));
    }
    let files = pipeline::cmd_analyze(&ctx, preset.analyses)?;
    let checks = (preset.check)(&ctx)?;
    let rep = Reproduction {
        id: preset.id,
        out,
        files,
        checks,
    };
    io::atomic_write(&rep.out.join("verdict.txt"), rep.report().as_bytes())?;
    Ok(rep)
}

type Row = BTreeMap<String, String>;

fn rows(ctx: &Context, rel: &str) -> LabResult<Vec<Row>> {
    io::read_table(&ctx.out.join(rel))
}

fn num(row: &Row, col: &str) -> f64 {
    row.get(col).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn stem(n: usize, d: f64) -> String {
    format!("n{n:02}_{}", density_tag(d))
}

fn check_fig3(ctx: &Context) -> LabResult<Vec<Check>> {
    let mut out = Vec::new();
    for &n in &ctx.cfg.model.sizes {
        for &d in &ctx.cfg.vme.target_densities {
            for kind in &ctx.cfg.analysis.operators {
                let t = rows(ctx, &format!("diag/eps_{}_{kind}.csv", stem(n, d)))?;
                let last = t.last().ok_or_else(|| empty(ctx, "diag"))?;
                let (eps, rough) = (num(last, "eps_diag"), num(last, "delta_aprime_over_N"));
                out.push(Check::new(
                    format!("N={n} λ/N={d} A={kind} eps_diag < δ|a'|/N"),
                    format!("{eps:.3e} vs {rough:.3e} at R={}", num(last, "R")),
                    eps < rough,
                ));
            }
        }
    }
    Ok(out)
}

fn empty(ctx: &Context, what: &str) -> LabError {
    LabError::Artifact {
        path: ctx.out.clone(),
        message: format!("{what} table is empty"),
    }
}

fn check_fig4(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "offdiag/law.csv")?;
    let mut out = Vec::new();
    for r in &t {
        let slope = num(r, "small_r_slope");
        let ratio = num(r, "sigma") / num(r, "sigma_r_tilde_rms");
        let label = format!("λ/N={} A={}", num(r, "lambda_over_n"), r["operator"]);
        out.push(Check::new(
            format!("{label} small-R slope in [-1.3, -0.7]"),
            format!("{slope:.3}"),
            (-1.3..=-0.7).contains(&slope),
        ));
        out.push(Check::new(
            format!("{label} fitted σ within factor 2 of windowed σ_R"),
            format!("ratio {ratio:.3}, |c| = {:.4}", num(r, "c")),
            (0.5..=2.0).contains(&ratio),
        ));
    }
    if out.is_empty() {
        return Err(empty(ctx, "offdiag/law"));
    }
    Ok(out)
}

fn check_fig5(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "trace.csv")?;
    let mut out = Vec::new();
    for &n in &ctx.cfg.model.sizes {
        let of = |k: f64| t.iter().find(|r| num(r, "n_sites") == n as f64 && num(r, "subsystem_size") == k);
        if let (Some(a), Some(b)) = (of(1.0), of(2.0)) {
            out.push(Check::new(
                format!("N={n} mean T at |S|=1 below |S|=2"),
                format!("{:.4} vs {:.4}", num(a, "mean"), num(b, "mean")),
                num(a, "mean") < num(b, "mean"),
            ));
        }
        let holds = t
            .iter()
            .filter(|r| num(r, "n_sites") == n as f64)
            .all(|r| num(r, "mixture_inequality_holds") == 1.0);
        out.push(Check::new(
            format!("N={n} mixture inequality on every realization"),
            holds.to_string(),
            holds,
        ));
    }
    Ok(out)
}

fn check_fig6(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "observables.csv")?;
    let worst = t
        .iter()
        .map(|r| num(r, "total_error") - num(r, "diag_error") - num(r, "mean_x_hat").abs())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![Check::new(
        "total error within diagonal plus off-diagonal parts".into(),
        format!("max excess {worst:.2e} over {} rows", t.len()),
        worst <= 1e-10,
    )])
}

fn check_fig7ab(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "entropy.csv")?;
    Ok(t.iter()
        .map(|r| {
            let ratio = num(r, "s_microcanonical") / num(r, "s_ensemble");
            Check::new(
                format!("N={} λ/N={} eigenstate entropy at least 3x ensemble entropy", num(r, "n_sites"), num(r, "lambda_over_n")),
                format!("ratio {ratio:.2}"),
                ratio >= 3.0,
            )
        })
        .collect())
}

fn check_fig7c(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "resources.csv")?;
    Ok(t.iter()
        .map(|r| {
            let n = num(r, "n_sites");
            let bound = 0.26 * n + 1.0;
            let p = num(r, "mean_layers");
            Check::new(
                format!("N={n} mean p* ≤ 0.26N + 1"),
                format!("{p:.2} ± {:.2} vs {bound:.2}", num(r, "stderr_layers")),
                p <= bound && num(r, "converged") == num(r, "runs"),
            )
        })
        .collect())
}

fn check_fig8(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "dos/fit.csv")?;
    Ok(t.iter()
        .map(|r| {
            let (g, th) = (num(r, "gamma"), num(r, "gamma_theory"));
            Check::new(
                format!("N={} γ within 10% of 1 + h_x² + h_z²", num(r, "n_sites")),
                format!("{g:.4} vs {th:.4}"),
                ((g - th) / th).abs() <= 0.10,
            )
        })
        .collect())
}

fn check_table1(ctx: &Context) -> LabResult<Vec<Check>> {
    let t = rows(ctx, "diag/gaussian_fit.csv")?;
    let mut out = Vec::new();
    for r in &t {
        let (l, mu, ratio) = (num(r, "lambda_over_n"), num(r, "mu_over_n"), num(r, "sigma_over_delta"));
        let label = format!("N={} λ/N={l}", num(r, "n_sites"));
        out.push(Check::new(format!("{label} |μ/N − λ/N| ≤ 0.03"), format!("μ/N = {mu:.4}"), (mu - l).abs() <= 0.03));
        out.push(Check::new(
            format!("{label} σ/δ in [0.7, 1.0]"),
            format!("{ratio:.3}"),
            (0.7..=1.0).contains(&ratio),
        ));
    }
    Ok(out)
}

fn check_appendix(ctx: &Context) -> LabResult<Vec<Check>> {
    let capture = rows(ctx, "appendix/capture.csv")?;
    let at3: Vec<&Row> = capture.iter().filter(|r| num(r, "window_multiple") == 3.0).collect();
    let min = at3.iter().map(|r| num(r, "capture")).fold(f64::INFINITY, f64::min);
    let mut out = vec![Check::new(
        "window of 3δ captures ≥ 95% of the full off-diagonal spread".into(),
        format!("minimum {:.1}% over {} operators", 100.0 * min, at3.len()),
        min >= 0.95,
    )];
    for r in rows(ctx, "appendix/moments.csv")? {
        let l = num(&r, "lambda_over_n");
        let m = num(&r, "first_moment_mc");
        out.push(Check::new(
            format!("N={} λ/N={l} first moment has the sign of −λ", num(&r, "n_sites")),
            format!("{m:.4}"),
            l == 0.0 || m * l < 0.0,
        ));
    }
    Ok(out)
}

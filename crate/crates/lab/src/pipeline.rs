//! The stages: cached spectra, resumable variational runs, and the analyses
//! that turn them into CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vme_core::analysis::{self, EnsembleView, Flavor};
use vme_core::model::{self, local_observable, HamiltonianSpec};
use vme_core::spectral::{self, BroadenedEnsemble, Spectrum};
use vme_core::store;
use vme_core::vqa::{self, NonConvergence, VariationalRun, VmeProblem};
use vme_core::Error as CoreError;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::io::{self, CsvMeta, RunManifest, Table};

/// Sub-analyses of `vme-lab analyze`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Diag,
    Offdiag,
    Observables,
    Trace,
    Entropy,
    Resources,
    Dos,
    Appendix,
}

impl Analysis {
    pub const ALL: [Analysis; 8] = [
        Analysis::Diag,
        Analysis::Offdiag,
        Analysis::Observables,
        Analysis::Trace,
        Analysis::Entropy,
        Analysis::Resources,
        Analysis::Dos,
        Analysis::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Diag => "diag",
            Analysis::Offdiag => "offdiag",
            Analysis::Observables => "observables",
            Analysis::Trace => "trace",
            Analysis::Entropy => "entropy",
            Analysis::Resources => "resources",
            Analysis::Dos => "dos",
            Analysis::Appendix => "appendix",
        }
    }

    fn needs_runs(self) -> bool {
        self != Analysis::Dos
    }
}

/// Window multiples reported by the appendix capture table.
pub const CAPTURE_MULTIPLES: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub cache: PathBuf,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| cfg.io.output_dir.clone());
        let cache = cfg.cache_dir();
        Self { cfg, out, cache }
    }

    fn manifest(&self) -> LabResult<RunManifest> {
        RunManifest::load_or_new(&self.out, &self.cfg.hash_hex())
    }
}

pub fn density_tag(density: f64) -> String {
    format!("l{density:+.4}")
}

pub fn spectrum_path(cache: &Path, spec: &HamiltonianSpec) -> PathBuf {
    cache.join(format!("mfim-n{:02}-{}.spec", spec.n_sites, &spec.hash_hex()[..16]))
}

/// Reads the cached spectrum or computes and caches it. Returns whether it
/// was computed.
pub fn ensure_spectrum(cache: &Path, spec: &HamiltonianSpec) -> LabResult<(Spectrum, bool)> {
    let path = spectrum_path(cache, spec);
    if path.exists() {
        log::info!("spectrum N={}: cache hit {}", spec.n_sites, path.display());
        return Ok((store::read_spectrum(&path, Some(&spec.hash_bytes()))?, false));
    }
    let t = Instant::now();
    let s = Spectrum::of_model(spec)?;
    std::fs::create_dir_all(cache).map_err(|e| LabError::io(cache, e))?;
    store::write_spectrum(&path, &s)?;
    log::info!(
        "spectrum N={}: computed in {:.1} s, cached at {}",
        spec.n_sites,
        t.elapsed().as_secs_f64(),
        path.display()
    );
    Ok((s, true))
}

pub fn load_spectrum(cache: &Path, spec: &HamiltonianSpec) -> LabResult<Spectrum> {
    let path = spectrum_path(cache, spec);
    if !path.exists() {
        return Err(LabError::MissingArtifact {
            path,
            hint: "run `vme-lab spectrum` first".into(),
        });
    }
    Ok(store::read_spectrum(&path, Some(&spec.hash_bytes()))?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub n_sites: usize,
    pub path: PathBuf,
    pub computed: bool,
    pub seconds: f64,
}

pub fn cmd_spectrum(ctx: &Context) -> LabResult<Vec<SpectrumSummary>> {
    let mut out = Vec::new();
    for spec in ctx.cfg.models() {
        let t = Instant::now();
        let (_, computed) = ensure_spectrum(&ctx.cache, &spec)?;
        out.push(SpectrumSummary {
            n_sites: spec.n_sites,
            path: spectrum_path(&ctx.cache, &spec),
            computed,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    let mut manifest = ctx.manifest()?;
    let files: Vec<PathBuf> = out.iter().map(|s| s.path.clone()).collect();
    let inputs = io::hash_strings(ctx.cfg.models().map(|m| m.hash_hex()).collect::<Vec<_>>().iter().map(String::as_str));
    manifest.record(&ctx.out, "spectrum", &inputs, &files)?;
    manifest.save(&ctx.out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Converged { run: VariationalRun },
    Failed { failure: NonConvergence },
}

/// One persisted run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub runs_hash: String,
    pub n_sites: usize,
    pub target_density: f64,
    pub run_index: u64,
    pub outcome: RunOutcome,
}

pub fn runs_dir(out: &Path, n_sites: usize, density: f64) -> PathBuf {
    out.join("runs").join(format!("n{n_sites:02}")).join(density_tag(density))
}

pub fn record_path(out: &Path, n_sites: usize, density: f64, run_index: u64) -> PathBuf {
    runs_dir(out, n_sites, density).join(format!("run-{run_index:05}.json"))
}

fn read_record(path: &Path, runs_hash: &str) -> Option<RunRecord> {
    let rec: RunRecord = io::read_json(path).ok()?;
    (rec.runs_hash == runs_hash).then_some(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VmeSummary {
    pub n_sites: usize,
    pub target_density: f64,
    pub runs: u64,
    pub converged: usize,
    pub resumed: usize,
    pub mean_layers: f64,
    pub mean_cost_evals: f64,
}

fn problem_for(cfg: &ExperimentConfig, spec: &HamiltonianSpec, s: &Spectrum, density: f64) -> LabResult<VmeProblem> {
    let terms = model::build_mfim(spec)?;
    VmeProblem::new(&terms, spec.n_sites, &cfg.vme_config(density), Some((s.e_min(), s.e_max())))
        .map_err(|e| LabError::Config(e.to_string()))
}

/// Runs every missing record; existing records with the same configuration
/// are kept. Fails with a non-convergence report if any run failed.
pub fn cmd_vme(ctx: &Context) -> LabResult<Vec<VmeSummary>> {
    let cfg = &ctx.cfg;
    let runs_hash = cfg.runs_hash_hex();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut files = Vec::new();
    for spec in cfg.models() {
        let (s, _) = ensure_spectrum(&ctx.cache, &spec)?;
        for &density in &cfg.vme.target_densities {
            let problem = problem_for(cfg, &spec, &s, density)?;
            let vcfg = cfg.vme_config(density);
            let n = spec.n_sites;
            let missing: Vec<u64> = (0..cfg.vme.runs)
                .filter(|&r| read_record(&record_path(&ctx.out, n, density, r), &runs_hash).is_none())
                .collect();
            let resumed = (cfg.vme.runs as usize) - missing.len();
            if resumed > 0 {
                log::info!("N={n} λ/N={density}: {resumed} existing record(s) kept");
            }
            missing.par_iter().try_for_each(|&r| -> LabResult<()> {
                let outcome = match vqa::vme_run(&problem, &vcfg, cfg.vme.master_seed, r) {
                    Ok(run) => RunOutcome::Converged { run },
                    Err(CoreError::NonConvergence(f)) => RunOutcome::Failed { failure: *f },
                    Err(e) => return Err(e.into()),
                };
                let rec = RunRecord {
                    runs_hash: runs_hash.clone(),
                    n_sites: n,
                    target_density: density,
                    run_index: r,
                    outcome,
                };
                io::write_json(&record_path(&ctx.out, n, density, r), &rec)
            })?;
            let mut layers = Vec::new();
            let mut evals = Vec::new();
            for r in 0..cfg.vme.runs {
                let path = record_path(&ctx.out, n, density, r);
                let rec = read_record(&path, &runs_hash).ok_or_else(|| LabError::Artifact {
                    path: path.clone(),
                    message: "record vanished while running".into(),
                })?;
                files.push(path);
                match rec.outcome {
                    RunOutcome::Converged { run } => {
                        layers.push(run.layers as f64);
                        evals.push(run.cost_evals as f64);
                    }
                    RunOutcome::Failed { failure } => failures.push(format!("N={n} λ/N={density}: {failure}")),
                }
            }
            summaries.push(VmeSummary {
                n_sites: n,
                target_density: density,
                runs: cfg.vme.runs,
                converged: layers.len(),
                resumed,
                mean_layers: mean(&layers),
                mean_cost_evals: mean(&evals),
            });
        }
    }
    let mut manifest = ctx.manifest()?;
    manifest.record(&ctx.out, "vme", &runs_hash, &files)?;
    manifest.save(&ctx.out)?;
    if !failures.is_empty() {
        return Err(LabError::NonConvergence {
            count: failures.len(),
            report: failures.join("\n"),
        });
    }
    Ok(summaries)
}

pub fn format_vme_summary(rows: &[VmeSummary]) -> String {
    let mut out = String::from("    N     λ/N  converged   mean p*   mean cost evals\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>5} {:>7.3} {:>6}/{:<4} {:>8.2} {:>17.0}",
            r.n_sites, r.target_density, r.converged, r.runs, r.mean_layers, r.mean_cost_evals
        );
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// All records of one `(N, λ/N)` slice; missing records are an error.
pub fn load_records(ctx: &Context, n_sites: usize, density: f64) -> LabResult<Vec<RunRecord>> {
    let runs_hash = ctx.cfg.runs_hash_hex();
    (0..ctx.cfg.vme.runs)
        .map(|r| {
            let path = record_path(&ctx.out, n_sites, density, r);
            if !path.exists() {
                return Err(LabError::MissingArtifact {
                    path,
                    hint: "run `vme-lab vme` first".into(),
                });
            }
            read_record(&path, &runs_hash).ok_or_else(|| LabError::MissingArtifact {
                path,
                hint: "record belongs to a different configuration; rerun `vme-lab vme`".into(),
            })
        })
        .collect()
}

/// Data shared by the analyses of one `(N, λ/N)` slice.
struct Slice {
    n: usize,
    density: f64,
    spec: Arc<Spectrum>,
    runs: Vec<VariationalRun>,
    view: EnsembleView,
    target: f64,
    window: f64,
    mc: BroadenedEnsemble,
}

struct Analyzer<'a> {
    ctx: &'a Context,
    spectra: BTreeMap<usize, Arc<Spectrum>>,
    slices: BTreeMap<(usize, String), Arc<Slice>>,
    files: Vec<PathBuf>,
}

impl<'a> Analyzer<'a> {
    fn spectrum(&mut self, n: usize) -> LabResult<Arc<Spectrum>> {
        if let Some(s) = self.spectra.get(&n) {
            return Ok(s.clone());
        }
        let s = Arc::new(load_spectrum(&self.ctx.cache, &self.ctx.cfg.model(n))?);
        self.spectra.insert(n, s.clone());
        Ok(s)
    }

    fn slice(&mut self, n: usize, density: f64) -> LabResult<Arc<Slice>> {
        let key = (n, density_tag(density));
        if let Some(s) = self.slices.get(&key) {
            return Ok(s.clone());
        }
        let spec = self.spectrum(n)?;
        let records = load_records(self.ctx, n, density)?;
        let total = records.len();
        let runs: Vec<VariationalRun> = records
            .into_iter()
            .filter_map(|r| match r.outcome {
                RunOutcome::Converged { run } => Some(run),
                RunOutcome::Failed { .. } => None,
            })
            .collect();
        if runs.len() < total {
            log::warn!("N={n} λ/N={density}: {} of {total} runs failed and are left out", total - runs.len());
        }
        if runs.is_empty() {
            return Err(LabError::NonConvergence {
                count: total,
                report: format!("N={n} λ/N={density}: no converged runs to analyze"),
            });
        }
        let view = EnsembleView::from_runs(&runs)?.with_eigenbasis(&spec)?;
        let (target, window) = (runs[0].target, runs[0].window);
        let mc = spectral::broadened_ensemble(&spec, target, window)?;
        let s = Arc::new(Slice {
            n,
            density,
            spec,
            runs,
            view,
            target,
            window,
            mc,
        });
        self.slices.insert(key, s.clone());
        Ok(s)
    }

    fn slices(&mut self) -> LabResult<Vec<Arc<Slice>>> {
        let mut out = Vec::new();
        for n in self.ctx.cfg.model.sizes.clone() {
            for d in self.ctx.cfg.vme.target_densities.clone() {
                out.push(self.slice(n, d)?);
            }
        }
        Ok(out)
    }

    fn meta(&self, table: &Table, description: &str, sizes: &[usize]) -> CsvMeta {
        let cfg = &self.ctx.cfg;
        let mut seeds = BTreeMap::new();
        seeds.insert("master_seed".to_string(), cfg.vme.master_seed);
        seeds.insert("disorder_seed".to_string(), cfg.model.disorder_seed);
        seeds.insert("analysis_seed".to_string(), cfg.analysis.analysis_seed);
        CsvMeta {
            columns: table.columns.iter().map(|c| c.to_string()).collect(),
            config_hash: cfg.hash_hex(),
            seeds,
            spectrum_hashes: sizes
                .iter()
                .map(|&n| (n.to_string(), cfg.model(n).hash_hex()))
                .collect(),
            description: description.to_string(),
        }
    }

    fn emit(&mut self, rel: &str, table: &Table, description: &str, sizes: &[usize]) -> LabResult<()> {
        let path = self.ctx.out.join(rel);
        io::write_table(&path, table, &self.meta(table, description, sizes))?;
        self.files.push(io::meta_path(&path));
        self.files.push(path);
        Ok(())
    }
}

fn slice_stem(s: &Slice) -> String {
    format!("n{:02}_{}", s.n, density_tag(s.density))
}

fn diag(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut fits = Table::new(&["n_sites", "lambda_over_n", "mu_over_n", "sigma_over_delta", "runs"]);
    for s in a.slices()? {
        let energies = s.spec.energies();
        let coeffs = s.view.coefficients()?;
        let rho = analysis::diagonal_ensemble(&s.view)?;
        let fit = analysis::fit_diagonal_gaussian(&rho, energies)?;
        let nf = s.n as f64;
        fits.push(vec![
            s.n.into(),
            s.density.into(),
            (fit.mean / nf).into(),
            (fit.width / s.window).into(),
            s.runs.len().into(),
        ]);
        let fitted = spectral::broadened_ensemble(&s.spec, fit.mean, fit.width)?;
        let coarse = spectral::coarse_grain(&rho, energies, cfg.analysis.resolution_diag)?;
        let mut scatter = Table::new(&["energy_over_n", "rho_r", "rho_r_coarse", "rho_fit", "rho_mc"]);
        for i in 0..energies.len() {
            scatter.push(vec![
                (energies[i] / nf).into(),
                rho[i].into(),
                coarse[i].into(),
                fitted.weights[i].into(),
                s.mc.weights[i].into(),
            ]);
        }
        let stem = slice_stem(&s);
        a.emit(
            &format!("diag/rho_{stem}.csv"),
            &scatter,
            "diagonal ensemble per eigenstate with coarse-grained, fitted and target weights",
            &[s.n],
        )?;
        for &kind in &cfg.analysis.operators {
            let obs = local_observable(kind, s.n)?;
            let diag_a = s.spec.diagonal_elements(&obs.compile()?);
            let eth = spectral::smooth_eth_fit_values(energies, &diag_a, s.n, cfg.analysis.resolution_eth, kind.label())?;
            let rough = s.window / nf * eth.derivative(s.density).abs();
            let mut table = Table::new(&["R", "eps_diag", "chi_over_N", "delta_aprime_over_N"]);
            let mut acc = vec![0.0; energies.len()];
            for (r, c) in coeffs.iter().enumerate() {
                acc.iter_mut().zip(c).for_each(|(p, x)| *p += x * x);
                let count = (r + 1) as f64;
                let prefix: Vec<f64> = acc.iter().map(|p| p / count).collect();
                let eps = analysis::diag_error_from(&diag_a, &prefix, &s.mc);
                let mean_e: f64 = prefix.iter().zip(energies).map(|(p, e)| p * e).sum();
                let chi = analysis::chi_r(mean_e, &eth, s.target, s.n, energies, &s.mc);
                table.push(vec![(r + 1).into(), eps.into(), (chi / nf).into(), rough.into()]);
            }
            a.emit(
                &format!("diag/eps_{stem}_{}.csv", kind.label()),
                &table,
                "diagonal error against ensemble size, with the first-moment estimate and the rough bound",
                &[s.n],
            )?;
        }
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "diag/gaussian_fit.csv",
        &fits,
        "Gaussian fit of the diagonal ensemble per slice",
        &sizes,
    )
}

/// Slope of `ln y` against `ln R` over `R = 1, …, upto`.
pub fn small_r_slope(curve: &[f64], upto: usize) -> LabResult<f64> {
    let k = upto.min(curve.len());
    let xs: Vec<f64> = (1..=k).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = curve[..k].iter().map(|y| y.ln()).collect();
    Ok(vme_core::fit::polyfit(&xs, &ys, 1)?[1])
}

/// Number of leading points used for the small-R slope.
pub const SMALL_R_POINTS: usize = 10;

fn offdiag(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let sv = cfg.analysis.window_multiple;
    let mut summary = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "operator",
        "sigma_r_hat",
        "sigma_r_tilde",
        "capture",
        "mean_x_hat",
        "largest_singular_tilde",
        "window_dim",
    ]);
    let mut curves: BTreeMap<(String, &'static str), Vec<(usize, Vec<f64>, f64)>> = BTreeMap::new();
    for s in a.slices()? {
        let stem = slice_stem(&s);
        for &kind in &cfg.analysis.operators {
            let obs = local_observable(kind, s.n)?;
            let hat = analysis::build_truncated(&obs, &s.spec, s.target, s.window, sv, Flavor::Hat)?;
            let tilde = analysis::build_truncated(&obs, &s.spec, s.target, s.window, sv, Flavor::Tilde)?;
            let xh = analysis::offdiag_samples(&s.view, &hat)?.values;
            let xt = analysis::offdiag_samples(&s.view, &tilde)?.values;
            let seed = cfg.analysis.analysis_seed.wrapping_add(s.n as u64);
            let mh = analysis::scrambled_mse(&xh, cfg.analysis.scrambles, seed)?;
            let mt = analysis::scrambled_mse(&xt, cfg.analysis.scrambles, seed)?;
            let mut table = Table::new(&["R", "mse_hat", "mse_tilde"]);
            for r in 0..mh.len() {
                table.push(vec![(r + 1).into(), mh[r].into(), mt[r].into()]);
            }
            a.emit(
                &format!("offdiag/mse_{stem}_{}.csv", kind.label()),
                &table,
                "scrambled mean-square off-diagonal error against ensemble size",
                &[s.n],
            )?;
            let (eh, et) = (hat.eigenvalues()?, tilde.eigenvalues()?);
            let (lo, hi) = analysis::EIGEN_HISTOGRAM_RANGE;
            let hh = analysis::histogram(&eh, analysis::EIGEN_HISTOGRAM_BINS, lo, hi);
            let ht = analysis::histogram(&et, analysis::EIGEN_HISTOGRAM_BINS, lo, hi);
            let mut hist = Table::new(&["bin_center", "count_hat", "count_tilde"]);
            for ((c, nh), (_, nt)) in hh.iter().zip(&ht) {
                hist.push(vec![(*c).into(), (*nh).into(), (*nt).into()]);
            }
            a.emit(
                &format!("offdiag/eigs_{stem}_{}.csv", kind.label()),
                &hist,
                "eigenvalue histograms of the off-diagonal operator, full and windowed",
                &[s.n],
            )?;
            let sh = if xh.len() >= 2 { analysis::sigma_r(&xh)? } else { f64::NAN };
            let st = if xt.len() >= 2 { analysis::sigma_r(&xt)? } else { f64::NAN };
            summary.push(vec![
                s.n.into(),
                s.density.into(),
                kind.label().into(),
                sh.into(),
                st.into(),
                (st / sh).into(),
                mean(&xh).into(),
                tilde.largest_singular_value()?.into(),
                tilde.len.into(),
            ]);
            curves
                .entry((density_tag(s.density), kind.label()))
                .or_default()
                .push((s.n, mh, st));
        }
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "offdiag/summary.csv",
        &summary,
        "per-slice off-diagonal statistics",
        &sizes,
    )?;
    if sizes.len() >= 2 {
        let mut laws = Table::new(&["lambda_over_n", "operator", "sigma", "c", "small_r_slope", "sigma_r_tilde_rms"]);
        for ((tag, kind), per_n) in &curves {
            let density: f64 = tag[1..].parse().expect("tag written by density_tag");
            let avg = analysis::n_averaged_mse(&per_n.iter().map(|(_, c, _)| c.clone()).collect::<Vec<_>>())?;
            let law = analysis::fit_mse_law(&avg)?;
            let slope = small_r_slope(&avg, SMALL_R_POINTS)?;
            let rms = (per_n.iter().map(|(_, _, s)| s * s).sum::<f64>() / per_n.len() as f64).sqrt();
            laws.push(vec![
                density.into(),
                (*kind).into(),
                law.sigma.into(),
                law.c.into(),
                slope.into(),
                rms.into(),
            ]);
            let mut t = Table::new(&["R", "mse_hat_averaged", "law"]);
            for (r, y) in avg.iter().enumerate() {
                t.push(vec![(r + 1).into(), (*y).into(), law.value((r + 1) as f64).into()]);
            }
            a.emit(
                &format!("offdiag/averaged_{tag}_{kind}.csv"),
                &t,
                "size-averaged scrambled error with the fitted sigma^2/R + c^2 law",
                &sizes,
            )?;
        }
        a.emit(
            "offdiag/law.csv",
            &laws,
            "fitted sigma^2/R + c^2 law of the size-averaged scrambled error",
            &sizes,
        )?;
    }
    Ok(())
}

fn observables(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut t = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "operator",
        "ensemble",
        "diagonal_ensemble",
        "microcanonical",
        "total_error",
        "diag_error",
        "mean_x_hat",
    ]);
    for s in a.slices()? {
        let rho = analysis::diagonal_ensemble(&s.view)?;
        for &kind in &cfg.analysis.operators {
            let obs = local_observable(kind, s.n)?;
            let op = obs.compile()?;
            let diag_a = s.spec.diagonal_elements(&op);
            let est = analysis::ensemble_estimate(&s.view, &obs)?;
            let de: f64 = rho.iter().zip(&diag_a).map(|(r, d)| r * d).sum();
            let mc = spectral::mc_expectation(&s.mc, &s.spec, &obs)?;
            let eps = analysis::diag_error_from(&diag_a, &rho, &s.mc);
            t.push(vec![
                s.n.into(),
                s.density.into(),
                kind.label().into(),
                est.into(),
                de.into(),
                mc.into(),
                (est - mc).abs().into(),
                eps.into(),
                (est - de).into(),
            ]);
        }
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "observables.csv",
        &t,
        "ensemble, diagonal-ensemble and microcanonical expectation values",
        &sizes,
    )
}

fn trace(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut t = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "subsystem_size",
        "ensemble_size",
        "mean",
        "std_dev",
        "mixture_inequality_holds",
    ]);
    for s in a.slices()? {
        let size = cfg.trace_ensemble_size(s.n);
        if s.view.len() < size {
            return Err(LabError::Config(format!(
                "trace distance at N={} needs at least {size} converged runs, have {}; raise vme.runs",
                s.n,
                s.view.len()
            )));
        }
        let stats = analysis::trace_distance_sweep(
            &s.view,
            &s.spec,
            &s.mc,
            size,
            &cfg.analysis.trace_subsystem_sizes,
            cfg.analysis.realizations,
            cfg.analysis.analysis_seed.wrapping_add(s.n as u64),
        )?;
        for st in stats {
            t.push(vec![
                s.n.into(),
                s.density.into(),
                st.subsystem_size.into(),
                st.ensemble_size.into(),
                st.mean.into(),
                st.std_dev.into(),
                st.mixture_inequality_holds.into(),
            ]);
        }
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "trace.csv",
        &t,
        "subsystem trace distance to the broadened microcanonical ensemble",
        &sizes,
    )
}

fn entropy(a: &mut Analyzer) -> LabResult<()> {
    let mut t = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "s_ensemble",
        "s_ensemble_stderr",
        "s_microcanonical",
        "s_page",
    ]);
    for s in a.slices()? {
        let half = analysis::interval(s.n, 0, s.n / 2);
        let per: Vec<f64> = (0..s.view.len())
            .map(|r| analysis::entanglement_entropy(s.view.state(r), s.n, &half))
            .collect::<Result<_, _>>()?;
        let mc = analysis::mc_entropy_average(&s.mc, &s.spec, &half)?;
        t.push(vec![
            s.n.into(),
            s.density.into(),
            mean(&per).into(),
            std_err(&per).into(),
            mc.into(),
            analysis::page_entropy(s.n, s.n / 2)?.into(),
        ]);
    }
    let sizes = a.ctx.cfg.model.sizes.clone();
    a.emit(
        "entropy.csv",
        &t,
        "half-chain entanglement entropy of ensemble states and eigenstates",
        &sizes,
    )
}

fn resources(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut t = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "runs",
        "converged",
        "mean_layers",
        "stderr_layers",
        "mean_cost_evals",
        "stderr_cost_evals",
    ]);
    for &n in &cfg.model.sizes {
        for &d in &cfg.vme.target_densities {
            let recs = load_records(a.ctx, n, d)?;
            let (mut layers, mut evals) = (Vec::new(), Vec::new());
            for r in &recs {
                if let RunOutcome::Converged { run } = &r.outcome {
                    layers.push(run.layers as f64);
                    evals.push(run.cost_evals as f64);
                }
            }
            t.push(vec![
                n.into(),
                d.into(),
                recs.len().into(),
                layers.len().into(),
                mean(&layers).into(),
                std_err(&layers).into(),
                mean(&evals).into(),
                std_err(&evals).into(),
            ]);
        }
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "resources.csv",
        &t,
        "circuit depth and cost-function evaluations at convergence",
        &sizes,
    )
}

/// Window used for density-of-states broadening at `N`.
fn dos_width(cfg: &ExperimentConfig, s: &Spectrum) -> LabResult<f64> {
    Ok(vqa::window_width(
        s.n_sites(),
        Some(s.bandwidth()),
        cfg.vme.bandwidth_mode,
        cfg.vme.window_exponent,
    )?)
}

fn dos(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut fits = Table::new(&["n_sites", "width", "gamma", "gamma_theory", "center_over_dos_width", "rms_residual"]);
    let gamma_th = 1.0 + cfg.model.field_x.powi(2) + cfg.model.field_z.powi(2);
    for &n in &cfg.model.sizes {
        let s = a.spectrum(n)?;
        let w = dos_width(&cfg, &s)?;
        let fit = spectral::gaussian_dos_fit(&s, w)?;
        let big = (fit.gamma * n as f64).sqrt();
        fits.push(vec![
            n.into(),
            w.into(),
            fit.gamma.into(),
            gamma_th.into(),
            (fit.center / big).into(),
            fit.rms_residual.into(),
        ]);
        let mut t = Table::new(&["energy", "dos", "gaussian_fit"]);
        let points = spectral::DOS_GRID_POINTS;
        for i in 0..points {
            let e = s.e_min() + s.bandwidth() * i as f64 / (points - 1) as f64;
            let g = (1u64 << n) as f64 * spectral::gaussian(e - fit.center, big);
            t.push(vec![e.into(), spectral::broadened_dos(&s, w, e).into(), g.into()]);
        }
        a.emit(
            &format!("dos/dos_n{n:02}.csv"),
            &t,
            "broadened density of states with its Gaussian fit",
            &[n],
        )?;
    }
    let sizes = cfg.model.sizes.clone();
    a.emit("dos/fit.csv", &fits, "Gaussian fit of the density of states", &sizes)
}

fn appendix(a: &mut Analyzer) -> LabResult<()> {
    let cfg = a.ctx.cfg.clone();
    let mut capture = Table::new(&["n_sites", "lambda_over_n", "operator", "window_multiple", "sigma_r_tilde", "sigma_r_hat", "capture"]);
    let mut moments = Table::new(&[
        "n_sites",
        "lambda_over_n",
        "first_moment_mc",
        "first_moment_series",
        "first_moment_fit",
        "cost_ensemble_over_delta2",
        "cost_diagonal_over_delta2",
        "cost_fit_over_delta2",
    ]);
    for s in a.slices()? {
        if s.view.len() >= 2 {
            for &kind in &cfg.analysis.operators {
                let obs = local_observable(kind, s.n)?;
                let hat = analysis::build_truncated(&obs, &s.spec, s.target, s.window, 1.0, Flavor::Hat)?;
                let sh = analysis::sigma_r(&analysis::offdiag_samples(&s.view, &hat)?.values)?;
                for m in CAPTURE_MULTIPLES {
                    let st = match analysis::build_truncated(&obs, &s.spec, s.target, s.window, m, Flavor::Tilde) {
                        Ok(t) => analysis::sigma_r(&analysis::offdiag_samples(&s.view, &t)?.values)?,
                        Err(CoreError::EmptyWindow { .. }) => 0.0,
                        Err(e) => return Err(e.into()),
                    };
                    capture.push(vec![
                        s.n.into(),
                        s.density.into(),
                        kind.label().into(),
                        m.into(),
                        st.into(),
                        sh.into(),
                        (st / sh).into(),
                    ]);
                }
            }
        }
        let e = s.spec.energies();
        let w = dos_width(&cfg, &s.spec)?;
        let dfit = spectral::gaussian_dos_fit(&s.spec, w)?;
        let series = spectral::analytic_first_moment(s.target - dfit.center, s.window, (dfit.gamma * s.n as f64).sqrt())?;
        let rho = analysis::diagonal_ensemble(&s.view)?;
        let gfit = analysis::fit_diagonal_gaussian(&rho, e)?;
        let fitted = spectral::broadened_ensemble(&s.spec, gfit.mean, gfit.width)?;
        let d2 = s.window * s.window;
        let cost_ens = mean(&s.runs.iter().map(|r| r.cost).collect::<Vec<_>>());
        let cost_diag: f64 = rho.iter().zip(e).map(|(p, x)| p * (x - s.target).powi(2)).sum();
        moments.push(vec![
            s.n.into(),
            s.density.into(),
            s.mc.moment(e, s.target, 1).into(),
            series.into(),
            fitted.moment(e, s.target, 1).into(),
            (cost_ens / d2).into(),
            (cost_diag / d2).into(),
            (fitted.moment(e, s.target, 2) / d2).into(),
        ]);
    }
    let sizes = cfg.model.sizes.clone();
    a.emit(
        "appendix/capture.csv",
        &capture,
        "fraction of the full off-diagonal spread captured by energy windows of growing width",
        &sizes,
    )?;
    a.emit(
        "appendix/moments.csv",
        &moments,
        "first and second energy moments of the target, fitted and variational ensembles",
        &sizes,
    )
}

/// Runs the requested analyses, skipping those whose inputs and outputs are
/// unchanged since the last run. Returns the files written or kept.
pub fn cmd_analyze(ctx: &Context, which: &[Analysis]) -> LabResult<Vec<PathBuf>> {
    let mut which = which.to_vec();
    which.sort();
    which.dedup();
    let mut manifest = ctx.manifest()?;
    let mut analyzer = Analyzer {
        ctx,
        spectra: BTreeMap::new(),
        slices: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut all = Vec::new();
    for w in which {
        let stage = format!("analyze:{}", w.name());
        let inputs = io::hash_strings([ctx.cfg.hash_hex().as_str(), w.name()]);
        // inputs must still be present even when outputs are current
        for spec in ctx.cfg.models() {
            let path = spectrum_path(&ctx.cache, &spec);
            if !path.exists() {
                return Err(LabError::MissingArtifact {
                    path,
                    hint: "run `vme-lab spectrum` first".into(),
                });
            }
            if w.needs_runs() {
                for &d in &ctx.cfg.vme.target_densities {
                    let p = record_path(&ctx.out, spec.n_sites, d, 0);
                    if !p.exists() {
                        return Err(LabError::MissingArtifact {
                            path: p,
                            hint: "run `vme-lab vme` first".into(),
                        });
                    }
                }
            }
        }
        if manifest.is_current(&ctx.out, &stage, &inputs) {
            log::info!("{stage}: outputs are current, skipping");
            let rec = &manifest.stages[&stage];
            all.extend(rec.artifacts.iter().map(|a| ctx.out.join(&a.path)));
            continue;
        }
        let t = Instant::now();
        analyzer.files.clear();
        match w {
            Analysis::Diag => diag(&mut analyzer)?,
            Analysis::Offdiag => offdiag(&mut analyzer)?,
            Analysis::Observables => observables(&mut analyzer)?,
            Analysis::Trace => trace(&mut analyzer)?,
            Analysis::Entropy => entropy(&mut analyzer)?,
            Analysis::Resources => resources(&mut analyzer)?,
            Analysis::Dos => dos(&mut analyzer)?,
            Analysis::Appendix => appendix(&mut analyzer)?,
        }
        log::info!("{stage}: {} files in {:.1} s", analyzer.files.len(), t.elapsed().as_secs_f64());
        manifest.record(&ctx.out, &stage, &inputs, &analyzer.files)?;
        manifest.save(&ctx.out)?;
        all.append(&mut analyzer.files);
    }
    Ok(all)
}

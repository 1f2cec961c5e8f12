use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use spqr_core::diagnostics::{
    all_state_action_pairs, bias_stats, chi2_independence, detection_experiment, member_q_table, pearson_matrix,
    rowwise_uniformity_ratio, spike_histogram_from_qvalues, TestReport,
};
use spqr_core::eigen::eigvalsh_spectrum;
use spqr_core::io::{fmt_f64, write_atomic, CsvTable};
use spqr_core::rl::{ens_eval, load_checkpoint, metrics_to_csv, save_checkpoint, TrainMode};
use spqr_core::spectral::{esd, ks_distance, sample_goe, semicircle_pdf, Histogram};
use spqr_core::worlds::{generate_dataset, EpsilonGreedy, QTable};
use spqr_core::{gradcheck, Error, VERSION};
use thiserror::Error;

use crate::config::{AnalyzeConfig, DetectConfig, GradcheckConfig, RmtDemoConfig, TrainRunConfig};
use crate::svg::{plot, Series};
use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Gradcheck(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) | Error::NoConvergence(_) | Error::DegenerateSpectrum { .. } | Error::NotSymmetric(_) => {
                CliError::Numerical(e.to_string())
            }
            Error::Io(_) => CliError::Output(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn tool_version() -> String {
    format!("spqr {VERSION}")
}

/// Parses the config (or defaults) and returns it with the verbatim text to echo.
fn load<T: DeserializeOwned + Default + Serialize>(common: &Common) -> CliResult<(T, String)> {
    match &common.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg = serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok((cfg, raw))
        }
        None => {
            let cfg = T::default();
            let raw = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            Ok((cfg, raw + "\n"))
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    write_atomic(path, contents.as_ref()).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    write(path, s)
}

/// Echoes the config verbatim plus the resolved values and the tool version.
fn prepare_out(common: &Common, raw: &str, resolved: &impl Serialize) -> CliResult<()> {
    fs::create_dir_all(&common.out).map_err(|e| CliError::Output(format!("{}: {e}", common.out.display())))?;
    write(&common.out.join("config.json"), raw)?;
    write_json(
        &common.out.join("resolved_config.json"),
        &json!({ "tool_version": tool_version(), "config": resolved }),
    )?;
    write(&common.out.join("version.txt"), tool_version() + "\n")
}

pub fn rmt_demo(common: &Common) -> CliResult<()> {
    let (mut cfg, raw) = load::<RmtDemoConfig>(common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if cfg.dim == 0 || !(cfg.sigma > 0.0) || cfg.bins == 0 {
        return Err(CliError::Config("need dim >= 1, sigma > 0 and bins >= 1".into()));
    }
    prepare_out(common, &raw, &cfg)?;
    let x = sample_goe(cfg.dim, cfg.sigma, cfg.seed)?;
    let spectrum = eigvalsh_spectrum(&x.scaled(1.0 / (cfg.dim as f64).sqrt()))?;
    let ks = ks_distance(&spectrum, cfg.sigma);
    let density = esd(&spectrum);
    write(&common.out.join("esd.csv"), density.to_csv())?;

    let edge = 2.0 * cfg.sigma;
    let mut curve = CsvTable::new(&["lambda", "density"]);
    let mut points = Vec::with_capacity(512);
    for k in 0..512 {
        let l = -edge + 2.0 * edge * k as f64 / 511.0;
        let p = semicircle_pdf(l, cfg.sigma);
        curve.row_f64(&[l, p]);
        points.push((l, p));
    }
    write(&common.out.join("semicircle.csv"), curve.into_string())?;

    let lo = spectrum.eigenvalues.first().copied().unwrap_or(-edge).min(-edge);
    let hi = spectrum.eigenvalues.last().copied().unwrap_or(edge).max(edge);
    let hist = Histogram::new(&spectrum.eigenvalues, lo, hi, cfg.bins)?;
    write(&common.out.join("histogram.csv"), hist.to_csv())?;
    write_json(
        &common.out.join("ks_distance.json"),
        &json!({ "dim": cfg.dim, "sigma": cfg.sigma, "seed": cfg.seed, "ks_distance": ks }),
    )?;

    let n = spectrum.eigenvalues.len() as f64;
    let bars = hist
        .counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let (l, r) = (hist.edges[k], hist.edges[k + 1]);
            (l, r, c as f64 / (n * (r - l)))
        })
        .collect();
    let svg = plot(
        &format!("GOE spectrum, D = {}, KS = {ks:.4}", cfg.dim),
        "eigenvalue",
        "density",
        &bars,
        &[Series { label: "semicircle", color: "#d62728", points }],
    );
    write(&common.out.join("overlay.svg"), svg)
}

pub fn detect(common: &Common) -> CliResult<()> {
    let (mut cfg, raw) = load::<DetectConfig>(common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if cfg.psi_grid.is_empty() || cfg.psi_grid.iter().any(|p| !(0.0..1.0).contains(p)) || cfg.trials == 0 {
        return Err(CliError::Config("psi_grid must be nonempty within [0, 1) and trials >= 1".into()));
    }
    prepare_out(common, &raw, &cfg)?;
    let curve = detection_experiment(&cfg.psi_grid, cfg.n_dim, cfg.trials, cfg.kl_threshold, cfg.seed)?;
    write(&common.out.join("detection.csv"), curve.to_csv())?;
    write_json(&common.out.join("detection.json"), &curve)?;
    let pts = |v: &[f64]| cfg.psi_grid.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let svg = plot(
        &format!("Spike detection error, D = {}", cfg.n_dim),
        "psi",
        "Type I + Type II error",
        &Vec::new(),
        &[
            Series { label: "KL test", color: "#1f77b4", points: pts(&curve.empirical_error) },
            Series { label: "optimal (erfc)", color: "#d62728", points: pts(&curve.erfc_reference) },
        ],
    );
    write(&common.out.join("detection.svg"), svg)
}

pub fn train(common: &Common) -> CliResult<()> {
    let (mut cfg, raw) = load::<TrainRunConfig>(common)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    cfg.world.validate()?;
    let dataset = match (cfg.train.mode, &cfg.dataset) {
        (TrainMode::Offline, None) => return Err(CliError::Config("offline mode needs a dataset section".into())),
        (TrainMode::Offline, Some(spec)) => Some(generate_dataset(&cfg.world, spec.provenance, spec.size, spec.seed)?),
        (TrainMode::Online, _) => None,
    };
    prepare_out(common, &raw, &cfg)?;
    if let Some(d) = &dataset {
        write(&common.out.join("dataset.jsonl"), d.to_jsonl()?)?;
    }
    let out = spqr_core::rl::train(&cfg.train, &cfg.world, dataset.as_ref())?;
    write(&common.out.join("metrics.csv"), metrics_to_csv(&out.metrics))?;
    if let Some(abort) = &out.abort {
        write_json(&common.out.join("abort.json"), abort)?;
        return Err(CliError::Numerical(format!("training aborted at step {}: {}", abort.step, abort.reason)));
    }
    save_checkpoint(&common.out.join("checkpoint"), &out.ensemble, Some(&out.policy))?;
    Ok(())
}

pub fn analyze(common: &Common) -> CliResult<()> {
    let (mut cfg, raw) = load::<AnalyzeConfig>(common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.world.validate()?;
    if cfg.uniform_bins < 2 || cfg.indep_bins < 2 || cfg.spike_bins == 0 || cfg.n_rollouts == 0 {
        return Err(CliError::Config("need uniform_bins, indep_bins >= 2 and spike_bins, n_rollouts >= 1".into()));
    }
    let ck = load_checkpoint(Path::new(&cfg.manifest))?;
    let n_actions = cfg.world.n_actions();
    if ck.members[0].input_dim() != 2 || ck.members[0].output_dim() != n_actions {
        return Err(CliError::Config("checkpoint networks do not match the world's features and actions".into()));
    }
    prepare_out(common, &raw, &cfg)?;
    let n = ck.members.len();
    let pairs = all_state_action_pairs(&cfg.world);
    let table = member_q_table(&ck.members, &cfg.world, &pairs)?;
    let qstar = cfg.world.value_iteration(1e-10)?;
    let errors: Vec<Vec<f64>> = table
        .iter()
        .zip(&pairs)
        .map(|(row, &(s, a))| row.iter().map(|q| q - qstar.get(s, a)).collect())
        .collect();

    let mut summary = serde_json::Map::new();
    summary.insert("members".into(), json!(n));
    summary.insert("pairs".into(), json!(pairs.len()));

    if n >= 3 {
        let spikes = spike_histogram_from_qvalues(&table, cfg.seed, cfg.spike_bins)?;
        write(&common.out.join("spike_histogram.csv"), spikes.histogram.to_csv())?;
        summary.insert("spike_count".into(), json!(spikes.total_spikes));
        summary.insert("spike_rate".into(), json!(spikes.spike_rate()));
        summary.insert("collapsed_rows".into(), json!(spikes.collapsed_rows));
    }
    if n >= 2 {
        let uniform: Vec<TestReport> = table
            .iter()
            .map(|r| spqr_core::diagnostics::chi2_uniform(r, cfg.uniform_bins, cfg.alpha))
            .collect::<Result<_, _>>()?;
        write(&common.out.join("chi2_uniformity.csv"), TestReport::to_csv(&uniform))?;
        summary.insert(
            "uniformity_accept_ratio".into(),
            json!(rowwise_uniformity_ratio(&table, cfg.uniform_bins, cfg.alpha)?),
        );

        let mut indep = CsvTable::new(&["member_i", "member_j", "statistic", "dof", "p_value", "accept", "degenerate"]);
        let mut accepted = 0usize;
        let mut total = 0usize;
        let cols: Vec<Vec<f64>> = (0..n).map(|j| errors.iter().map(|r| r[j]).collect()).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let r = chi2_independence(&cols[i], &cols[j], cfg.indep_bins, cfg.alpha)?;
                accepted += usize::from(r.accept);
                total += 1;
                indep.row_str(&[
                    i.to_string(),
                    j.to_string(),
                    fmt_f64(r.statistic),
                    r.dof.to_string(),
                    fmt_f64(r.p_value),
                    u8::from(r.accept).to_string(),
                    u8::from(r.degenerate).to_string(),
                ]);
            }
        }
        write(&common.out.join("chi2_independence.csv"), indep.into_string())?;
        summary.insert("independence_accept_ratio".into(), json!(accepted as f64 / total as f64));

        let corr_q = pearson_matrix(&table)?;
        let corr_e = pearson_matrix(&errors)?;
        write(&common.out.join("pearson_q.csv"), corr_q.to_csv())?;
        write(&common.out.join("pearson_errors.csv"), corr_e.to_csv())?;
        let perfectly = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| corr_q.get(i, j) >= 1.0 - 1e-12)
            .count();
        summary.insert("mean_abs_corr_q".into(), json!(corr_q.mean_abs_off_diagonal()));
        summary.insert("mean_abs_corr_errors".into(), json!(corr_e.mean_abs_off_diagonal()));
        summary.insert("perfectly_correlated_pairs".into(), json!(perfectly));
        summary.insert("undefined_correlations".into(), json!(corr_q.any_undefined()));
    }

    // greedy policy on the ensemble's evaluation values drives the Monte-Carlo returns
    let all_states: Vec<(usize, usize)> = (0..cfg.world.n_states())
        .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
        .collect();
    let full = member_q_table(&ck.members, &cfg.world, &all_states)?;
    let mut greedy = QTable::zeros(cfg.world.n_states(), n_actions);
    for (k, row) in full.iter().enumerate() {
        greedy.values[k] = ens_eval(cfg.eval_rule, row)?;
    }
    let policy = EpsilonGreedy { q: &greedy, epsilon: 0.0 };
    let bias = bias_stats(&table, cfg.eval_rule, &cfg.world, &policy, &pairs, cfg.n_rollouts, cfg.seed)?;
    write_json(&common.out.join("bias.json"), &bias)?;
    write_json(&common.out.join("summary.json"), &serde_json::Value::Object(summary))
}

pub fn gradcheck(common: &Common) -> CliResult<()> {
    let (mut cfg, raw) = load::<GradcheckConfig>(common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    prepare_out(common, &raw, &cfg)?;
    let report = gradcheck::run_all(cfg.seed)?;
    write_json(&common.out.join("gradcheck.json"), &report)?;
    for s in &report.suites {
        println!(
            "{:<18} cases {:>3}  max rel err {:.3e}  tol {:.0e}  {}",
            s.name,
            s.cases,
            s.max_rel_error,
            s.tolerance,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        Err(CliError::Gradcheck(failed.join(", ")))
    }
}

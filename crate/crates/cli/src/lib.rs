//! Command implementations behind the `empg` binary.
//!
//! Exit-code contract: 0 on success, 1 when a verification or acceptance
//! check fails, 2 on usage or configuration errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use empg::analysis::{
    compare_runs, curve_table_tsv, entropy_change_by_percentile, final_means_by_label,
    percentile_bins_tsv, RunRef,
};
use empg::config::{parse_config_with_overrides, parse_override};
use empg::entropy::EntropyLedger;
use empg::model::{Ablation, AdvantageRecord, Batch, RunConfig};
use empg::modulation::{finalize_records, modulate, ModulationParams};
use empg::policy::FactoredStepPolicy;
use empg::theory::{
    expected_norm_sq, gradient_assembly_identity, monte_carlo_norm_sq, per_action_norm_sq,
    random_simplex, renyi2, PolicyProbe,
};
use empg::trainer::{load_metrics, train, RunSummary};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Command failure carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_CHECK_FAILED,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CmdError {}

pub type CmdResult<T> = Result<T, CmdError>;

// --- verify ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Random simplex policies for the identity sweeps.
    pub probes: usize,
    /// Monte Carlo sample count per probe.
    pub samples: usize,
    pub seed: u64,
    /// Test hook: additive perturbation of the expected-norm value inside
    /// the identity check; any nonzero value must make verification fail.
    pub inject_fault: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            probes: 1000,
            samples: 100_000,
            seed: 0,
            inject_fault: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn row(name: &'static str, max_error: f64, tolerance: f64) -> CheckRow {
    CheckRow {
        name,
        max_error,
        tolerance,
        pass: max_error < tolerance,
    }
}

/// Runs the theory checks and returns one row per check.
pub fn verify_report(opts: &VerifyOptions) -> CmdResult<Vec<CheckRow>> {
    if opts.probes == 0 {
        return Err(CmdError::usage("--probes must be at least 1"));
    }
    if opts.samples == 0 {
        return Err(CmdError::usage("--samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();

    // Per-action lemma against explicitly built score vectors.
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dim = 2 + (rng.random::<u32>() % 31) as usize;
        let probe = PolicyProbe::new(random_simplex(dim, &mut rng)).unwrap();
        let k = (rng.random::<u32>() as usize) % dim;
        let explicit: f64 = empg::policy::score_vector(probe.pi(), k)
            .iter()
            .map(|s| s * s)
            .sum();
        worst = worst.max((per_action_norm_sq(&probe, k).unwrap() - explicit).abs());
    }
    rows.push(row("lemma vs explicit score vector", worst, 1e-12));

    // Expected norm = 1 - exp(-H2) and = probability-weighted enumeration.
    let mut worst_renyi = 0.0f64;
    let mut worst_enum = 0.0f64;
    for i in 0..opts.probes {
        let dim = 2 + (i % 63);
        let probe = PolicyProbe::new(random_simplex(dim, &mut rng)).unwrap();
        let expected = expected_norm_sq(&probe) + opts.inject_fault;
        worst_renyi = worst_renyi.max((expected - (1.0 - (-renyi2(&probe)).exp())).abs());
        let enumerated: f64 = (0..dim)
            .map(|k| probe.pi()[k] * per_action_norm_sq(&probe, k).unwrap())
            .sum();
        worst_enum = worst_enum.max((expected - enumerated).abs());
    }
    rows.push(row("expected norm vs 1 - exp(-renyi2)", worst_renyi, 1e-10));
    rows.push(row("expected norm vs enumeration", worst_enum, 1e-12));

    // Strict monotone coupling between the Renyi-2 entropy and the norm.
    let mut violations = 0usize;
    for _ in 0..500 {
        let a = PolicyProbe::new(random_simplex(
            2 + (rng.random::<u32>() % 15) as usize,
            &mut rng,
        ))
        .unwrap();
        let b = PolicyProbe::new(random_simplex(
            2 + (rng.random::<u32>() % 15) as usize,
            &mut rng,
        ))
        .unwrap();
        if renyi2(&a) > renyi2(&b) + 1e-12 && expected_norm_sq(&a) <= expected_norm_sq(&b) {
            violations += 1;
        }
    }
    rows.push(row("monotone coupling violations", violations as f64, 0.5));

    // Monte Carlo estimate against the closed form, in standard-error units.
    let mut worst_sigma = 0.0f64;
    for _ in 0..20 {
        let dim = 2 + (rng.random::<u32>() % 7) as usize;
        let probe = PolicyProbe::new(random_simplex(dim, &mut rng)).unwrap();
        let (est, se) = monte_carlo_norm_sq(&probe, opts.samples, &mut rng);
        let gap = (est - expected_norm_sq(&probe)).abs();
        worst_sigma = worst_sigma.max(gap / se.max(1e-12));
    }
    rows.push(row("monte carlo gap (std errors)", worst_sigma, 3.0));

    // Analytic scores against central finite differences.
    let mut worst_fd = 0.0f64;
    for _ in 0..100 {
        let state = empg::model::StateId(0);
        let vocab = [2 + (rng.random::<u32>() % 4) as usize];
        let mut policy = FactoredStepPolicy::uniform(&[state], &vocab);
        for z in policy.logits_mut(state, 0).unwrap() {
            *z = rng.random::<f64>() * 6.0 - 3.0;
        }
        let (action, _, _) = policy.sample_step(state, &mut rng).unwrap();
        let analytic = policy.score_logits(state, &action).unwrap();
        let h = 1e-5;
        for (index, &a) in analytic[0].iter().enumerate() {
            let mut plus = policy.clone();
            plus.logits_mut(state, 0).unwrap()[index] += h;
            let mut minus = policy.clone();
            minus.logits_mut(state, 0).unwrap()[index] -= h;
            let fd = (plus.log_prob(state, &action).unwrap()
                - minus.log_prob(state, &action).unwrap())
                / (2.0 * h);
            worst_fd = worst_fd.max((fd - a).abs());
        }
    }
    rows.push(row("score vs finite differences", worst_fd, 1e-6));

    // Two-route assembly of the modulated gradient on random pipelines.
    let mut worst_assembly = 0.0f64;
    for _ in 0..50 {
        let spec = empg::envs::EnvSpec::preset("fork3x3").unwrap();
        let states = spec.observation_ids();
        let mut policy = FactoredStepPolicy::uniform(&states, &spec.vocab_sizes());
        for &s in &states {
            for p in 0..2 {
                for z in policy.logits_mut(s, p).unwrap() {
                    *z = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        let mut trajectories = Vec::new();
        for i in 0..4u32 {
            let mut env = spec.reset(rng.random()).unwrap();
            let mut steps = Vec::new();
            while !env.state().done {
                let obs = env.state().observation_id;
                let (action, entropies, lp) = policy.sample_step(obs, &mut rng).unwrap();
                env.step(&action).unwrap();
                steps.push(empg::model::Step {
                    state: obs,
                    action,
                    token_entropies: entropies,
                    old_log_prob: lp,
                });
            }
            trajectories.push(empg::model::Trajectory {
                task_id: 0,
                group_id: 0,
                seed: i as u64,
                steps,
                terminal_reward: env.terminal_reward().unwrap(),
            });
        }
        let batch = Batch::from_trajectories(trajectories);
        let a_outcome: BTreeMap<usize, f64> = (0..4)
            .map(|i| (i, rng.random::<f64>() * 4.0 - 2.0))
            .collect();
        let h: Vec<f64> = batch
            .trajectories
            .iter()
            .flat_map(|t| &t.steps)
            .map(|s| empg::entropy::step_entropy(&s.token_entropies).unwrap())
            .collect();
        let ledger = EntropyLedger::build(h, 1e-8).unwrap();
        let params = ModulationParams::new(1.0, 1.0, 0.1, 1e-8);
        let mut records = modulate(&batch, &a_outcome, &ledger, &params, Ablation::Full).unwrap();
        finalize_records(&mut records).unwrap();
        let diff = gradient_assembly_identity(&batch, &records, &policy, params.zeta).unwrap();
        worst_assembly = worst_assembly.max(diff);
    }
    rows.push(row("gradient assembly identity", worst_assembly, 1e-10));

    Ok(rows)
}

pub fn format_verify_table(rows: &[CheckRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<38} {:>12} {:>12} {:>8}",
        "check", "max error", "tolerance", "status"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<38} {:>12.3e} {:>12.0e} {:>8}",
            r.name,
            r.max_error,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    out
}

// --- run management -----------------------------------------------------------

/// Output root: explicit flag, then EMPG_OUT_ROOT, then ./runs.
pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("EMPG_OUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn load_config(
    path: &Path,
    sets: &[String],
    seed_override: Option<u64>,
) -> CmdResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::usage(format!("cannot read {}: {e}", path.display())))?;
    let overrides = sets
        .iter()
        .map(|s| parse_override(s).map_err(|e| CmdError::usage(e.to_string())))
        .collect::<CmdResult<Vec<_>>>()?;
    let mut cfg = parse_config_with_overrides(&text, &overrides)
        .map_err(|e| CmdError::usage(e.to_string()))?;
    if let Some(seed) = seed_override {
        cfg.seed_list = vec![seed];
    }
    Ok(cfg)
}

fn train_mapped(cfg: &RunConfig, seed: u64, dir: &Path) -> CmdResult<RunSummary> {
    train(cfg, seed, dir).map_err(|e| match e {
        empg::trainer::TrainError::DirectoryNotEmpty(_)
        | empg::trainer::TrainError::InvalidConfig(_) => CmdError::usage(e.to_string()),
        other => CmdError::failure(other.to_string()),
    })
}

/// `train`: one run directory per seed under `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    for &seed in &cfg.seed_list {
        let dir = out.join(format!("seed_{seed}"));
        println!("run: {}", dir.display());
        let summary = train_mapped(cfg, seed, &dir)?;
        if let Some(last) = summary.metrics.last() {
            println!(
                "  {} iterations, final success_rate {:.4}",
                summary.metrics.len(),
                last.success_rate
            );
        }
        summaries.push(summary);
    }
    Ok(summaries)
}

/// `ablate`: run all four variants on identical seeds and emit the
/// comparison table.
pub fn cmd_ablate(base: &RunConfig, out: &Path, metric: &str) -> CmdResult<PathBuf> {
    let mut runs = Vec::new();
    for ablation in Ablation::ALL {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        for &seed in &base.seed_list {
            let dir = out.join(ablation.name()).join(format!("seed_{seed}"));
            println!("run: {}", dir.display());
            train_mapped(&cfg, seed, &dir)?;
            runs.push(RunRef {
                label: ablation.name().to_string(),
                dir,
            });
        }
    }
    let table = compare_runs(&runs, metric).map_err(|e| CmdError::failure(e.to_string()))?;
    let table_path = out.join(format!("ablation_{metric}.tsv"));
    fs::write(&table_path, curve_table_tsv(&table))
        .map_err(|e| CmdError::failure(e.to_string()))?;
    println!("table: {}", table_path.display());
    for (label, seeds) in final_means_by_label(&table) {
        let mean: f64 = seeds.iter().map(|(_, m)| m).sum::<f64>() / seeds.len() as f64;
        println!(
            "  {label}: final-window mean {mean:.4} over {} seed(s)",
            seeds.len()
        );
    }
    Ok(table_path)
}

/// `analyze` with `--run label=dir` pairs: learning-curve table.
pub fn cmd_analyze_curves(
    run_args: &[String],
    metric: &str,
    out: Option<&Path>,
) -> CmdResult<String> {
    let runs = run_args
        .iter()
        .map(|arg| {
            let (label, dir) = arg
                .split_once('=')
                .ok_or_else(|| CmdError::usage(format!("--run wants label=dir, got `{arg}`")))?;
            Ok(RunRef {
                label: label.to_string(),
                dir: PathBuf::from(dir),
            })
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let table = compare_runs(&runs, metric).map_err(|e| CmdError::failure(e.to_string()))?;
    let tsv = curve_table_tsv(&table);
    if let Some(path) = out {
        fs::write(path, &tsv).map_err(|e| CmdError::failure(e.to_string()))?;
        println!("table: {}", path.display());
    }
    Ok(tsv)
}

/// `analyze --entropy-shift`: the percentile-binned entropy-change table for
/// one run (first-iteration steps, final checkpoint).
pub fn cmd_analyze_entropy_shift(run: &Path, out: Option<&Path>) -> CmdResult<String> {
    let batch = Batch::from_jsonl(
        &fs::read_to_string(run.join("batches/iter_0.records"))
            .map_err(|e| CmdError::usage(format!("not a run directory: {e}")))?,
    )
    .map_err(|e| CmdError::failure(e.to_string()))?;
    let records = AdvantageRecord::from_jsonl(
        &fs::read_to_string(run.join("ledger/iter_0.records"))
            .map_err(|e| CmdError::usage(format!("not a run directory: {e}")))?,
    )
    .map_err(|e| CmdError::failure(e.to_string()))?;
    let policy = FactoredStepPolicy::from_checkpoint(
        &fs::read_to_string(run.join("checkpoints/final"))
            .map_err(|e| CmdError::usage(format!("not a run directory: {e}")))?,
    )
    .map_err(CmdError::failure)?;
    let bins = entropy_change_by_percentile(&records, &batch, &policy)
        .map_err(|e| CmdError::failure(e.to_string()))?;
    let tsv = percentile_bins_tsv(&bins);
    if let Some(path) = out {
        fs::write(path, &tsv).map_err(|e| CmdError::failure(e.to_string()))?;
        println!("table: {}", path.display());
    }
    Ok(tsv)
}

/// `export`: dump one artifact of a run as TSV.
pub fn cmd_export(run: &Path, what: &str, iteration: Option<String>) -> CmdResult<String> {
    match what {
        "metrics" => {
            let rows = load_metrics(run).map_err(|e| CmdError::usage(e.to_string()))?;
            let mut out = String::from(
                "iteration\tsuccess_rate\tmean_step_entropy\tmean_abs_a_final\tkl_to_previous\tdropped_groups\n",
            );
            for m in rows {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    m.iteration,
                    m.success_rate,
                    m.mean_step_entropy,
                    m.mean_abs_a_final,
                    m.kl_to_previous,
                    m.dropped_groups
                );
            }
            Ok(out)
        }
        "ledger" => {
            let iter = iteration.unwrap_or_else(|| "0".into());
            let path = run.join(format!("ledger/iter_{iter}.records"));
            let records = AdvantageRecord::from_jsonl(
                &fs::read_to_string(&path)
                    .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
            )
            .map_err(|e| CmdError::failure(e.to_string()))?;
            let mut out = String::from(
                "traj_index\tstep_index\ta_outcome\th_step\th_norm\tg\tf_next\ta_mod\ta_final\n",
            );
            for r in records {
                let f_next = r.f_next.map_or(String::from(""), |f| f.to_string());
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.traj_index,
                    r.step_index,
                    r.a_outcome,
                    r.h_step,
                    r.h_norm,
                    r.g,
                    f_next,
                    r.a_mod,
                    r.a_final
                );
            }
            Ok(out)
        }
        "checkpoint" => {
            let iter = iteration.unwrap_or_else(|| "final".into());
            let name = if iter == "final" {
                "checkpoints/final".to_string()
            } else {
                format!("checkpoints/iter_{iter}")
            };
            let path = run.join(name);
            let policy = FactoredStepPolicy::from_checkpoint(
                &fs::read_to_string(&path)
                    .map_err(|e| CmdError::usage(format!("{}: {e}", path.display())))?,
            )
            .map_err(CmdError::failure)?;
            let mut out = String::from("state\tposition\tindex\tlogit\n");
            for state in policy.states() {
                for position in 0..policy.sub_token_length() {
                    for (index, z) in policy.logits(state, position).unwrap().iter().enumerate() {
                        let _ = writeln!(out, "{}\t{}\t{}\t{}", state.0, position, index, z);
                    }
                }
            }
            Ok(out)
        }
        other => Err(CmdError::usage(format!(
            "--what must be metrics, ledger, or checkpoint (got `{other}`)"
        ))),
    }
}

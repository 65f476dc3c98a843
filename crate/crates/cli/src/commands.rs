use std::fs;
use std::path::{Path, PathBuf};

use netstrat::estimands::estimate;
use netstrat::model::{
    check_gradient, draws_to_params, fit, GradientCheck, Layout, LogPosterior, ModelInput, SlopeTying,
};
use netstrat::posterior::{chain_rng, diagnose, DiagnosticsReport, Draws};
use netstrat::simulate::{generate, random_params, write_simulation};
use netstrat::strata::mom_estimate;
use netstrat::study::{load_study, StudyData};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::{CliError, Command, CommonArgs, DataArgs, EstimandArgs, SamplerArgs};

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { data, common } => validate(&data, &common),
        Command::Mom { data, common } => mom(&data, &common),
        Command::Fit { data, common, sampler } => fit_cmd(&data, &common, &sampler),
        Command::Estimate {
            data,
            common,
            estimands,
            draws,
        } => estimate_cmd(&data, &common, &estimands, draws),
        Command::Simulate { common } => simulate(&common),
        Command::Gradcheck { data, common } => gradcheck(&data, &common),
        Command::Diagnose { common, draws } => diagnose_cmd(&common, &draws),
    }
}

fn setup(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        // a pool built by an earlier command in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn out_dir(common: &CommonArgs) -> Result<Option<&Path>, CliError> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("create {}", dir.display()), e))?;
    }
    Ok(common.out.as_deref())
}

fn require_out(common: &CommonArgs) -> Result<&Path, CliError> {
    out_dir(common)?.ok_or_else(|| CliError::usage("--out is required"))
}

fn data_paths(data: &DataArgs) -> Result<[&Path; 3], CliError> {
    match (&data.classes, &data.students, &data.edges) {
        (Some(c), Some(s), Some(e)) => Ok([c, s, e]),
        _ => Err(CliError::usage("--classes, --students and --edges are required")),
    }
}

fn load(data: &DataArgs, config: &RunConfig, manifest: &mut Manifest) -> Result<StudyData, CliError> {
    let [c, s, e] = data_paths(data)?;
    let study = load_study(c, s, e, &config.covariates)?;
    for p in [c, s, e] {
        manifest.input(p)?;
    }
    Ok(study)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(format!("write {}", path.display()), e))
}

fn validate(data: &DataArgs, common: &CommonArgs) -> Result<(), CliError> {
    let config = setup(common)?;
    let mut manifest = Manifest::new("validate", &config);
    let study = load(data, &config, &mut manifest)?;
    let report = study.validation_report();
    println!(
        "{} classes, {} students, {} friendships, {} isolated",
        report.n_classes, report.n_students, report.n_edges, report.isolated_students
    );
    for arm in &report.arms {
        println!(
            "  z={}: {} classes, {} students, {} treated, mean outcome {:.3}",
            arm.arm, arm.classes, arm.students, arm.treated, arm.mean_outcome
        );
    }
    if let Some(dir) = out_dir(common)? {
        write_json(dir, "validation.json", &report)?;
        manifest.write(dir, &["validation.json"])?;
    }
    Ok(())
}

fn mom(data: &DataArgs, common: &CommonArgs) -> Result<(), CliError> {
    let config = setup(common)?;
    let mut manifest = Manifest::new("mom", &config);
    let study = load(data, &config, &mut manifest)?;
    let est = mom_estimate(&study, config.mom.bootstrap, config.mom.seed)?;
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    for ((code, p), se) in ["111", "011", "001", "000"]
        .iter()
        .zip(est.proportions)
        .zip(est.standard_errors)
    {
        println!("pi_{code} {p:.3} (se {se:.3})");
    }
    if let Some(dir) = out_dir(common)? {
        write_json(dir, "mom.json", &est)?;
        manifest.write(dir, &["mom.json"])?;
    }
    Ok(())
}

fn fit_cmd(data: &DataArgs, common: &CommonArgs, sampler: &SamplerArgs) -> Result<(), CliError> {
    let mut config = setup(common)?;
    if let Some(v) = sampler.chains {
        config.sampler.chains = v;
    }
    if let Some(v) = sampler.warmup {
        config.sampler.warmup = v;
    }
    if let Some(v) = sampler.samples {
        config.sampler.samples = v;
    }
    let dir = require_out(common)?;
    let mut manifest = Manifest::new("fit", &config);
    let study = load(data, &config, &mut manifest)?;
    let draws = fit(&study, &config.fit_config())?;
    draws.write_csv(&dir.join("draws.csv"))?;
    draws.write_stats(&dir.join("sampler_stats.json"))?;
    let mut outputs = vec!["draws.csv", "sampler_stats.json"];
    let divergences = draws.total_divergences();
    if divergences > 0 {
        eprintln!("warning: {divergences} divergent transitions after warmup");
    }
    if draws.n_chains() >= 2 {
        let report = diagnose(&draws)?;
        print_diagnostics(&report);
        write_diagnostics_csv(&report, &dir.join("diagnostics.csv"))?;
        outputs.push("diagnostics.csv");
    }
    println!("wrote {} draws to {}", draws.n_draws(), dir.join("draws.csv").display());
    manifest.write(dir, &outputs)
}

/// Tying used to produce a draws file.
fn tying_of(draws: &Draws<f64>) -> SlopeTying {
    if draws.index_of("beta_s_3").is_some() {
        SlopeTying::FreeReward
    } else {
        SlopeTying::Shared
    }
}

fn estimate_cmd(
    data: &DataArgs,
    common: &CommonArgs,
    args: &EstimandArgs,
    draws: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut config = setup(common)?;
    if let Some(g) = &args.s_grid {
        config.estimands.s_grid = g.clone();
    }
    if let Some(c) = &args.contrasts {
        config.estimands.contrasts = c.clone();
        config.estimands.requests = None;
    }
    let dir = require_out(common)?;
    let draws_path = draws.unwrap_or_else(|| dir.join("draws.csv"));
    if !draws_path.is_file() {
        return Err(CliError::usage(format!(
            "no posterior draws at {}; run `netstrat fit` first or pass --draws",
            draws_path.display()
        )));
    }
    let requests = config.estimands.resolve()?;
    if requests.is_empty() {
        return Err(CliError::usage("no estimands requested"));
    }
    let mut manifest = Manifest::new("estimate", &config);
    let study = load(data, &config, &mut manifest)?;
    manifest.input(&draws_path)?;
    let draws = Draws::read_csv(&draws_path)?;
    config.tying = tying_of(&draws);
    manifest.config.tying = config.tying;
    let layout = Layout::for_study(&study, config.tying);
    let params = draws_to_params(&layout, &draws)?;
    let out = estimate(&study, &params, &requests, config.estimands.seed)?;
    out.write_estimands_csv(&dir.join("estimands.csv"))?;
    out.write_shares_csv(&dir.join("stratum_shares.csv"))?;
    out.write_homophily_csv(&dir.join("homophily.csv"))?;
    out.write_profiles_json(&dir.join("profiles.json"))?;
    for (g, s) in &out.shares {
        println!("{g} {:<22} {:.3} [{:.3}, {:.3}]", g.label(), s.mean, s.q2_5, s.q97_5);
    }
    println!(
        "wrote {} estimand rows to {}",
        out.effects.len(),
        dir.join("estimands.csv").display()
    );
    manifest.write(
        dir,
        &["estimands.csv", "stratum_shares.csv", "homophily.csv", "profiles.json"],
    )
}

fn simulate(common: &CommonArgs) -> Result<(), CliError> {
    let config = setup(common)?;
    let dir = require_out(common)?;
    let manifest = Manifest::new("simulate", &config);
    let (study, truth) = generate(&config.simulation)?;
    write_simulation(&study, &truth, dir)?;
    let shares = truth.shares();
    println!(
        "simulated {} classes, {} students; true shares 111 {:.3} 011 {:.3} 001 {:.3} 000 {:.3}",
        study.n_classes(),
        study.n_students(),
        shares[0],
        shares[1],
        shares[2],
        shares[3]
    );
    manifest.write(dir, &["classes.csv", "students.csv", "edges.csv", "truth.json"])
}

#[derive(Serialize)]
struct GradcheckReport {
    step: f64,
    rel_tolerance: f64,
    abs_floor: f64,
    passed: bool,
    states: Vec<GradientCheck>,
}

fn gradcheck(data: &DataArgs, common: &CommonArgs) -> Result<(), CliError> {
    let config = setup(common)?;
    let mut manifest = Manifest::new("gradcheck", &config);
    let study = if data.classes.is_some() || data.students.is_some() || data.edges.is_some() {
        load(data, &config, &mut manifest)?
    } else {
        generate(&config.simulation)?.0
    };
    let layout = Layout::for_study(&study, config.tying);
    let target = LogPosterior::new(ModelInput::<f64>::from_study(&study), layout.clone(), config.prior)?;
    let gc = &config.gradcheck;
    let mut states = Vec::with_capacity(gc.states);
    for k in 0..gc.states {
        let mut rng = chain_rng(config.sampler.seed, k);
        let theta = layout.unconstrain(&random_params(&layout, &mut rng))?;
        states.push(check_gradient(
            &target,
            &theta,
            gc.step,
            gc.rel_tolerance,
            gc.abs_floor,
        )?);
    }
    let passed = states.iter().all(|s| s.passed);
    let worst = states.iter().map(|s| s.max_rel_error).fold(0.0, f64::max);
    println!(
        "{} states, {} coordinates: max relative error {worst:.3e} ({})",
        states.len(),
        layout.dim(),
        if passed { "pass" } else { "FAIL" }
    );
    if let Some(dir) = out_dir(common)? {
        let report = GradcheckReport {
            step: gc.step,
            rel_tolerance: gc.rel_tolerance,
            abs_floor: gc.abs_floor,
            passed,
            states,
        };
        write_json(dir, "gradcheck.json", &report)?;
        manifest.write(dir, &["gradcheck.json"])?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::usage("analytic gradient disagrees with finite differences"))
    }
}

fn print_diagnostics(report: &DiagnosticsReport) {
    println!(
        "{} chains x {} draws, {} divergences, max R-hat {:.3}, min bulk ESS {:.0}",
        report.n_chains, report.draws_per_chain, report.divergences, report.max_rhat, report.min_ess_bulk
    );
    let mut worst: Vec<_> = report.parameters.iter().filter(|p| !p.degenerate).collect();
    worst.sort_by(|a, b| b.rhat.total_cmp(&a.rhat));
    for p in worst.iter().take(5).filter(|p| p.rhat > 1.01) {
        println!("  {:<24} R-hat {:.3}  ESS {:.0}", p.name, p.rhat, p.ess_bulk);
    }
}

fn write_diagnostics_csv(report: &DiagnosticsReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(netstrat::Error::from)?;
    let e = |r: csv::Result<()>| r.map_err(|e| CliError::Core(e.into()));
    e(w.write_record(["parameter", "mean", "sd", "rhat", "ess_bulk", "degenerate"]))?;
    for p in &report.parameters {
        e(w.write_record([
            p.name.clone(),
            p.mean.to_string(),
            p.sd.to_string(),
            p.rhat.to_string(),
            p.ess_bulk.to_string(),
            p.degenerate.to_string(),
        ]))?;
    }
    w.flush()
        .map_err(|e| CliError::io(format!("write {}", path.display()), e))
}

fn diagnose_cmd(common: &CommonArgs, draws_path: &Path) -> Result<(), CliError> {
    let config = setup(common)?;
    let mut manifest = Manifest::new("diagnose", &config);
    if !draws_path.is_file() {
        return Err(CliError::usage(format!("no draws file at {}", draws_path.display())));
    }
    manifest.input(draws_path)?;
    let draws = Draws::read_csv(draws_path)?;
    let report = diagnose(&draws)?;
    print_diagnostics(&report);
    if let Some(dir) = out_dir(common)? {
        write_diagnostics_csv(&report, &dir.join("diagnostics.csv"))?;
        manifest.write(dir, &["diagnostics.csv"])?;
    }
    Ok(())
}

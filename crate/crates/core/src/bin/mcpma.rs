use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use multichain_pma::chain::{classify, constants_of_form, ChainAnalysis, Classification};
use multichain_pma::checks::{run_suite, SUITES};
use multichain_pma::fixtures::{self, FixtureParams, MultichainParams, FIXTURE_NAMES};
use multichain_pma::io;
use multichain_pma::pma::{
    check_linear_envelope, check_sublinear_envelope, compute_reference, estimate_coefficients, run_pma, PmaConfig,
    PmaTrace, ReferenceConfig, ScheduleKind, StepSchedule,
};
use multichain_pma::projection::{project, DivergenceKind};
use multichain_pma::sampling::{
    classify_by_sampling, critic, run_spma, suggest_windows, CriticConfig, GenerativeModel,
};
use multichain_pma::values::evaluate_analysis;
use multichain_pma::{Error, Mdp, Policy, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_SUITE: u8 = 4;

#[derive(Parser)]
#[command(name = "mcpma", version, about = "Average-reward multichain MDP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fixture MDP as JSON.
    Gen(GenArgs),
    /// Exact evaluation of a policy: one CSV per table.
    Solve(SolveArgs),
    /// Recurrent classes, exactly and from sampled trajectories.
    Classify(ClassifyArgs),
    /// Project a point onto the floored simplex.
    Project(ProjectArgs),
    /// Exact-gradient mirror ascent.
    Pma(RunArgs),
    /// Mirror ascent driven by the sampled critic.
    Spma(SpmaArgs),
    /// Estimate G for one policy with the critic.
    Critic(CriticArgs),
    /// Run a property suite (or `all`).
    Check(CheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(FIXTURE_NAMES))]
    name: String,
    /// Recurrent class sizes for random_multichain, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,2,2")]
    class_sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    transient: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 0.3)]
    leak: f64,
    /// Size of the ring or of the communicating core.
    #[arg(long, default_value_t = 5)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    fringe: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArg {
    /// Policy JSON; the uniform policy when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[command(flatten)]
    policy: PolicyArg,
    #[arg(long, default_value = "uniform")]
    mu: String,
    /// Monte Carlo episodes for cover times of large classes.
    #[arg(long, default_value_t = 2000)]
    cover_episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[command(flatten)]
    policy: PolicyArg,
    /// Also classify from sampled trajectories with windows for this δ.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProjectArgs {
    /// Comma-separated point (weights for kl).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    point: Vec<f64>,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Div::Kl)]
    div: Div,
}

#[derive(Clone, Copy, ValueEnum)]
enum Div {
    Kl,
    Euclid,
}

impl From<Div> for DivergenceKind {
    fn from(d: Div) -> Self {
        match d {
            Div::Kl => DivergenceKind::Kl,
            Div::Euclid => DivergenceKind::Euclidean,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Schedule {
    Const,
    Adaptive,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, default_value = "uniform")]
    mu: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Div::Kl)]
    div: Div,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = Schedule::Const)]
    schedule: Schedule,
    /// Growth constant for the adaptive schedule; estimated when omitted.
    #[arg(long)]
    c_alpha: Option<f64>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Initial policy JSON; uniform when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Random starts for the reference optimum search.
    #[arg(long, default_value_t = 10)]
    ref_starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct Budgets {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[arg(long, default_value_t = 50)]
    n2: usize,
    #[arg(long, default_value_t = 200)]
    horizon2: usize,
}

impl Budgets {
    fn config(&self) -> Result<CriticConfig> {
        CriticConfig::new(self.n, self.horizon, self.n2, self.horizon2)
    }
}

#[derive(Args)]
struct SpmaArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    budgets: Budgets,
}

#[derive(Args)]
struct CriticArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[command(flatten)]
    policy: PolicyArg,
    #[command(flatten)]
    budgets: Budgets,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidMdp(_) | Error::InvalidPolicy(_) | Error::Dimension(_) | Error::Json(_) => EXIT_VALIDATION,
        Error::InfeasibleAlpha { .. }
        | Error::StepTooLarge { .. }
        | Error::NotInterior { .. }
        | Error::NotFullSupport(_)
        | Error::InvalidArgument(_) => EXIT_INFEASIBLE,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Project(a) => cmd_project(a),
        Command::Pma(a) => cmd_pma(a),
        Command::Spma(a) => cmd_spma(a),
        Command::Critic(a) => cmd_critic(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_policy_or_uniform(arg: &Option<PathBuf>, m: &Mdp) -> Result<Policy> {
    let p = match arg {
        Some(path) => io::load_policy(path)?,
        None => Policy::uniform(m.n_states, m.n_actions),
    };
    if p.n_states() != m.n_states || p.n_actions() != m.n_actions {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            p.n_states(),
            p.n_actions(),
            m.n_states,
            m.n_actions
        )));
    }
    Ok(p)
}

fn classification_json(c: &Classification) -> serde_json::Value {
    json!({ "recurrent_classes": c.recurrent_classes, "transient": c.transient })
}

fn cmd_gen(a: GenArgs) -> Result<u8> {
    let params = FixtureParams {
        multichain: MultichainParams {
            class_sizes: a.class_sizes,
            n_transient: a.transient,
            n_actions: a.actions,
            leak: a.leak,
        },
        n: a.size,
        fringe: a.fringe,
        noise: a.noise,
    };
    let m = fixtures::generate(&a.name, &params, a.seed)?;
    match a.out {
        Some(path) => io::save_mdp(&m, &path)?,
        None => println!("{}", io::mdp_to_json(&m)?),
    }
    Ok(0)
}

fn analysis_for(m: &Mdp, p: &Policy) -> Result<ChainAnalysis> {
    if p.is_interior() {
        ChainAnalysis::interior(m, p, &classify(m))
    } else {
        ChainAnalysis::general(m, p)
    }
}

fn cmd_solve(a: SolveArgs) -> Result<u8> {
    let m = io::load_mdp(&a.mdp)?;
    let p = load_policy_or_uniform(&a.policy.policy, &m)?;
    let mu = io::load_mu(&a.mu, m.n_states)?;
    let an = analysis_for(&m, &p)?;
    let vb = evaluate_analysis(&m, &an)?;
    let vis = an.visitation(&mu)?;
    let constants = constants_of_form(&an.form, a.cover_episodes, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let cols = io::action_columns(m.n_actions);
    write(&a.out, "J.csv", &io::vector_to_csv(&vb.j, "J"))?;
    write(&a.out, "V.csv", &io::vector_to_csv(&vb.v, "V"))?;
    write(&a.out, "K.csv", &io::matrix_to_csv(&vb.k, &cols))?;
    write(&a.out, "Q.csv", &io::matrix_to_csv(&vb.q, &cols))?;
    write(&a.out, "G.csv", &io::matrix_to_csv(&vb.g, &cols))?;
    let state_cols: Vec<String> = (0..m.n_states).map(|s| format!("s{s}")).collect();
    write(&a.out, "P_star.csv", &io::matrix_to_csv(&an.p_star, &state_cols))?;
    let vis_table = DMatrix::from_columns(&[vis.d.clone(), vis.delta.clone(), vis.rho.clone()]);
    write(
        &a.out,
        "visitation.csv",
        &io::matrix_to_csv(&vis_table, &["d".into(), "delta".into(), "rho".into()]),
    )?;
    let summary = json!({
        "classification": classification_json(&an.classification),
        "gain_mu": vb.gain_mu(&mu),
        "t_tar": constants.t_tar,
        "t_tar_max": constants.t_tar_max,
        "t_half": constants.t_half,
        "t_cov": constants.t_cov.iter().map(|c| json!({"value": c.value, "std_error": c.std_error})).collect::<Vec<_>>(),
        "t_cov_max": constants.t_cov_max,
    });
    write_json(&a.out, "summary.json", &summary)?;
    Ok(0)
}

fn cmd_classify(a: ClassifyArgs) -> Result<u8> {
    let m = io::load_mdp(&a.mdp)?;
    let p = load_policy_or_uniform(&a.policy.policy, &m)?;
    let an = analysis_for(&m, &p)?;
    let mut out = json!({ "exact": classification_json(&an.classification) });
    if let Some(delta) = a.delta {
        let constants = constants_of_form(&an.form, 2000, a.seed)?;
        let (m1, m2) = suggest_windows(&constants, delta)?;
        let gm = GenerativeModel::new(m.clone(), a.seed);
        let probes: Vec<usize> = (0..m.n_states).collect();
        let sampled = classify_by_sampling(&gm, &p, m1, m2, &probes)?;
        out["sampled"] = classification_json(&sampled);
        out["windows"] = json!({ "m1": m1, "m2": m2 });
        out["agree"] = json!(sampled == an.classification);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn cmd_project(a: ProjectArgs) -> Result<u8> {
    let p = project(a.div.into(), &a.point, a.alpha)?;
    let text: Vec<String> = p.p.iter().map(|x| x.to_string()).collect();
    println!("{}", text.join(","));
    Ok(0)
}

struct Prepared {
    m: Mdp,
    mu: DVector<f64>,
    cfg: PmaConfig,
    pi0: Policy,
    reference: multichain_pma::pma::Reference,
    coeffs: multichain_pma::pma::CoefficientEstimate,
}

fn prepare(a: &RunArgs) -> Result<Prepared> {
    let m = io::load_mdp(&a.mdp)?;
    let mu = io::load_mu(&a.mu, m.n_states)?;
    let c = classify(&m);
    let coeffs = estimate_coefficients(&m, &mu, a.alpha, &c, 100, a.seed)?;
    let schedule = match a.schedule {
        Schedule::Const => StepSchedule::constant(a.eta)?,
        Schedule::Adaptive => StepSchedule::adaptive(a.eta, a.c_alpha.unwrap_or(coeffs.c_alpha))?,
    };
    let cfg = PmaConfig {
        alpha: a.alpha,
        schedule,
        kind: a.div.into(),
        iters: a.iters,
    };
    let pi0 = load_policy_or_uniform(&a.init, &m)?;
    let reference = compute_reference(
        &m,
        &mu,
        a.alpha,
        &ReferenceConfig {
            kind: cfg.kind,
            starts: a.ref_starts,
            seed: a.seed,
            ..Default::default()
        },
    )?;
    Ok(Prepared {
        m,
        mu,
        cfg,
        pi0,
        reference,
        coeffs,
    })
}

fn run_summary(p: &Prepared, trace: &PmaTrace) -> Result<serde_json::Value> {
    let last = trace.last();
    let d0 = trace.records[0].divergence_to_ref;
    let envelope = match p.cfg.schedule.kind {
        ScheduleKind::Constant => check_sublinear_envelope(trace, &p.coeffs, p.cfg.schedule.eta0, 2.0, p.cfg.iters)?,
        ScheduleKind::Adaptive => check_linear_envelope(trace, &p.coeffs, p.cfg.schedule.eta0, 0.05)?,
    };
    let min_margin = envelope.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(json!({
        "iterations": p.cfg.iters,
        "final_j_mu": last.j_mu,
        "final_gap": last.gap,
        "reference_value": p.reference.value,
        "reference_source": format!("{:?}", p.reference.source),
        "initial_divergence": d0,
        "samples_used": last.samples_cum,
        "b_alpha_hat": p.coeffs.b_alpha,
        "c_alpha_hat": p.coeffs.c_alpha,
        "envelope_min_margin": min_margin,
        "envelope_bound_holds": envelope.bound_holds,
        "shape_statistic": envelope.shape_statistic,
        "shape_threshold": envelope.shape_threshold,
        "shape_holds": envelope.shape_holds,
        "worst_decrease": trace.worst_decrease(),
    }))
}

fn config_json(a: &RunArgs, p: &Prepared) -> serde_json::Value {
    json!({
        "mdp": a.mdp,
        "mu": a.mu,
        "alpha": a.alpha,
        "div": p.cfg.kind.to_string(),
        "eta": a.eta,
        "schedule": match a.schedule { Schedule::Const => "const", Schedule::Adaptive => "adaptive" },
        "c_alpha": p.cfg.schedule.c_alpha.is_finite().then_some(p.cfg.schedule.c_alpha),
        "iters": a.iters,
        "init": a.init,
        "ref_starts": a.ref_starts,
        "seed": a.seed,
    })
}

fn cmd_pma(a: RunArgs) -> Result<u8> {
    let p = prepare(&a)?;
    let trace = run_pma(&p.m, &p.mu, &p.cfg, &p.pi0, Some(&p.reference.policy))?;
    fs::create_dir_all(&a.out)?;
    write(&a.out, "trace.csv", &io::trace_to_csv(&trace))?;
    write_json(&a.out, "summary.json", &run_summary(&p, &trace)?)?;
    write_json(&a.out, "config.json", &config_json(&a, &p))?;
    io::save_policy(&trace.last().policy, &a.out.join("policy.json"))?;
    Ok(0)
}

fn cmd_spma(a: SpmaArgs) -> Result<u8> {
    let p = prepare(&a.run)?;
    let c = classify(&p.m);
    let gm = GenerativeModel::new(p.m.clone(), a.run.seed);
    let run = run_spma(
        &gm,
        &p.mu,
        &p.cfg,
        &p.pi0,
        &[a.budgets.config()?],
        &c,
        Some(&p.reference.policy),
        p.coeffs.b_alpha,
    )?;
    let out = &a.run.out;
    fs::create_dir_all(out)?;
    write(out, "trace.csv", &io::trace_to_csv(&run.trace))?;
    let mut summary = run_summary(&p, &run.trace)?;
    summary["max_grad_error"] = json!(run.max_grad_error);
    summary["inexact_monotone"] = json!(run.steps.iter().all(|s| s.ok));
    write_json(out, "summary.json", &summary)?;
    let mut config = config_json(&a.run, &p);
    config["critic"] = json!({
        "n": a.budgets.n, "horizon": a.budgets.horizon, "n2": a.budgets.n2, "horizon2": a.budgets.horizon2,
    });
    write_json(out, "config.json", &config)?;
    io::save_policy(&run.trace.last().policy, &out.join("policy.json"))?;
    Ok(0)
}

fn cmd_critic(a: CriticArgs) -> Result<u8> {
    let m = io::load_mdp(&a.mdp)?;
    let p = load_policy_or_uniform(&a.policy.policy, &m)?;
    let c = classify(&m);
    let gm = GenerativeModel::new(m.clone(), a.seed);
    let est = critic(&gm, &p, &a.budgets.config()?, &c)?;
    let exact = evaluate_analysis(&m, &ChainAnalysis::interior(&m, &p, &c)?)?;
    fs::create_dir_all(&a.out)?;
    let cols = io::action_columns(m.n_actions);
    write(&a.out, "G_hat.csv", &io::matrix_to_csv(&est.g_hat, &cols))?;
    write(&a.out, "K_hat.csv", &io::matrix_to_csv(&est.k_hat, &cols))?;
    write(&a.out, "Q_hat.csv", &io::matrix_to_csv(&est.q_hat, &cols))?;
    let summary = json!({
        "samples_used": est.samples_used,
        "trajectories": est.trajectories,
        "g_error_inf": (&est.g_hat - &exact.g).amax(),
    });
    write_json(&a.out, "summary.json", &summary)?;
    Ok(0)
}

fn cmd_check(a: CheckArgs) -> Result<u8> {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else {
        vec![a.suite.as_str()]
    };
    let mut ok = true;
    for name in names {
        let report = run_suite(name, a.seed)?;
        print!("{report}");
        ok &= report.passed();
    }
    Ok(if ok { 0 } else { EXIT_SUITE })
}

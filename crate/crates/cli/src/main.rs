use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infpriv::audit::{
    audit_additive_mc, audit_analytic_gauss, audit_end_to_end, worst_case_pair, EndToEndSetup, Statistic,
    WorstCase, DEFAULT_BINS, DEFAULT_TRIALS,
};
use infpriv::data::{gen_blobs, Dataset};
use infpriv::mechanisms::{
    apply_mechanism_traced, calibrate_gauss_input, calibrate_gauss_output, calibrate_laplace_output,
};
use infpriv::rng::{purpose, RandomSource};
use infpriv::sweep::{run_sweep, self_test, write_csv, SweepConfig};
use infpriv::train::{finetune_noisy, mlp_arch, train_with_report, TrainConfig};
use infpriv::{model_lipschitz, Error, LayeredModel, Mechanism, NoiseSpec, Norm, Placement, PrivacyBudget};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "infpriv", version, about = "Inference privacy for trained models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blobs dataset as CSV.
    GenData(GenData),
    /// Train an MLP classifier.
    Train(Train),
    /// Fine-tune a model under input noise, choosing the training noise by grid search.
    Finetune(Finetune),
    /// Print a certified Lipschitz bound of a model.
    Lipschitz(LipschitzCmd),
    /// Calibrate a mechanism and print its noise spec.
    Calibrate(Calibrate),
    /// Release one private prediction.
    Infer(Infer),
    /// Audit a calibration at its worst-case pair.
    Audit(AuditCmd),
    /// Run a utility–privacy sweep.
    Sweep(Sweep),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GenData {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    /// Points per class.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "lr", default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    /// Gaussian noise on training inputs.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct BudgetArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long)]
    alpha: f64,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Finetune {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Target evaluation noise; defaults to the Gauss-Input σ of the budget.
    #[arg(long)]
    target_sigma: Option<f64>,
    #[arg(long, requires = "alpha")]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, requires = "epsilon")]
    alpha: Option<f64>,
    /// Candidate training-noise levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,1.5,2")]
    grid: Vec<f64>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PArg {
    #[value(name = "1")]
    L1,
    #[value(name = "2")]
    L2,
    #[value(name = "inf")]
    Inf,
}

impl From<PArg> for Norm {
    fn from(p: PArg) -> Norm {
        match p {
            PArg::L1 => Norm::L1,
            PArg::L2 => Norm::L2,
            PArg::Inf => Norm::Inf,
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct LipschitzCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "2")]
    p: PArg,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Calibrate {
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Mechanism,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Needed for output placement unless --mu is given.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    /// Output dimension when calibrating from --mu alone.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Infer {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Mechanism,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Input features, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    input: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKind {
    /// Closed-form δ(ε) of the Gaussian pair.
    Analytic,
    /// Monte Carlo estimate over the likelihood-ratio set.
    Mc,
    /// Run the model on both inputs and scan threshold sets.
    EndToEnd,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct AuditCmd {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long)]
    alpha: f64,
    /// 1 audits Lap-Output, 2 audits the Gaussian mechanisms.
    #[arg(long, value_enum, default_value = "2")]
    p: PArg,
    #[arg(long, value_parser = parse_placement, default_value = "output")]
    placement: Placement,
    /// Lipschitz bound; taken from --model when omitted.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mc")]
    method: AuditKind,
    /// Audit at this ε instead of the calibrated one.
    #[arg(long)]
    audit_epsilon: Option<f64>,
    /// Multiply the calibrated scale, e.g. 0.5 to check that an audit catches it.
    #[arg(long, default_value_t = 1.0)]
    scale_factor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Sweep {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the run manifest; defaults to <out>.manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Re-derive every calibrated scale and fail on a mismatch.
    #[arg(long)]
    self_test: bool,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_placement(s: &str) -> Result<Placement, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    let json = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        std::fs::write(path, format!("{json}\n"))?;
    }
    // A closed pipe (`| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout(), "{json}");
    Ok(())
}

fn budget_for(m: Mechanism, b: BudgetArgs) -> infpriv::Result<PrivacyBudget> {
    match m {
        Mechanism::LapOutput => PrivacyBudget::pure(b.epsilon, b.alpha, Norm::L1),
        _ => PrivacyBudget::new(b.epsilon, b.delta, b.alpha, Norm::L2),
    }
}

fn gen_data(a: GenData) -> CliResult {
    let d = gen_blobs(a.n, a.classes, a.dim, a.spread, a.seed)?;
    d.write_csv(&a.out)?;
    eprintln!("wrote {} rows to {}", d.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> CliResult {
    let d = Dataset::read_csv(&a.data)?;
    let config = TrainConfig {
        noise_sigma: a.noise_sigma,
        ..a.opts.config()
    };
    let (model, report) = train_with_report(&d, &mlp_arch(&a.hidden, d.classes()), &config)?;
    model.save(&a.out)?;
    emit(&report, None)
}

fn finetune(a: Finetune) -> CliResult {
    let model = LayeredModel::load(&a.model)?;
    let d = Dataset::read_csv(&a.data)?;
    let target = match (a.target_sigma, a.epsilon, a.alpha) {
        (Some(s), None, None) => s,
        (None, Some(epsilon), Some(alpha)) => {
            let b = PrivacyBudget::new(epsilon, a.delta, alpha, Norm::L2)?;
            calibrate_gauss_input(&b, model.input_dim())?.scale
        }
        _ => return Err("give either --target-sigma or --epsilon with --alpha".into()),
    };
    let config = TrainConfig {
        sigma_grid: a.grid,
        ..a.opts.config()
    };
    let (tuned, report) = finetune_noisy(&model, &d, &config, target)?;
    tuned.save(&a.out)?;
    emit(&report, None)
}

fn lipschitz(a: LipschitzCmd) -> CliResult {
    let model = LayeredModel::load(&a.model)?;
    emit(&model_lipschitz(&model, a.p.into())?, None)
}

fn calibrated(m: Mechanism, b: BudgetArgs, model: Option<&LayeredModel>, mu: Option<f64>, dim: usize) -> CliResult<NoiseSpec> {
    let budget = budget_for(m, b)?;
    let spec = match (m, model, mu) {
        (_, Some(model), None) => m.calibrate(&budget, model)?,
        (Mechanism::GaussInput, Some(model), Some(_)) => calibrate_gauss_input(&budget, model.input_dim())?,
        (Mechanism::GaussInput, None, _) => calibrate_gauss_input(&budget, dim)?,
        (Mechanism::GaussOutput, model, Some(mu)) => {
            calibrate_gauss_output(&budget, mu, model.map_or(dim, LayeredModel::output_dim))?
        }
        (Mechanism::LapOutput, model, Some(mu)) => {
            calibrate_laplace_output(&budget, mu, model.map_or(dim, LayeredModel::output_dim))?
        }
        (_, None, None) => return Err(format!("{m} needs --model or --mu").into()),
    };
    if let Some(w) = spec.warning {
        eprintln!("warning: {w}: ε = {} > 1; audit before relying on this scale", b.epsilon);
    }
    Ok(spec)
}

fn calibrate(a: Calibrate) -> CliResult {
    let model = a.model.as_ref().map(LayeredModel::load).transpose()?;
    let spec = calibrated(a.mechanism, a.budget, model.as_ref(), a.mu, a.dim)?;
    emit(&spec, a.out.as_deref())
}

#[derive(Serialize)]
struct InferOutput {
    released: Vec<f64>,
    predicted_class: usize,
    spec: NoiseSpec,
}

fn infer(a: Infer) -> CliResult {
    let model = LayeredModel::load(&a.model)?;
    let spec = calibrated(a.mechanism, a.budget, Some(&model), None, 0)?;
    let rng = RandomSource::for_trial(a.seed, 0, purpose::NOISE);
    let trace = apply_mechanism_traced(&model, &a.input, &spec, &rng)?;
    let out = InferOutput {
        predicted_class: infpriv::model::argmax(&trace.released),
        released: trace.released,
        spec,
    };
    emit(&out, a.out.as_deref())
}

fn audit(a: AuditCmd) -> CliResult {
    let p: Norm = a.p.into();
    let mechanism = match (p, a.placement) {
        (Norm::L1, Placement::Output) => Mechanism::LapOutput,
        (Norm::L2, Placement::Output) => Mechanism::GaussOutput,
        (Norm::L2, Placement::Input) => Mechanism::GaussInput,
        _ => return Err(format!("no mechanism for ℓ{p} with {:?} placement", a.placement).into()),
    };
    let model = a.model.as_ref().map(LayeredModel::load).transpose()?;
    let budget = BudgetArgs {
        epsilon: a.epsilon,
        delta: a.delta,
        alpha: a.alpha,
    };
    let spec = calibrated(mechanism, budget, model.as_ref(), a.mu, 1)?;
    let spec = spec.with_scale(spec.scale * a.scale_factor);
    let epsilon = a.audit_epsilon.unwrap_or(a.epsilon);
    let delta_target = if mechanism == Mechanism::LapOutput { a.delta } else { spec.provenance.budget.delta() };
    let rng = RandomSource::for_trial(a.seed, 0, purpose::AUDIT_A);
    let report = match a.method {
        AuditKind::Analytic => audit_analytic_gauss(&spec, epsilon, delta_target)?,
        AuditKind::Mc => {
            // Input noise of σ on a pair α apart is the same as a shift of α
            // in noise space, so one construction covers all three.
            let shift = match worst_case_pair(&spec.provenance.budget, Placement::Output, &[], spec.provenance.mu, spec.dim) {
                WorstCase::OutputShift(s) => s,
                WorstCase::InputPair { .. } => unreachable!("output placement gives a shift"),
            };
            audit_additive_mc(&spec, &shift, epsilon, delta_target, a.trials, &rng)?
        }
        AuditKind::EndToEnd => {
            let model = model.ok_or("end-to-end audits need --model")?;
            let x_a = vec![0.0; model.input_dim()];
            let WorstCase::InputPair { x_a, x_b } = worst_case_pair(&spec.provenance.budget, Placement::Input, &x_a, 1.0, 0) else {
                unreachable!("input placement gives a pair")
            };
            let setup = EndToEndSetup {
                x_a,
                x_b,
                epsilon,
                delta_target,
                trials: a.trials,
                bins: a.bins,
                statistic: Statistic::Auto,
            };
            audit_end_to_end(&model, &spec, &setup, &rng)?
        }
    };
    emit(&report, a.out.as_deref())
}

fn sweep(a: Sweep) -> CliResult {
    let cfg = SweepConfig::load(&a.config)?;
    let result = run_sweep(&cfg)?;
    write_csv(&result.rows, &a.out)?;
    let manifest_path = a.manifest.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&result.manifest)? + "\n")?;
    for w in &result.manifest.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote {} rows to {}", result.rows.len(), a.out.display());
    if a.self_test {
        let problems = self_test(&result.rows);
        if !problems.is_empty() {
            return Err(format!("self-test failed:\n{}", problems.join("\n")).into());
        }
        eprintln!("self-test: all calibrated scales match the closed forms");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Finetune(a) => finetune(a),
        Command::Lipschitz(a) => lipschitz(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Infer(a) => infer(a),
        Command::Audit(a) => audit(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tensamp::completion::{self, WalsConfig};
use tensamp::config::Config;
use tensamp::error::{Error, Result};
use tensamp::experiment::{self, Experiment};
use tensamp::factorize::{self, FactorizeConfig, NoiseKind, NoiseSpec};
use tensamp::io;
use tensamp::rtpm::RtpmConfig;
use tensamp::sampling::{Family, SampleMode, SamplePlan};
use tensamp::sparsify;
use tensamp::synth;
use tensamp::tensor::DEFAULT_MAX_DENSE_DIM;

#[derive(Parser, Debug)]
#[command(name = "tensamp", version, about = "Biased entry-wise sampling of symmetric 3-tensors")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sparsify the third-moment tensor of a sample matrix.
    Sparsify(SparsifyArgs),
    /// Complete a low-rank tensor from sampled entries.
    Complete(CompleteArgs),
    /// Two-pass factorization of a dense noisy tensor.
    Factorize(FactorizeArgs),
    /// Synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run a figure experiment from a key=value config.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SparsifyArgs {
    /// Sample matrix (triplet or dense CSV).
    #[arg(long)]
    input: PathBuf,
    /// Sample budget m (default ⌈10 n^1.5⌉).
    #[arg(long)]
    samples: Option<u64>,
    /// tensorls, uniform, suml3, prodl3, or the dense baselines l1, l2, noisy.
    #[arg(long, default_value = "tensorls")]
    dist: Family,
    /// bernoulli or categorical (default: bernoulli for n <= 200).
    #[arg(long)]
    mode: Option<SampleMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long)]
    omega: PathBuf,
    #[arg(long)]
    rank: usize,
    /// WALS sweeps (default from the sample energy).
    #[arg(long)]
    iters: Option<usize>,
    /// Use a disjoint slice of the samples for every column update.
    #[arg(long)]
    fresh_samples: bool,
    /// Row caps file (`row,cap`); default 2ν estimated from the samples.
    #[arg(long, conflicts_with = "no_caps")]
    caps: Option<PathBuf>,
    /// Disable row thresholding.
    #[arg(long)]
    no_caps: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-sweep diagnostics as JSON.
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FactorizeArgs {
    /// Dense tensor in the TNS3 binary format.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    iters: Option<usize>,
    /// noisy, uniform, l2 or l1.
    #[arg(long, default_value = "noisy")]
    dist: Family,
    #[arg(long)]
    fresh_samples: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted dimension.
    #[arg(long, default_value_t = DEFAULT_MAX_DENSE_DIM)]
    max_dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Biased Gaussian sample matrix.
    Samples {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Biased orthonormal factors.
    Factors {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
        /// Comma-separated weights (default all ones).
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write caps 2‖Uⁱ‖.
        #[arg(long)]
        caps: Option<PathBuf>,
    },
    /// Rank-2 block-diagonal all-ones counterexample.
    Claim {
        #[arg(long)]
        n: usize,
        /// First block size (default ⌈ln n⌉).
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        factors: Option<PathBuf>,
    },
    /// Dense tensor Σ σ_l U_l⊗U_l⊗U_l + E from a factor file.
    Tensor {
        #[arg(long)]
        factors: PathBuf,
        /// Target ‖E‖_F.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "sign")]
        noise_kind: NoiseKind,
        /// Multiplier on the entrywise cap ‖E‖_F/n^1.5.
        #[arg(long, default_value_t = 1.0)]
        flatness_slack: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Config file; keys may also come from --set alone.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set seeds=5`.
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = io::create(path)?;
    f(&mut w)
}

fn sparsify_cmd(a: SparsifyArgs) -> Result<()> {
    let x = io::read_sample_matrix(io::open(&a.input)?)?;
    let m = a.samples.unwrap_or_else(|| sparsify::default_budget(x.dim()));
    let plan = match a.mode {
        Some(mode) => SamplePlan::new(m, mode, a.seed)?,
        None => SamplePlan::auto(m, x.dim(), a.seed)?,
    };
    let s = sparsify::sparsify_any(&x, a.dist, None, &plan)?;
    write_file(&a.out, |w| io::write_samples(w, &s))
}

fn complete_cmd(a: CompleteArgs) -> Result<()> {
    let samples = io::read_samples(io::open(&a.omega)?)?;
    let caps = if a.no_caps {
        None
    } else if let Some(p) = &a.caps {
        Some(io::read_caps(io::open(p)?)?)
    } else {
        let dist = tensamp::sampling::EntryDistribution::noisy_from_face_norms(&samples.face_sq_estimates())?;
        Some(dist.nu().expect("mixture carries nu").iter().map(|v| 2.0 * v).collect())
    };
    let cfg = WalsConfig {
        rank: a.rank,
        sweeps: a.iters,
        fresh_samples: a.fresh_samples,
        row_caps: caps,
        epsilon: completion::DEFAULT_EPSILON,
        seed: a.seed,
    };
    let out = completion::complete(&samples, &cfg, &RtpmConfig::with_seed(a.seed), None)?;
    write_file(&a.out, |w| io::write_factors(w, &out.factors))?;
    if let Some(d) = &a.diag {
        let json = io::to_json(&out.diagnostics)?;
        write_file(d, |w| Ok(writeln!(w, "{json}")?))?;
    }
    Ok(())
}

fn factorize_cmd(a: FactorizeArgs) -> Result<()> {
    let t = io::read_tensor_bin(io::open(&a.input)?, a.max_dim)?;
    let mut cfg = FactorizeConfig::new(a.samples, a.rank, a.seed);
    cfg.sweeps = a.iters;
    cfg.family = a.dist;
    cfg.fresh_samples = a.fresh_samples;
    let out = factorize::factorize(&t, &cfg, None)?;
    write_file(&a.out, |w| io::write_factors(w, &out.factors))?;
    if let Some(d) = &a.diag {
        let json = io::to_json(&out.diagnostics)?;
        write_file(d, |w| Ok(writeln!(w, "{json}")?))?;
    }
    Ok(())
}

fn synth_cmd(c: SynthCommand) -> Result<()> {
    match c {
        SynthCommand::Samples { n, p, bias, seed, out } => {
            let x = synth::gen_samples(n, p, bias, seed)?;
            write_file(&out, |w| io::write_sample_matrix(w, &x))
        }
        SynthCommand::Factors { n, rank, bias, sigma, seed, out, caps } => {
            let f = synth::gen_orthogonal_factors(n, rank, bias, sigma.as_deref(), seed)?;
            write_file(&out, |w| io::write_factors(w, &f))?;
            if let Some(c) = caps {
                let caps: Vec<f64> = f.row_norms().iter().map(|x| 2.0 * x).collect();
                write_file(&c, |w| io::write_caps(w, &caps))?;
            }
            Ok(())
        }
        SynthCommand::Claim { n, block, out, factors } => {
            let c = synth::claim_tensor(n, block)?;
            write_file(&out, |w| io::write_tensor_bin(w, &c.tensor))?;
            if let Some(f) = factors {
                write_file(&f, |w| io::write_factors(w, &c.factors))?;
            }
            Ok(())
        }
        SynthCommand::Tensor { factors, noise, noise_kind, flatness_slack, seed, out } => {
            let f = io::read_factors(io::open(&factors)?)?;
            let spec = NoiseSpec {
                frobenius_level: noise,
                kind: noise_kind,
                c: 1.0,
                flatness_slack,
            };
            let e = factorize::generate_noise(f.dim(), &spec, seed)?;
            let t = f.reconstruct()?.add(&e)?;
            write_file(&out, |w| io::write_tensor_bin(w, &t))
        }
    }
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => Config::parse(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    for o in &a.overrides {
        cfg.set(o)?;
    }
    let exp = Experiment::from_config(&cfg)?;
    let table = experiment::run(&exp)?;
    match &a.out {
        Some(p) => write_file(p, |w| table.write(w)),
        None => table.write(std::io::stdout().lock()),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Sparsify(a) => sparsify_cmd(a),
        Command::Complete(a) => complete_cmd(a),
        Command::Factorize(a) => factorize_cmd(a),
        Command::Synth(c) => synth_cmd(c),
        Command::Experiment(a) => experiment_cmd(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

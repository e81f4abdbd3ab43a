mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gradmine::analysis::{variance_report, ConvexProblem, VarianceReport};
use gradmine::data::{
    content_hash, gen_pianoroll, gen_seqclass, gen_seqlabel, load_dataset, save_dataset, Dataset, PianoRollConfig,
    SeqClassConfig, SeqLabelConfig,
};
use gradmine::fim::{mine_importance, FimConfig, ImportanceTable, DEFAULT_EPSILON, DEFAULT_LR_FIM, DEFAULT_T_MAX};
use gradmine::lstm::LstmDims;
use gradmine::optimizer::{all_gradients, train, MetricsLog, SamplerKind, TrainConfig, CSV_HEADER, RNNRBM_PRESETS};
use gradmine::parallel::available_workers;
use gradmine::rnn::RnnDims;
use gradmine::rnnrbm::RnnRbmDims;
use gradmine::seed::{self, streams};
use gradmine::{Lstm, Model, ModelKind, NormKind, Rnn, RnnRbm, Vector};

#[derive(Parser)]
#[command(name = "gradmine", version, about = "Importance-sampled SGD for recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Mine per-sample importance.
    Mine(MineArgs),
    /// Train one model and write per-epoch metrics.
    Train(TrainArgs),
    /// Train with uniform and importance sampling under one seed.
    Compare(CompareArgs),
    /// Report gradient variance under several sampling distributions.
    Variance(VarianceArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Task {
    Seqclass,
    Seqlabel,
    Pianoroll,
    Svm,
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    /// Fraction of hard samples (seqclass).
    #[arg(long, default_value_t = 0.25)]
    hard: f64,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Piano-roll width.
    #[arg(long, default_value_t = 88)]
    n_v: usize,
    #[arg(long, default_value_t = 4)]
    patterns: usize,
    /// Successor-rule probability (seqlabel).
    #[arg(long, default_value_t = 0.8)]
    regularity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Serialize)]
struct ModelArgs {
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    #[arg(long, default_value_t = 8)]
    embed: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    /// Override the vocabulary size inferred from the data.
    #[arg(long)]
    vocab: Option<usize>,
    /// RNN-RBM recurrent width.
    #[arg(long, default_value_t = 32)]
    rnn_hidden: usize,
    /// RNN-RBM hidden units.
    #[arg(long, default_value_t = 64)]
    rbm_hidden: usize,
    /// Gibbs steps for CD-k.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Split piano-roll sequences into chunks of this many frames.
    #[arg(long)]
    chunk: Option<usize>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: gradmine::Error| e.to_string())
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    s.parse().map_err(|e: gradmine::Error| e.to_string())
}

#[derive(Args, Serialize)]
struct MineArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_LR_FIM)]
    lr_fim: f64,
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    t_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter block used as importance proxy.
    #[arg(long)]
    base: Option<String>,
    #[arg(long, default_value = "frobenius", value_parser = parse_norm)]
    norm: NormKind,
    #[arg(long, env = "GRADMINE_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Serialize)]
struct TrainOpts {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    #[arg(long)]
    c_max: Option<f64>,
    /// Record exact gradient variance at each evaluation.
    #[arg(long)]
    grad_var: bool,
    /// RNN-RBM preset: 1 = 50-frame chunks at 0.3, 2 = 100-frame chunks at 0.003.
    #[arg(long)]
    preset: Option<usize>,
    #[arg(long, env = "GRADMINE_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, default_value = "uniform")]
    sampler: String,
    #[arg(long)]
    importance: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params_out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    importance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VarianceArgs {
    /// `svm` builds a random squared-hinge problem instead of reading data.
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 8)]
    embed: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    rnn_hidden: usize,
    #[arg(long, default_value_t = 64)]
    rbm_hidden: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Parameters written by `train --params-out`; defaults to the seeded initialization.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunRecord {
    command: Vec<String>,
    config_hash: String,
    seed: u64,
    input_hash: String,
    outputs: Vec<PathBuf>,
    wall_ms: f64,
}

struct Recorder {
    start: Instant,
    config_hash: String,
    seed: u64,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    fn new<T: Serialize>(args: &T, seed: u64, inputs: &[&Path]) -> anyhow::Result<Self> {
        Ok(Recorder {
            start: Instant::now(),
            config_hash: content_hash(&serde_json::to_vec(args)?),
            seed,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
        })
    }

    /// Write `<output>.run.json` next to every output.
    fn finish(&self, outputs: &[&Path]) -> anyhow::Result<()> {
        let mut bytes = Vec::new();
        for p in &self.inputs {
            bytes.extend(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
        }
        let record = RunRecord {
            command: std::env::args().collect(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            input_hash: content_hash(&bytes),
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        for out in outputs {
            let mut side = out.as_os_str().to_owned();
            side.push(".run.json");
            fs::write(PathBuf::from(side), serde_json::to_string_pretty(&record)? + "\n")?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Mine(a) => cmd_mine(a),
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Variance(a) => cmd_variance(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = e.chain().any(|c| {
                c.downcast_ref::<gradmine::Error>()
                    .is_some_and(gradmine::Error::is_divergence)
            });
            ExitCode::from(if diverged { 3 } else { 2 })
        }
    }
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<()> {
    let rec = Recorder::new(&a, a.seed, &[])?;
    let (ds, manifest) = match a.task {
        Task::Seqclass => {
            let d = SeqClassConfig::default();
            gen_seqclass(&SeqClassConfig {
                n: a.n,
                vocab: a.vocab,
                min_len: a.min_len.unwrap_or(d.min_len),
                max_len: a.max_len.unwrap_or(d.max_len),
                hard_fraction: a.hard,
                seed: a.seed,
            })?
        }
        Task::Seqlabel => gen_seqlabel(&SeqLabelConfig {
            n: a.n,
            vocab: a.vocab,
            min_len: a.min_len.unwrap_or(4),
            max_len: a.max_len.unwrap_or(16),
            regularity: a.regularity,
            seed: a.seed,
        })?,
        Task::Pianoroll => {
            let d = PianoRollConfig::default();
            gen_pianoroll(&PianoRollConfig {
                n: a.n,
                n_v: a.n_v,
                min_len: a.min_len.unwrap_or(d.min_len),
                max_len: a.max_len.unwrap_or(d.max_len),
                patterns: a.patterns,
                seed: a.seed,
            })?
        }
        Task::Svm => bail!("svm problems are built by `variance --task svm`, not stored"),
    };
    save_dataset(&ds, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    rec.finish(&[&a.out])
}

/// Model dimensions inferred from the dataset unless overridden.
fn rnn_for(ds: &Dataset, m: &ModelArgs) -> Rnn {
    Rnn {
        dims: RnnDims {
            vocab: m.vocab.unwrap_or(ds.vocab()),
            embed: m.embed,
            hidden: m.hidden,
        },
    }
}

fn lstm_for(ds: &Dataset, m: &ModelArgs) -> Lstm {
    Lstm {
        dims: LstmDims {
            vocab: m.vocab.unwrap_or(ds.vocab()),
            embed: m.embed,
            hidden: m.hidden,
            classes: ds.classes().max(2),
        },
    }
}

fn rnnrbm_for(ds: &Dataset, m: &ModelArgs) -> anyhow::Result<RnnRbm> {
    let Dataset::PianoRoll { n_v, .. } = ds else {
        bail!("the rnnrbm model needs a pianoroll dataset, got {}", ds.kind());
    };
    Ok(RnnRbm {
        dims: RnnRbmDims {
            visible: *n_v,
            hidden: m.rbm_hidden,
            rnn_hidden: m.rnn_hidden,
        },
        k: m.k,
    })
}

fn load(path: &Path, m: &ModelArgs) -> anyhow::Result<Dataset> {
    let ds = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok(match m.chunk {
        Some(c) => ds.chunked(c),
        None => ds,
    })
}

fn init_params<M: Model>(model: &M, seed: u64) -> M::Params {
    model.init(&mut seed::stream_rng(seed, streams::INIT))
}

fn mine_with<M: Model>(model: &M, ds: &Dataset, cfg: &FimConfig) -> anyhow::Result<ImportanceTable> {
    let samples = model.samples(ds)?;
    let init = init_params(model, cfg.seed);
    Ok(mine_importance(model, samples, &init, cfg)?)
}

fn cmd_mine(a: MineArgs) -> anyhow::Result<()> {
    let rec = Recorder::new(&a, a.seed, &[&a.data])?;
    let ds = load(&a.data, &a.model)?;
    let cfg = FimConfig {
        epsilon: a.epsilon,
        lr_fim: a.lr_fim,
        t_max: a.t_max,
        seed: a.seed,
        base_selector: a.base.clone(),
        norm_kind: a.norm,
        workers: a.workers.unwrap_or_else(available_workers),
        record_steps: false,
    };
    let table = match a.model.model {
        ModelKind::Rnn => mine_with(&rnn_for(&ds, &a.model), &ds, &cfg)?,
        ModelKind::Lstm => mine_with(&lstm_for(&ds, &a.model), &ds, &cfg)?,
        ModelKind::RnnRbm => mine_with(&rnnrbm_for(&ds, &a.model)?, &ds, &cfg)?,
    };
    table.save(&a.out)?;

    let min = table.probs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = table.probs.iter().copied().fold(0.0, f64::max);
    let mean = 1.0 / table.len() as f64;
    println!(
        "samples {}  p min {min:.6e}  max {max:.6e}  mean {mean:.6e}  non-converged {}",
        table.len(),
        table.non_converged()
    );
    if table.is_uniform() {
        eprintln!("warning: every sample got the same importance, so the table is uniform (is epsilon above the initial losses?)");
    }
    if table.non_converged() > 0 {
        eprintln!(
            "warning: {} samples hit t_max = {} before reaching epsilon",
            table.non_converged(),
            a.t_max
        );
    }
    rec.finish(&[&a.out])
}

fn train_config(o: &TrainOpts, sampler: SamplerKind) -> anyhow::Result<(TrainConfig, Option<usize>)> {
    let (mut lr, mut chunk) = (o.lr, o.model.chunk);
    if let Some(p) = o.preset {
        let Some(&(c, l)) = p.checked_sub(1).and_then(|i| RNNRBM_PRESETS.get(i)) else {
            bail!("preset must be 1 or 2");
        };
        lr = lr.or(Some(l));
        chunk = chunk.or(Some(c));
    }
    let cfg = TrainConfig {
        lr: lr.unwrap_or(0.1),
        epochs: o.epochs,
        sampler,
        seed: o.seed,
        eval_every: o.eval_every,
        c_max: o.c_max,
        track_grad_var: o.grad_var,
        workers: o.workers.unwrap_or_else(available_workers),
    };
    Ok((cfg, chunk))
}

fn load_table(path: &Path, n: usize) -> anyhow::Result<ImportanceTable> {
    let t = ImportanceTable::load(path).with_context(|| format!("loading importance file {}", path.display()))?;
    if t.len() != n {
        bail!(
            "importance file has {} entries but the dataset has {n} samples",
            t.len()
        );
    }
    Ok(t)
}

struct Trained {
    log: MetricsLog,
    params_json: String,
}

fn train_with<M: Model>(
    model: &M,
    ds: &Dataset,
    cfg: &TrainConfig,
    table: Option<&ImportanceTable>,
) -> anyhow::Result<Trained> {
    let samples = model.samples(ds)?;
    let init = init_params(model, cfg.seed);
    let (params, log) = train(model, samples, &init, cfg, table)?;
    Ok(Trained {
        log,
        params_json: serde_json::to_string(&params)?,
    })
}

fn run_training(o: &TrainOpts, sampler: SamplerKind, importance: Option<&Path>) -> anyhow::Result<Trained> {
    let (cfg, chunk) = train_config(o, sampler)?;
    let model_args = ModelArgs {
        chunk,
        ..o.model.clone()
    };
    let ds = load(&o.data, &model_args)?;
    let table = importance.map(|p| load_table(p, ds.len())).transpose()?;
    if sampler == SamplerKind::Importance && table.is_none() {
        bail!("--sampler importance needs --importance");
    }
    match o.model.model {
        ModelKind::Rnn => train_with(&rnn_for(&ds, &model_args), &ds, &cfg, table.as_ref()),
        ModelKind::Lstm => train_with(&lstm_for(&ds, &model_args), &ds, &cfg, table.as_ref()),
        ModelKind::RnnRbm => train_with(&rnnrbm_for(&ds, &model_args)?, &ds, &cfg, table.as_ref()),
    }
}

type Curve = Vec<(f64, f64)>;

fn curves(log: &MetricsLog) -> (Curve, Curve) {
    let loss = log.records.iter().map(|r| (r.epoch as f64, r.loss)).collect();
    let err = log.records.iter().map(|r| (r.epoch as f64, r.error_rate)).collect();
    (loss, err)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.opts.data];
    if let Some(p) = &a.importance {
        inputs.push(p);
    }
    let rec = Recorder::new(&a, a.opts.seed, &inputs)?;
    let sampler: SamplerKind = a.sampler.parse()?;
    let t = run_training(&a.opts, sampler, a.importance.as_deref())?;
    t.log.save_csv(&a.out)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(p) = &a.params_out {
        fs::write(p, &t.params_json)?;
        outputs.push(p);
    }
    if let Some(p) = &a.svg {
        let (loss, err) = curves(&t.log);
        let name = a.sampler.as_str();
        fs::write(
            p,
            svg::render(&[
                svg::Panel::new("training loss", vec![(name, loss)]),
                svg::Panel::new("error rate", vec![(name, err)]),
            ]),
        )?;
        outputs.push(p);
    }
    if let Some(last) = t.log.records.last() {
        println!(
            "epoch {}  loss {:.6}  error {:.4}",
            last.epoch, last.loss, last.error_rate
        );
    }
    rec.finish(&outputs)
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<()> {
    let rec = Recorder::new(&a, a.opts.seed, &[&a.opts.data, &a.importance])?;
    let uniform = run_training(&a.opts, SamplerKind::Uniform, Some(&a.importance))?;
    let is = run_training(&a.opts, SamplerKind::Importance, Some(&a.importance))?;

    let mut csv = format!("run,{CSV_HEADER}\n");
    for (name, log) in [("uniform", &uniform.log), ("importance", &is.log)] {
        for r in &log.records {
            csv.push_str(&format!("{name},{}\n", MetricsLog::csv_row(r)));
        }
    }
    fs::write(&a.out, csv)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(p) = &a.svg {
        let (ul, ue) = curves(&uniform.log);
        let (il, ie) = curves(&is.log);
        fs::write(
            p,
            svg::render(&[
                svg::Panel::new("training loss", vec![("uniform", ul), ("importance", il)]),
                svg::Panel::new("error rate", vec![("uniform", ue), ("importance", ie)]),
            ]),
        )?;
        outputs.push(p);
    }
    for (name, log) in [("uniform", &uniform.log), ("importance", &is.log)] {
        if let Some(last) = log.records.last() {
            println!(
                "{name:>10}: epoch {}  loss {:.6}  error {:.4}",
                last.epoch, last.loss, last.error_rate
            );
        }
    }
    rec.finish(&outputs)
}

fn variance_with<M: Model>(model: &M, ds: &Dataset, a: &VarianceArgs) -> anyhow::Result<VarianceReport> {
    let samples = model.samples(ds)?;
    let params: M::Params = match &a.params {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("reading params {}", p.display()))?,
        None => init_params(model, a.seed),
    };
    let grads = all_gradients(model, &params, samples, seed::derive(a.seed, streams::EVAL), 0)?;
    let table = a
        .importance
        .as_deref()
        .map(|p| load_table(p, samples.len()))
        .transpose()?;
    let mined = table.as_ref().map(|t| t.probs.as_slice());
    let ratio = table.as_ref().map(|t| t.norms.as_slice());
    Ok(variance_report(&grads, mined, None, ratio)?)
}

fn svm_problem(a: &VarianceArgs) -> anyhow::Result<ConvexProblem> {
    use rand::Rng;
    let mut rng = seed::stream_rng(a.seed, streams::DATA);
    let points = (0..a.n)
        .map(|i| {
            // Spread point norms so the Lipschitz bounds differ.
            let scale = 0.2 + 2.0 * i as f64 / a.n.max(1) as f64;
            Vector::random(a.dim, scale, &mut rng)
        })
        .collect();
    let labels = (0..a.n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    Ok(ConvexProblem::new(points, labels, a.lambda)?)
}

fn cmd_variance(a: VarianceArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.data.as_deref());
    inputs.extend(a.params.as_deref());
    inputs.extend(a.importance.as_deref());
    let rec = Recorder::new(&a, a.seed, &inputs)?;

    let report = if matches!(a.task, Some(Task::Svm)) {
        let prob = svm_problem(&a)?;
        let w = Vector::zeros(prob.dim());
        let grads = prob.gradients(&w);
        let bounds = prob.lipschitz_bounds();
        let table = a.importance.as_deref().map(|p| load_table(p, prob.len())).transpose()?;
        variance_report(
            &grads,
            table.as_ref().map(|t| t.probs.as_slice()),
            Some(&bounds),
            Some(&bounds),
        )?
    } else {
        let Some(data) = &a.data else {
            bail!("--data is required unless --task svm");
        };
        let kind: ModelKind = a.model.as_deref().unwrap_or("lstm").parse()?;
        let margs = ModelArgs {
            model: kind,
            embed: a.embed,
            hidden: a.hidden,
            vocab: None,
            rnn_hidden: a.rnn_hidden,
            rbm_hidden: a.rbm_hidden,
            k: a.k,
            chunk: None,
        };
        let ds = load(data, &margs)?;
        match kind {
            ModelKind::Rnn => variance_with(&rnn_for(&ds, &margs), &ds, &a)?,
            ModelKind::Lstm => variance_with(&lstm_for(&ds, &margs), &ds, &a)?,
            ModelKind::RnnRbm => variance_with(&rnnrbm_for(&ds, &margs)?, &ds, &a)?,
        }
    };
    if report.optimal.is_none() {
        eprintln!("warning: all gradients vanish; the optimal distribution is undefined");
    }
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&a.out, json.clone() + "\n")?;
    println!("{json}");
    rec.finish(&[&a.out])
}

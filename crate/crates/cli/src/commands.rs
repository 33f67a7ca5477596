use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ebnn::codegen::{self, compile_self_test, ArenaMode, CodegenOptions};
use ebnn::metrics::{measure_inference, network_cost_metrics, op_count, DeviceProfile};
use ebnn::presets::{self, ConvLayer};
use ebnn::screening::{budget_preset, screen, Family, ScreenConfig, SearchSpace};
use ebnn::trainer::{evaluate, train_latent, train_with, EpochStats, LatentNetwork, TrainConfig};
use ebnn::{
    memory_report, BitTensor, BlockInput, ElementKind, InputSpec, LabeledDataset, Network, PoolSpec, Shape,
};

use crate::data::{self, Split};
use crate::{ArchArgs, Cli, Command, DataArgs, Format, TrainOpts};

pub fn run(cli: &Cli) -> Result<String> {
    let f = cli.format;
    match &cli.command {
        Command::Train(a) => train_cmd(a, f),
        Command::Eval(a) => eval_cmd(a, f),
        Command::Screen(a) => screen_cmd(a, f),
        Command::Mem(a) => mem_cmd(a, f),
        Command::Codegen(a) => codegen_cmd(a, f),
        Command::Bench(a) => bench_cmd(a, f),
    }
}

fn load(args: &DataArgs, split: Split) -> Result<LabeledDataset> {
    let d = data::load(&args.data, args.labels.as_deref(), split)
        .with_context(|| format!("loading {}", args.data))?;
    Ok(match args.limit {
        Some(n) => d.take(n),
        None => d,
    })
}

/// The held-out split, when the dataset names one.
fn load_test(args: &DataArgs) -> Result<Option<LabeledDataset>> {
    if Path::new(&args.data).is_file() {
        return Ok(None);
    }
    load(args, Split::Test).map(Some)
}

fn take_number(s: &mut &str) -> Option<usize> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, rest) = s.split_at(end);
    *s = rest;
    num.parse().ok()
}

/// Parses `cFkKsS[pP/Q]` and `fN` tokens separated by commas.
pub fn parse_arch(spec: &str) -> Result<(Vec<ConvLayer>, Vec<usize>)> {
    let (mut convs, mut hidden) = (Vec::new(), Vec::new());
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let bad = || anyhow!("bad layer {token:?}; expected cFkKsS[pP/Q] or fN");
        let mut s = token;
        let field = |s: &mut &str, tag: char| -> Result<usize> {
            *s = s.strip_prefix(tag).ok_or_else(bad)?;
            take_number(s).ok_or_else(bad)
        };
        if token.starts_with('f') {
            hidden.push(field(&mut s, 'f')?);
        } else {
            if !hidden.is_empty() {
                bail!("convolution {token:?} after an FC layer");
            }
            let filters = field(&mut s, 'c')?;
            let kernel = field(&mut s, 'k')?;
            let stride = field(&mut s, 's')?;
            let pool = if s.is_empty() {
                None
            } else {
                let size = field(&mut s, 'p')?;
                let stride = field(&mut s, '/')?;
                Some(PoolSpec { size, stride })
            };
            convs.push(ConvLayer {
                filters,
                kernel,
                stride,
                pool,
            });
        }
        if !s.is_empty() {
            return Err(bad());
        }
    }
    Ok((convs, hidden))
}

fn resolve_arch(args: &ArchArgs, input: InputSpec, classes: usize) -> Result<Network> {
    if let Some(spec) = &args.arch {
        let (convs, hidden) = parse_arch(spec)?;
        return Ok(presets::build(input, &convs, &hidden, classes)?);
    }
    let family = args.family.unwrap_or(Family::Mlp1);
    let c = budget_preset(family, input, classes, args.budget)?
        .ok_or_else(|| anyhow!("no {family} network fits {} bytes", args.budget))?;
    Ok(c.net)
}

fn parse_shape(s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad shape {s:?}; expected CxHxW"))?;
    match dims[..] {
        [c, h, w] => Ok(Shape::new(c, h, w)),
        _ => bail!("bad shape {s:?}; expected CxHxW"),
    }
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = OsString::from(model.as_os_str());
    s.push(".latent");
    PathBuf::from(s)
}

fn train_config(t: &TrainOpts) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        seed: t.seed,
        ..TrainConfig::default()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn train_cmd(a: &crate::TrainArgs, f: Format) -> Result<String> {
    let data = load(&a.data, Split::Train)?;
    let test = load_test(&a.data)?;
    let shape = data.sample_shape().expect("non-empty");
    let cfg = TrainConfig {
        budget_bytes: Some(a.arch.budget),
        eval_split: a.eval_split,
        ..train_config(&a.train)
    };
    let mut out = String::new();
    if f == Format::Table {
        writeln!(
            out,
            "{:>5}  {:>10}  {:>9}  {:>9}",
            "epoch", "loss", "train %", "eval %"
        )?;
    }
    let log = |out: &mut String, s: &EpochStats| {
        let _ = match f {
            Format::Table => writeln!(
                out,
                "{:>5}  {:>10.5}  {:>9.2}  {:>9}",
                s.epoch,
                s.loss,
                s.train_accuracy * 100.0,
                s.eval_accuracy
                    .map_or("-".into(), |e| format!("{:.2}", e * 100.0))
            ),
            Format::Records => writeln!(
                out,
                "epoch={} loss={:.6} train_accuracy={:.4} eval_accuracy={}",
                s.epoch,
                s.loss,
                s.train_accuracy,
                opt(s.eval_accuracy)
            ),
        };
    };
    let outcome = match &a.resume {
        Some(path) => {
            let net = Network::load(path).with_context(|| format!("reading {}", path.display()))?;
            let side = sidecar_path(path);
            let bytes = std::fs::read(&side).with_context(|| format!("reading {}", side.display()))?;
            let latent = LatentNetwork::from_checkpoint(&net, &bytes)?;
            train_latent(latent, &data, &cfg, |s| log(&mut out, s))?
        }
        None => {
            let arch = resolve_arch(
                &a.arch,
                InputSpec::real(shape.channels, shape.height, shape.width),
                data.class_count,
            )?;
            train_with(&arch, &data, &cfg, |s| log(&mut out, s))?
        }
    };
    outcome
        .net
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let side = sidecar_path(&a.out);
    std::fs::write(&side, outcome.latent.to_sidecar())
        .with_context(|| format!("writing {}", side.display()))?;
    let mem = memory_report(&outcome.net)?;
    let test_acc = match &test {
        Some(t) => Some(evaluate(&outcome.net, t)?.accuracy),
        None => None,
    };
    match f {
        Format::Table => {
            write!(out, "\n{}", outcome.net.summary())?;
            writeln!(out, "P {} B, T {} B, M {} B", mem.params, mem.temps, mem.total)?;
            if let Some(acc) = test_acc {
                writeln!(out, "test accuracy {:.2} %", acc * 100.0)?;
            }
            writeln!(out, "wrote {} and {}", a.out.display(), side.display())?;
        }
        Format::Records => {
            writeln!(
                out,
                "model={} sidecar={} P={} T={} M={} test_accuracy={}",
                a.out.display(),
                side.display(),
                mem.params,
                mem.temps,
                mem.total,
                opt(test_acc)
            )?;
        }
    }
    Ok(out)
}

fn eval_cmd(a: &crate::EvalArgs, f: Format) -> Result<String> {
    let net = Network::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let split = if a.train_split || Path::new(&a.data.data).is_file() {
        Split::Train
    } else {
        Split::Test
    };
    let data = load(&a.data, split)?;
    let e = evaluate(&net, &data)?;
    let mut out = String::new();
    match f {
        Format::Table => {
            writeln!(
                out,
                "accuracy {:.2} % ({} of {})",
                e.accuracy * 100.0,
                e.correct,
                e.total
            )?;
            writeln!(
                out,
                "{:>5}  {:>8}  {:>8}  {:>8}",
                "class", "correct", "total", "acc %"
            )?;
            for (c, (&ok, &n)) in e.per_class_correct.iter().zip(&e.per_class_total).enumerate() {
                let acc = if n == 0 {
                    "-".to_string()
                } else {
                    format!("{:.2}", 100.0 * ok as f64 / n as f64)
                };
                writeln!(out, "{c:>5}  {ok:>8}  {n:>8}  {acc:>8}")?;
            }
        }
        Format::Records => {
            writeln!(
                out,
                "accuracy={:.6} correct={} total={}",
                e.accuracy, e.correct, e.total
            )?;
            for (c, (&ok, &n)) in e.per_class_correct.iter().zip(&e.per_class_total).enumerate() {
                writeln!(out, "class={c} correct={ok} total={n}")?;
            }
        }
    }
    Ok(out)
}

fn screen_cmd(a: &crate::ScreenArgs, f: Format) -> Result<String> {
    let data = load(&a.data, Split::Train)?;
    let test = load_test(&a.data)?;
    let shape = data.sample_shape().expect("non-empty");
    let space = SearchSpace::new(
        a.family,
        InputSpec::real(shape.channels, shape.height, shape.width),
        data.class_count,
        a.budget,
    );
    let cfg = ScreenConfig {
        top_k: a.top_k,
        train: train_config(&a.train),
        jobs: a.jobs,
        device: DeviceProfile::default(),
        measure_runs: a.measure_runs,
    };
    let report = screen(&space, &data, test.as_ref(), &cfg)?;
    let mut out = match f {
        Format::Table => format!("{report}\n"),
        Format::Records => report.to_records(),
    };
    if let (Some(path), Some(net)) = (&a.out, report.best_network()) {
        net.save(path)
            .with_context(|| format!("writing {}", path.display()))?;
        match f {
            Format::Table => writeln!(out, "wrote {}", path.display())?,
            Format::Records => writeln!(out, "best_model={}", path.display())?,
        }
    }
    Ok(out)
}

fn mem_cmd(a: &crate::MemArgs, f: Format) -> Result<String> {
    let net = match &a.model {
        Some(path) => Network::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let s = parse_shape(&a.input)?;
            resolve_arch(&a.arch, InputSpec::real(s.channels, s.height, s.width), a.classes)?
        }
    };
    let m = memory_report(&net)?;
    let fits = m.fits(a.arch.budget);
    Ok(match f {
        Format::Table => format!(
            "{}\n{}\nbudget {} B: {}\n",
            net.summary().trim_end(),
            m,
            a.arch.budget,
            if fits { "fits" } else { "does not fit" }
        ),
        Format::Records => format!("{}budget={}\nfits={}\n", m.to_records(), a.arch.budget, fits),
    })
}

fn codegen_cmd(a: &crate::CodegenArgs, f: Format) -> Result<String> {
    let net = Network::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let samples = match &a.data {
        Some(spec) if a.test_vectors > 0 => {
            let mut x = data::load_samples(spec, a.labels.as_deref(), Split::Test)?;
            x.truncate(a.test_vectors);
            x
        }
        _ => Vec::new(),
    };
    let bits: Vec<BitTensor> = match net.input.kind {
        ElementKind::Binary => codegen::binarize_samples(&samples)?,
        ElementKind::Real => Vec::new(),
    };
    let inputs: Vec<BlockInput<'_>> = match net.input.kind {
        ElementKind::Real => samples.iter().map(BlockInput::from).collect(),
        ElementKind::Binary => bits.iter().map(BlockInput::from).collect(),
    };
    let opts = CodegenOptions {
        prefix: a.prefix.clone(),
        emit_folded_bn: !a.raw_bn,
        arena: if a.caller_arena {
            ArenaMode::Caller
        } else {
            ArenaMode::Static
        },
        include_test_vectors: !inputs.is_empty(),
    };
    let code = ebnn::generate(&net, &opts, &inputs)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (h, c) = code.write_to(&a.out_dir)?;
    let t = memory_report(&net)?.temps;
    let verify = if a.verify {
        let dir = a.out_dir.clone();
        match compile_self_test(&code, &dir)? {
            None => "skipped (no C compiler)".to_string(),
            Some(run) if run.passed => format!("PASS ({} test vectors)", run.labels.len()),
            Some(run) => bail!("generated code failed its self-test:\n{}", run.stdout),
        }
    } else {
        "-".to_string()
    };
    Ok(match f {
        Format::Table => format!(
            "wrote {} and {}\nbuffer bytes T {t}, arena bytes 2T + 4 = {}\ntest vectors {}\nself-test {verify}\n",
            h.display(),
            c.display(),
            2 * t + 4,
            inputs.len()
        ),
        Format::Records => format!(
            "header={} source={} T={t} arena_bytes={} test_vectors={} self_test={}\n",
            h.display(),
            c.display(),
            2 * t + 4,
            inputs.len(),
            verify.split_whitespace().next().unwrap_or("-")
        ),
    })
}

fn bench_cmd(a: &crate::BenchArgs, f: Format) -> Result<String> {
    let net = Network::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let mut samples = data::load_samples(&a.data.data, a.data.labels.as_deref(), Split::Test)?;
    if let Some(n) = a.data.limit {
        samples.truncate(n);
    }
    let timing = measure_inference(&net, &samples, a.runs)?;
    let device = DeviceProfile::default();
    let ops = op_count(&net)?;
    let est = ops.estimated_ms(&device);
    let cost = network_cost_metrics(&net, &device, est)?;
    Ok(match f {
        Format::Table => format!(
            "host per-sample time   {:.6} ms (stddev {:.6}, {} runs of {} samples)\n\
             device ops             {}\n\
             device model time      {:.3} ms\n\
             CR                     {:.0}x\n\
             inference energy       {:.4} mW*ms\n\
             transmit energy        {:.4} mW*ms\n\
             EG                     {:.3}x\n",
            timing.mean_ms,
            timing.stddev_ms,
            timing.runs,
            samples.len(),
            ops.total(),
            est,
            cost.cr,
            cost.inference_energy,
            cost.transmit_energy,
            cost.eg
        ),
        Format::Records => format!(
            "host_mean_ms={:.6} host_stddev_ms={:.6} runs={} samples={} ops={} est_ms={:.6} cr={} inference_energy={:.6} transmit_energy={:.6} eg={:.6}\n",
            timing.mean_ms,
            timing.stddev_ms,
            timing.runs,
            samples.len(),
            ops.total(),
            est,
            cost.cr,
            cost.inference_energy,
            cost.transmit_energy,
            cost.eg
        ),
    })
}

//! Architecture screening under a device memory budget.
//!
//! A [`SearchSpace`] expands into candidate skeletons in a fixed nested
//! order. Candidates over budget are dropped, the rest are ranked by
//! descending parameter bytes `P` with ties kept in enumeration order, and
//! the top `k` are trained and evaluated. Training jobs run on a private
//! thread pool; results are gathered in rank order, so reports do not depend
//! on scheduling.
//!
//! The time column is the device op-count model from
//! [`metrics::OpCount`](crate::metrics::OpCount), which keeps reports
//! reproducible. Host wall-clock timing is opt-in.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::memory::{memory_report, MemoryReport};
use crate::metrics::{measure_inference, network_cost_metrics, op_count, DeviceProfile, OpCount};
use crate::model::{InputSpec, Network, PoolSpec};
use crate::presets::{self, ConvLayer};
use crate::trainer::{evaluate, train, TrainConfig};

/// Budget standing in for the larger low-energy Conv-1 model (5.99 KB).
pub const CONV1_LE_I_BUDGET: usize = 5990;
/// Budget standing in for the smaller low-energy Conv-1 model (4.63 KB).
pub const CONV1_LE_II_BUDGET: usize = 4630;
/// Usable SRAM of the reference device.
pub const DEFAULT_BUDGET: usize = 15360;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Mlp1,
    Mlp2,
    Conv1,
    Conv2,
    ConvPool1,
    ConvPool2,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Mlp1,
        Family::Mlp2,
        Family::Conv1,
        Family::Conv2,
        Family::ConvPool1,
        Family::ConvPool2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Mlp1 => "mlp-1",
            Family::Mlp2 => "mlp-2",
            Family::Conv1 => "conv-1",
            Family::Conv2 => "conv-2",
            Family::ConvPool1 => "convpool-1",
            Family::ConvPool2 => "convpool-2",
        }
    }

    /// Number of convolution blocks.
    pub fn conv_layers(self) -> usize {
        match self {
            Family::Mlp1 | Family::Mlp2 => 0,
            Family::Conv1 | Family::ConvPool1 => 1,
            Family::Conv2 | Family::ConvPool2 => 2,
        }
    }

    pub fn pooled(self) -> bool {
        matches!(self, Family::ConvPool1 | Family::ConvPool2)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Family::ALL
            .into_iter()
            .find(|f| f.name().replace('-', "") == key)
            .ok_or_else(|| {
                Error::Option(format!(
                    "unknown family {s:?}; expected one of {}",
                    Family::ALL.map(Family::name).join(", ")
                ))
            })
    }
}

/// Ranges searched for one family. Unused ranges are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub family: Family,
    pub input: InputSpec,
    pub classes: usize,
    pub budget_bytes: usize,
    /// First hidden FC width of MLP families.
    pub hidden: Vec<usize>,
    /// Second hidden FC width of MLP-2.
    pub hidden2: Vec<usize>,
    /// Filters of the first convolution.
    pub filters1: Vec<usize>,
    /// Filters of the second convolution.
    pub filters2: Vec<usize>,
    pub kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub pools: Vec<PoolSpec>,
    /// Hidden FC width between the convolutions and the classifier; 0 means
    /// no hidden layer.
    pub head_hidden: Vec<usize>,
}

fn steps(from: usize, to: usize, by: usize) -> Vec<usize> {
    (from..=to).step_by(by).collect()
}

impl SearchSpace {
    /// Default ranges for a family at a budget.
    pub fn new(family: Family, input: InputSpec, classes: usize, budget_bytes: usize) -> Self {
        let mut s = SearchSpace {
            family,
            input,
            classes,
            budget_bytes,
            hidden: Vec::new(),
            hidden2: Vec::new(),
            filters1: Vec::new(),
            filters2: Vec::new(),
            kernels: vec![3],
            conv_strides: Vec::new(),
            pools: Vec::new(),
            head_hidden: Vec::new(),
        };
        let mut head = vec![0];
        head.extend(steps(16, 256, 16));
        match family {
            Family::Mlp1 => s.hidden = steps(8, 512, 8),
            Family::Mlp2 => {
                s.hidden = steps(8, 256, 8);
                s.hidden2 = steps(8, 256, 8);
            }
            Family::Conv1 => {
                s.filters1 = steps(1, 32, 1);
                s.conv_strides = vec![3];
                s.head_hidden = head;
            }
            Family::Conv2 => {
                s.filters1 = steps(1, 16, 1);
                s.filters2 = steps(2, 32, 2);
                s.conv_strides = vec![2];
                s.head_hidden = head;
            }
            Family::ConvPool1 => {
                s.filters1 = steps(1, 32, 1);
                s.conv_strides = vec![1];
                s.pools = vec![
                    PoolSpec { size: 2, stride: 2 },
                    PoolSpec { size: 3, stride: 2 },
                    PoolSpec { size: 3, stride: 3 },
                ];
                s.head_hidden = head;
            }
            Family::ConvPool2 => {
                s.filters1 = steps(1, 16, 1);
                s.filters2 = steps(2, 32, 2);
                s.conv_strides = vec![1];
                s.pools = vec![PoolSpec { size: 2, stride: 2 }, PoolSpec { size: 3, stride: 2 }];
                s.head_hidden = head;
            }
        }
        s
    }

    /// MNIST input, ten classes.
    pub fn mnist(family: Family, budget_bytes: usize) -> Self {
        SearchSpace::new(
            family,
            presets::mnist_input(),
            presets::MNIST_CLASSES,
            budget_bytes,
        )
    }

    pub fn check(&self) -> Result<()> {
        if self.budget_bytes == 0 {
            // an empty result, not an error
            return Ok(());
        }
        if self.classes == 0 {
            return Err(Error::invalid("search space needs at least one class"));
        }
        let need: &[(&str, &Vec<usize>)] = match self.family {
            Family::Mlp1 => &[("hidden", &self.hidden)],
            Family::Mlp2 => &[("hidden", &self.hidden), ("hidden2", &self.hidden2)],
            Family::Conv1 | Family::ConvPool1 => &[
                ("filters1", &self.filters1),
                ("kernels", &self.kernels),
                ("conv_strides", &self.conv_strides),
                ("head_hidden", &self.head_hidden),
            ],
            Family::Conv2 | Family::ConvPool2 => &[
                ("filters1", &self.filters1),
                ("filters2", &self.filters2),
                ("kernels", &self.kernels),
                ("conv_strides", &self.conv_strides),
                ("head_hidden", &self.head_hidden),
            ],
        };
        for (name, range) in need {
            if range.is_empty() {
                return Err(Error::invalid(format!("search range {name} is empty")));
            }
        }
        if self.family.pooled() && self.pools.is_empty() {
            return Err(Error::invalid("search range pools is empty"));
        }
        Ok(())
    }

    /// Every hyperparameter combination, in enumeration order.
    pub fn hypers(&self) -> Vec<Hyper> {
        let mut out = Vec::new();
        match self.family {
            Family::Mlp1 => {
                for &h in &self.hidden {
                    out.push(Hyper::mlp(vec![h]));
                }
            }
            Family::Mlp2 => {
                for &h1 in &self.hidden {
                    for &h2 in &self.hidden2 {
                        out.push(Hyper::mlp(vec![h1, h2]));
                    }
                }
            }
            family => {
                let pools: Vec<Option<PoolSpec>> = if family.pooled() {
                    self.pools.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                let second: Vec<Option<usize>> = if family.conv_layers() == 2 {
                    self.filters2.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for &f1 in &self.filters1 {
                    for &f2 in &second {
                        for &kernel in &self.kernels {
                            for &stride in &self.conv_strides {
                                for &pool in &pools {
                                    for &head in &self.head_hidden {
                                        let layer = |filters| ConvLayer {
                                            filters,
                                            kernel,
                                            stride,
                                            pool,
                                        };
                                        let mut convs = vec![layer(f1)];
                                        convs.extend(f2.map(layer));
                                        out.push(Hyper {
                                            convs,
                                            hidden: if head == 0 { vec![] } else { vec![head] },
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Hyperparameters of one candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hyper {
    pub convs: Vec<ConvLayer>,
    pub hidden: Vec<usize>,
}

impl Hyper {
    fn mlp(hidden: Vec<usize>) -> Self {
        Hyper {
            convs: Vec::new(),
            hidden,
        }
    }

    pub fn build(&self, input: InputSpec, classes: usize) -> Result<Network> {
        presets::build(input, &self.convs, &self.hidden, classes)
    }
}

impl fmt::Display for Hyper {
    /// Space-free `key=value` pairs separated by single spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(c) = self.convs.first() {
            let filters: Vec<String> = self.convs.iter().map(|c| c.filters.to_string()).collect();
            parts.push(format!("filters={}", filters.join("x")));
            parts.push(format!("kernel={}", c.kernel));
            parts.push(format!("stride={}", c.stride));
            if let Some(p) = c.pool {
                parts.push(format!("pool={}/{}", p.size, p.stride));
            }
        }
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        parts.push(format!(
            "hidden={}",
            if hidden.is_empty() {
                "-".to_string()
            } else {
                hidden.join("x")
            }
        ));
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Position in enumeration order, before filtering.
    pub index: usize,
    pub family: Family,
    pub hyper: Hyper,
    pub net: Network,
    pub memory: MemoryReport,
}

/// Candidates that fit the budget, by descending `P` then enumeration index.
pub fn enumerate(space: &SearchSpace) -> Result<Vec<Candidate>> {
    space.check()?;
    if space.budget_bytes == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (index, hyper) in space.hypers().into_iter().enumerate() {
        // combinations whose shapes collapse are not candidates
        let Ok(net) = hyper.build(space.input, space.classes) else {
            continue;
        };
        if net.validate().is_err() {
            continue;
        }
        let memory = memory_report(&net)?;
        if memory.fits(space.budget_bytes) {
            out.push(Candidate {
                index,
                family: space.family,
                hyper,
                net,
                memory,
            });
        }
    }
    out.sort_by(|a, b| b.memory.params.cmp(&a.memory.params).then(a.index.cmp(&b.index)));
    Ok(out)
}

/// The largest-`P` candidate of a family's default space, if any fits.
pub fn budget_preset(
    family: Family,
    input: InputSpec,
    classes: usize,
    budget_bytes: usize,
) -> Result<Option<Candidate>> {
    Ok(
        enumerate(&SearchSpace::new(family, input, classes, budget_bytes))?
            .into_iter()
            .next(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenConfig {
    /// Number of top-ranked candidates to train; 0 reports memory only.
    pub top_k: usize,
    pub train: TrainConfig,
    /// Concurrent training jobs.
    pub jobs: usize,
    pub device: DeviceProfile,
    /// Host timing passes per trained candidate; 0 disables timing.
    pub measure_runs: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            top_k: 3,
            train: TrainConfig::default(),
            jobs: 1,
            device: DeviceProfile::default(),
            measure_runs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    /// 1-based position in the ranking.
    pub rank: usize,
    pub candidate: Candidate,
    pub ops: OpCount,
    /// Op-count model time on the device.
    pub estimated_ms: f64,
    /// Device energy of one inference, mW·ms.
    pub energy: f64,
    pub energy_gain: f64,
    pub accuracy: Option<f64>,
    pub measured_ms: Option<f64>,
    pub error: Option<String>,
    pub trained: Option<Network>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    pub rows: Vec<ScreenRow>,
    /// Row index of the most accurate trained candidate; ties go to the
    /// better-ranked one.
    pub best: Option<usize>,
}

impl ScreenReport {
    pub fn best_network(&self) -> Option<&Network> {
        self.best.and_then(|i| self.rows[i].trained.as_ref())
    }

    /// One line per candidate of space-separated `key=value` fields.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let m = &r.candidate.memory;
            out.push_str(&format!(
                "rank={} family={} {} P={} T={} M={} temp_fraction={:.4} est_ms={:.3} energy={:.4} eg={:.3} accuracy={} measured_ms={}",
                r.rank,
                r.candidate.family,
                r.candidate.hyper,
                m.params,
                m.temps,
                m.total,
                m.temp_fraction(),
                r.estimated_ms,
                r.energy,
                r.energy_gain,
                r.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.measured_ms.map_or("-".into(), |t| format!("{t:.4}")),
            ));
            if let Some(e) = &r.error {
                out.push_str(&format!(" error={:?}", e));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ScreenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4}  {:<11} {:<44} {:>7} {:>5} {:>7} {:>6} {:>9} {:>9} {:>8}",
            "rank", "family", "hyperparameters", "P", "T", "M", "2T/M", "est ms", "acc %", "host ms"
        )?;
        for r in &self.rows {
            let m = &r.candidate.memory;
            let acc = match (&r.accuracy, &r.error) {
                (Some(a), _) => format!("{:.2}", a * 100.0),
                (None, Some(_)) => "error".to_string(),
                (None, None) => "-".to_string(),
            };
            writeln!(
                f,
                "{:>4}  {:<11} {:<44} {:>7} {:>5} {:>7} {:>6.4} {:>9.3} {:>9} {:>8}",
                r.rank,
                r.candidate.family.name(),
                r.candidate.hyper.to_string(),
                m.params,
                m.temps,
                m.total,
                m.temp_fraction(),
                r.estimated_ms,
                acc,
                r.measured_ms.map_or("-".into(), |t| format!("{t:.4}")),
            )?;
        }
        if let Some(b) = self.best {
            write!(f, "best: rank {}", self.rows[b].rank)?;
        } else {
            write!(f, "best: none")?;
        }
        Ok(())
    }
}

/// Trained network, its accuracy and its measured host time.
type Trained = (Network, f64, Option<f64>);

/// Ranks the space, trains the top `k` candidates on `train_data` and
/// evaluates them on `eval_data` (or the training data when absent).
pub fn screen(
    space: &SearchSpace,
    train_data: &LabeledDataset,
    eval_data: Option<&LabeledDataset>,
    cfg: &ScreenConfig,
) -> Result<ScreenReport> {
    cfg.device.check()?;
    let candidates = enumerate(space)?;
    let eval_data = eval_data.unwrap_or(train_data);
    let k = cfg.top_k.min(candidates.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<Trained, String>> = pool.install(|| {
        candidates[..k]
            .par_iter()
            .map(|c| {
                let run = || -> Result<Trained> {
                    let out = train(&c.net, train_data, &cfg.train)?;
                    let acc = evaluate(&out.net, eval_data)?.accuracy;
                    let measured = if cfg.measure_runs > 0 {
                        let n = eval_data.len().min(100);
                        Some(measure_inference(&out.net, &eval_data.samples[..n], cfg.measure_runs)?.mean_ms)
                    } else {
                        None
                    };
                    Ok((out.net, acc, measured))
                };
                run().map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(candidates.len());
    let mut outcomes = outcomes.into_iter();
    for (i, candidate) in candidates.into_iter().enumerate() {
        let ops = op_count(&candidate.net)?;
        let estimated_ms = ops.estimated_ms(&cfg.device);
        let cost = network_cost_metrics(&candidate.net, &cfg.device, estimated_ms.max(f64::MIN_POSITIVE))?;
        let mut row = ScreenRow {
            rank: i + 1,
            candidate,
            ops,
            estimated_ms,
            energy: cost.inference_energy,
            energy_gain: cost.eg,
            accuracy: None,
            measured_ms: None,
            error: None,
            trained: None,
        };
        if i < k {
            match outcomes.next().expect("one outcome per trained candidate") {
                Ok((net, acc, measured)) => {
                    row.accuracy = Some(acc);
                    row.measured_ms = measured;
                    row.trained = Some(net);
                }
                Err(e) => row.error = Some(e),
            }
        }
        rows.push(row);
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(a) = r.accuracy {
            if best.is_none_or(|b| a > rows[b].accuracy.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(i);
            }
        }
    }
    Ok(ScreenReport { rows, best })
}

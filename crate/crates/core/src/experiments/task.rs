use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Each label coordinate is a clamped linear function of the whole sequence.
    LinearTeacher,
    /// One marked token carries the class; the rest are distractors.
    SparseTokenLookup,
    /// The label is the most frequent token class.
    SequenceMajority,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::LinearTeacher)
    }
}

/// How raw token embeddings are scaled before they reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenNorm {
    None,
    /// Every token row has unit Euclidean norm.
    #[default]
    UnitRows,
    /// Every token row has norm `1/√n`, so the sequence has unit Frobenius norm.
    UnitSequence,
}

impl TokenNorm {
    pub fn apply(self, x: &mut Matrix) {
        let n = x.rows() as f64;
        let target = match self {
            TokenNorm::None => return,
            TokenNorm::UnitRows => 1.0,
            TokenNorm::UnitSequence => 1.0 / n.sqrt(),
        };
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                let c = target / norm;
                row.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub seq_len: usize,
    pub d_model: usize,
    /// Label dimension k (number of classes for classification kinds).
    pub label_dim: usize,
    /// Additive target noise (linear teacher) or label flip probability.
    pub noise: f64,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub seed: u64,
    pub normalization: TokenNorm,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::LinearTeacher,
            seq_len: 8,
            d_model: 8,
            label_dim: 1,
            noise: 0.1,
            train_sizes: vec![64, 128, 256, 512, 1024],
            test_size: 10_000,
            seed: 0,
            normalization: TokenNorm::UnitRows,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.d_model == 0 || self.label_dim == 0 {
            return Err(Error::domain("seq_len, d_model and label_dim must be positive"));
        }
        if self.kind.is_classification() && self.label_dim < 2 {
            return Err(Error::domain("classification tasks need label_dim >= 2"));
        }
        if self.kind == TaskKind::SparseTokenLookup && self.seq_len < 2 {
            return Err(Error::domain("sparse-token-lookup needs at least 2 tokens"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::domain(format!("noise = {} must be nonnegative", self.noise)));
        }
        if self.kind.is_classification() && self.noise > 1.0 {
            return Err(Error::domain("label flip probability must be at most 1"));
        }
        if self.train_sizes.is_empty() {
            return Err(Error::domain("train_sizes is empty"));
        }
        if self.train_sizes[0] < 2 || self.train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!(
                "train_sizes {:?} must be strictly increasing and at least 2",
                self.train_sizes
            )));
        }
        if self.test_size == 0 {
            return Err(Error::domain("test_size must be positive"));
        }
        Ok(())
    }

    pub fn max_train_size(&self) -> usize {
        self.train_sizes.last().copied().unwrap_or(0)
    }

    /// Whether the test set is at least ten times the largest training set.
    pub fn test_size_adequate(&self) -> bool {
        self.test_size >= 10 * self.max_train_size()
    }

    /// Standard error bound `√(1/(4·test_size))` of a held-out mean of [0, 1] losses.
    pub fn estimator_error(&self) -> f64 {
        (1.0 / (4.0 * self.test_size as f64)).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Matrix>,
    /// Targets in `[-1, 1]^k`; classification targets are `2·onehot − 1`.
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn prefix(&self, m: usize) -> Result<Dataset> {
        if m > self.len() {
            return Err(Error::InsufficientData(format!(
                "asked for {m} examples, only {} available",
                self.len()
            )));
        }
        Ok(Dataset {
            inputs: self.inputs[..m].to_vec(),
            targets: self.targets[..m].to_vec(),
        })
    }
}

/// Fixed draw of the task's latent structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    /// One `n × d` teacher matrix per label coordinate.
    Teacher(Vec<Matrix>),
    /// Class prototypes (k × d) and the marker direction (unit, length d).
    Prototypes { classes: Matrix, marker: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub config: TaskConfig,
    pub generator: Generator,
    /// The largest training set; smaller ones are its prefixes.
    pub train: Dataset,
    pub test: Dataset,
}

impl TaskData {
    pub fn train_set(&self, m: usize) -> Result<Dataset> {
        self.train.prefix(m)
    }

    /// Noise-free target for `x` under the linear teacher.
    pub fn teacher_target(&self, x: &Matrix) -> Option<Vec<f64>> {
        match &self.generator {
            Generator::Teacher(ts) => Some(teacher_signal(ts, x)),
            Generator::Prototypes { .. } => None,
        }
    }
}

const TEACHER_GAIN: f64 = 0.5;
const TOKEN_JITTER: f64 = 0.5;
const MARKER_GAIN: f64 = 2.0;

fn teacher_signal(teachers: &[Matrix], x: &Matrix) -> Vec<f64> {
    let norm = x.frobenius_norm();
    teachers
        .iter()
        .map(|t| {
            let s = if norm > 0.0 {
                TEACHER_GAIN * dot(t.as_slice(), x.as_slice()) / norm
            } else {
                0.0
            };
            s.clamp(-1.0, 1.0)
        })
        .collect()
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    (0..k).map(|j| if j == c { 1.0 } else { -1.0 }).collect()
}

fn draw_generator(cfg: &TaskConfig, r: &mut Rng) -> Generator {
    match cfg.kind {
        TaskKind::LinearTeacher => Generator::Teacher(
            (0..cfg.label_dim)
                .map(|_| Matrix::random_normal(cfg.seq_len, cfg.d_model, 1.0, r))
                .collect(),
        ),
        _ => {
            let classes = Matrix::random_normal(cfg.label_dim, cfg.d_model, 1.0, r);
            let mut marker: Vec<f64> = (0..cfg.d_model).map(|_| rng::normal(r)).collect();
            let norm = dot(&marker, &marker).sqrt();
            marker.iter_mut().for_each(|v| *v /= norm);
            Generator::Prototypes { classes, marker }
        }
    }
}

fn flip(cfg: &TaskConfig, c: usize, r: &mut Rng) -> usize {
    if cfg.noise > 0.0 && rng::uniform(r) < cfg.noise {
        rng::below(r, cfg.label_dim)
    } else {
        c
    }
}

fn draw_example(cfg: &TaskConfig, gen: &Generator, r: &mut Rng) -> (Matrix, Vec<f64>) {
    let (n, d, k) = (cfg.seq_len, cfg.d_model, cfg.label_dim);
    match gen {
        Generator::Teacher(ts) => {
            let mut x = Matrix::random_normal(n, d, 1.0, r);
            cfg.normalization.apply(&mut x);
            let y = teacher_signal(ts, &x)
                .into_iter()
                .map(|s| (s + cfg.noise * rng::normal(r)).clamp(-1.0, 1.0))
                .collect();
            (x, y)
        }
        Generator::Prototypes { classes, marker } => {
            let labels: Vec<usize> = (0..n).map(|_| rng::below(r, k)).collect();
            let mut x = Matrix::zeros(n, d);
            for (i, &c) in labels.iter().enumerate() {
                let proto = classes.row(c);
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    *v = proto[j] + TOKEN_JITTER * rng::normal(r);
                }
            }
            let class = if cfg.kind == TaskKind::SparseTokenLookup {
                let j = rng::below(r, n);
                for (v, m) in x.row_mut(j).iter_mut().zip(marker) {
                    *v += MARKER_GAIN * m;
                }
                labels[j]
            } else {
                let mut counts = vec![0usize; k];
                labels.iter().for_each(|&c| counts[c] += 1);
                // Ties go to the lowest class index.
                (0..k).fold(0, |b, c| if counts[c] > counts[b] { c } else { b })
            };
            cfg.normalization.apply(&mut x);
            let class = flip(cfg, class, r);
            (x, one_hot(k, class))
        }
    }
}

fn draw_set(cfg: &TaskConfig, gen: &Generator, stream: u64, size: usize) -> Dataset {
    let base = rng::split(cfg.seed, stream);
    let (inputs, targets) = (0..size)
        .map(|i| draw_example(cfg, gen, &mut rng::seeded(rng::split(base, i as u64))))
        .unzip();
    Dataset { inputs, targets }
}

/// Draws the task. Example `i` of each split has its own RNG stream, so the
/// training set for a smaller `m` is exactly a prefix of the one for a larger `m`.
pub fn make_task(cfg: &TaskConfig) -> Result<TaskData> {
    cfg.validate()?;
    let generator = draw_generator(cfg, &mut rng::seeded(rng::split(cfg.seed, 0)));
    let train = draw_set(cfg, &generator, 1, cfg.max_train_size());
    let test = draw_set(cfg, &generator, 2, cfg.test_size);
    Ok(TaskData {
        config: cfg.clone(),
        generator,
        train,
        test,
    })
}

/// Random token sequences with the given normalization and no labels.
pub fn random_inputs(n: usize, d: usize, count: usize, norm: TokenNorm, seed: u64) -> Vec<Matrix> {
    (0..count)
        .map(|i| {
            let mut x = Matrix::random_normal(n, d, 1.0, &mut rng::seeded(rng::split(seed, i as u64)));
            norm.apply(&mut x);
            x
        })
        .collect()
}

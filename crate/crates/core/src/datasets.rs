//! Federated datasets: grouped CSV ingestion, synthetic heterogeneous
//! generators, and the Dirichlet/lognormal label partitioner.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::{ClientObjective, RidgeProblem, SoftmaxProblem};

/// Features and targets of one client (or of the test split).
///
/// For classification `y` holds integer class labels stored as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBlock {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl DataBlock {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.y
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidData(format!("label {v} is not a class index")))
                }
            })
            .collect()
    }

    fn select(x: &Array2<f64>, y: &Array1<f64>, rows: &[usize]) -> DataBlock {
        DataBlock {
            x: x.select(Axis(0), rows),
            y: y.select(Axis(0), rows),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// Immutable per-client training blocks plus a held-out test block.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset {
    pub clients: Vec<DataBlock>,
    pub test: DataBlock,
    /// Feature dimension, bias column included.
    pub dim: usize,
    pub task: Task,
    /// Row indices of each client in the training pool.
    pub source_rows: Vec<Vec<usize>>,
}

impl FederatedDataset {
    fn new(
        clients: Vec<DataBlock>,
        test: DataBlock,
        task: Task,
        source_rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let dim = clients
            .first()
            .ok_or_else(|| Error::InvalidData("dataset has no clients".into()))?
            .x
            .ncols();
        for (i, c) in clients.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidData(format!("client {i} holds no samples")));
            }
            if c.x.ncols() != dim {
                return Err(Error::InvalidData(format!("client {i} has wrong feature count")));
            }
        }
        if test.x.ncols() != dim {
            return Err(Error::InvalidData("test block has wrong feature count".into()));
        }
        let ds = FederatedDataset {
            clients,
            test,
            dim,
            task,
            source_rows,
        };
        ds.check_partition()?;
        Ok(ds)
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn pool_size(&self) -> usize {
        self.clients.iter().map(DataBlock::len).sum()
    }

    /// Model dimension for this task: `d` for regression, `d·C` for softmax.
    pub fn model_dim(&self) -> usize {
        match self.task {
            Task::Regression => self.dim,
            Task::Classification { classes } => self.dim * classes,
        }
    }

    /// Verifies that client row sets are disjoint and cover `0..pool_size`.
    pub fn check_partition(&self) -> Result<()> {
        let n = self.pool_size();
        if self.source_rows.len() != self.clients.len() {
            return Err(Error::InvalidData("row provenance does not match clients".into()));
        }
        let mut seen = vec![false; n];
        for (c, rows) in self.clients.iter().zip(&self.source_rows) {
            if rows.len() != c.len() {
                return Err(Error::InvalidData("row provenance does not match block size".into()));
            }
            for &r in rows {
                if r >= n || seen[r] {
                    return Err(Error::InvalidData(format!("row {r} assigned twice or out of range")));
                }
                seen[r] = true;
            }
        }
        Ok(())
    }

    /// Builds one objective per client with penalty coefficient `alpha`.
    pub fn objectives(&self, alpha: f64) -> Result<Vec<ClientObjective>> {
        let n_total = self.pool_size();
        let n_clients = self.n_clients();
        self.clients
            .iter()
            .map(|c| match self.task {
                Task::Regression => Ok(ClientObjective::Ridge(RidgeProblem::new(
                    c.x.clone(),
                    c.y.clone(),
                    alpha,
                )?)),
                Task::Classification { classes } => Ok(ClientObjective::Softmax(
                    SoftmaxProblem::new(c.x.clone(), c.labels()?, alpha, classes, n_clients, n_total)?,
                )),
            })
            .collect()
    }

    /// All training rows stacked in client order.
    pub fn pooled(&self) -> DataBlock {
        let xs: Vec<_> = self.clients.iter().map(|c| c.x.view()).collect();
        let ys: Vec<_> = self.clients.iter().map(|c| c.y.view()).collect();
        DataBlock {
            x: ndarray::concatenate(Axis(0), &xs).expect("shared width"),
            y: ndarray::concatenate(Axis(0), &ys).expect("vectors"),
        }
    }
}

fn with_bias(features: Array2<f64>) -> Array2<f64> {
    let (n, d) = features.dim();
    let mut x = Array2::ones((n, d + 1));
    x.slice_mut(s![.., ..d]).assign(&features);
    x
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Grouped-CSV regression source. Each unique value combination of the first
/// `group_prefix_cols` columns becomes one client; the last column is the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRegressionSpec {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    pub group_prefix_cols: usize,
    #[serde(default = "default_true")]
    pub scale: bool,
    #[serde(default)]
    pub has_header: bool,
}

fn default_true() -> bool {
    true
}

fn read_numeric_csv(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::InvalidData(format!("{}: {other:?}", path.display())),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("not a number: {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = rows.len();
    let mut x = Array2::zeros((n, width - 1));
    let mut y = Array1::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::InvalidData(format!(
                "row {} has {} columns, expected {width}",
                i + 1,
                r.len()
            )));
        }
        for j in 0..width - 1 {
            x[[i, j]] = r[j];
        }
        y[i] = r[width - 1];
    }
    Ok((x, y))
}

/// Min-max scaling fitted on `fit`, applied to each matrix given.
/// Constant columns map to zero.
fn min_max_scale(fit: &Array2<f64>, targets: &mut [&mut Array2<f64>]) {
    for j in 0..fit.ncols() {
        let col = fit.column(j);
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = hi - lo;
        for m in targets.iter_mut() {
            m.column_mut(j).mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
    }
}

/// Loads a grouped regression CSV.
///
/// Features are min-max scaled with training-pool statistics (reused for the
/// test file), targets are left unscaled, and a constant-1 bias column is
/// appended. Without a test file the training pool doubles as the test block.
pub fn load_csv_regression(spec: &CsvRegressionSpec) -> Result<FederatedDataset> {
    let rows = read_numeric_csv(&spec.path, spec.has_header)?;
    if rows.is_empty() {
        return Err(Error::InvalidData(format!("{} holds no rows", spec.path.display())));
    }
    let width = rows[0].len();
    if width < 2 {
        return Err(Error::InvalidData("need at least one feature and a target".into()));
    }
    if spec.group_prefix_cols >= width {
        return Err(invalid(format!(
            "group_prefix_cols = {} must be below the column count {width}",
            spec.group_prefix_cols
        )));
    }
    let (mut x, y) = rows_to_matrix(&rows, width)?;

    let mut group_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let key: Vec<u64> = r[..spec.group_prefix_cols].iter().map(|v| v.to_bits()).collect();
        let next = members.len();
        let g = *group_of.entry(key).or_insert(next);
        if g == next {
            members.push(Vec::new());
        }
        members[g].push(i);
    }

    let mut test = match &spec.test_path {
        Some(p) => {
            let t = read_numeric_csv(p, spec.has_header)?;
            if t.is_empty() {
                return Err(Error::InvalidData(format!("{} holds no rows", p.display())));
            }
            Some(rows_to_matrix(&t, width)?)
        }
        None => None,
    };
    if spec.scale {
        let fit = x.clone();
        match test.as_mut() {
            Some((tx, _)) => min_max_scale(&fit, &mut [&mut x, tx]),
            None => min_max_scale(&fit, &mut [&mut x]),
        }
    }
    let x = with_bias(x);
    let test = match test {
        Some((tx, ty)) => DataBlock { x: with_bias(tx), y: ty },
        None => DataBlock { x: x.clone(), y: y.clone() },
    };
    let clients = members.iter().map(|m| DataBlock::select(&x, &y, m)).collect();
    FederatedDataset::new(clients, test, Task::Regression, members)
}

// ---------------------------------------------------------------------------
// Synthetic regression
// ---------------------------------------------------------------------------

/// Heterogeneous sparse linear regression.
///
/// Client `i` draws features `z + hetero·μ_i` with `z, μ_i ~ N(0, I)` and a
/// trailing bias column. Targets are `x·w_true + noise` for every client, so
/// clients differ only in their feature distribution. With `hetero = 0` every
/// client samples the same distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRegressionSpec {
    pub clients: usize,
    /// Model dimension, bias included.
    pub dim: usize,
    pub k_true: usize,
    pub hetero: f64,
    pub noise_sigma: f64,
    pub n_per_client: usize,
    #[serde(default = "default_test_per_client")]
    pub test_per_client: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_test_per_client() -> usize {
    10
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn synth_regression(spec: &SynthRegressionSpec, seed: u64) -> Result<(FederatedDataset, Vec<f64>)> {
    let d = spec.dim;
    if spec.clients == 0 || d == 0 || spec.n_per_client == 0 {
        return Err(invalid("clients, dim and n_per_client must be positive"));
    }
    if spec.k_true > d {
        return Err(invalid(format!("k_true = {} exceeds dim = {d}", spec.k_true)));
    }
    if !(0.0..=1.0).contains(&spec.hetero) {
        return Err(invalid(format!("hetero = {} outside [0, 1]", spec.hetero)));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support = index::sample(&mut rng, d, spec.k_true).into_vec();
    support.sort_unstable();
    let mut w_true = vec![0.0; d];
    for &j in &support {
        w_true[j] = normal(&mut rng);
    }

    let truth = Array1::from(w_true.clone());
    let mut clients = Vec::with_capacity(spec.clients);
    let mut test_parts = Vec::with_capacity(spec.clients);
    let mut source_rows = Vec::with_capacity(spec.clients);
    let mut offset = 0;
    for _ in 0..spec.clients {
        let shift: Vec<f64> = (0..d - 1).map(|_| spec.hetero * normal(&mut rng)).collect();
        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let feats = Array2::from_shape_fn((n, d - 1), |(_, j)| shift[j] + normal(rng));
            let x = with_bias(feats);
            let clean = x.dot(&truth);
            let y = clean.mapv(|v| v + spec.noise_sigma * normal(rng));
            DataBlock { x, y }
        };
        let train = draw(spec.n_per_client, &mut rng);
        let test = draw(spec.test_per_client, &mut rng);
        source_rows.push((offset..offset + spec.n_per_client).collect());
        offset += spec.n_per_client;
        clients.push(train);
        test_parts.push(test);
    }
    let test = stack_blocks(&test_parts, d);
    let ds = FederatedDataset::new(clients, test, Task::Regression, source_rows)?;
    Ok((ds, w_true))
}

fn stack_blocks(parts: &[DataBlock], d: usize) -> DataBlock {
    if parts.iter().all(DataBlock::is_empty) {
        return DataBlock { x: Array2::zeros((0, d)), y: Array1::zeros(0) };
    }
    let xs: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
    let ys: Vec<_> = parts.iter().map(|p| p.y.view()).collect();
    DataBlock {
        x: ndarray::concatenate(Axis(0), &xs).expect("shared width"),
        y: ndarray::concatenate(Axis(0), &ys).expect("vectors"),
    }
}

// ---------------------------------------------------------------------------
// Dirichlet / lognormal partitioning
// ---------------------------------------------------------------------------

/// Label-skew and quantity-skew parameters for splitting a labelled pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "default_lognormal_sigma2")]
    pub lognormal_sigma2: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dirichlet_alpha() -> f64 {
    0.3
}

fn default_lognormal_sigma2() -> f64 {
    0.3
}

/// Integer counts proportional to `weights` summing exactly to `total`,
/// by largest remainder (ties to the lowest index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // every gamma draw underflowed; fall back to a single random class
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Assigns sample indices to clients.
///
/// Client sizes follow normalized lognormal(0, σ²) draws rounded by largest
/// remainder (every client keeps at least one sample); class mixtures follow
/// Dirichlet(α·1). Samples are handed out one at a time over a shuffled slot
/// order, each slot drawing a class from its client's mixture restricted to
/// classes that still have samples left.
pub fn dirichlet_partition(labels: &[usize], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if n == 0 {
        return Err(invalid("cannot partition an empty label set"));
    }
    if spec.clients == 0 || spec.clients > n {
        return Err(invalid(format!(
            "client count {} must be in 1..={n}",
            spec.clients
        )));
    }
    if !(spec.dirichlet_alpha > 0.0) || !(spec.lognormal_sigma2 >= 0.0) {
        return Err(invalid("dirichlet_alpha must be > 0 and lognormal_sigma2 >= 0"));
    }
    let n_clients = spec.clients;
    if n_clients == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let sizes: Vec<f64> = if spec.lognormal_sigma2 == 0.0 {
        vec![1.0; n_clients]
    } else {
        let ln = LogNormal::new(0.0, spec.lognormal_sigma2.sqrt()).expect("sigma checked");
        (0..n_clients).map(|_| ln.sample(&mut rng)).collect()
    };
    let mut counts = largest_remainder(&sizes, n);
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..n_clients).max_by_key(|&i| (counts[i], usize::MAX - i)).unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }

    let mixtures: Vec<Vec<f64>> = (0..n_clients)
        .map(|_| dirichlet(&mut rng, spec.dirichlet_alpha, classes))
        .collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        pools[c].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }

    let mut slots: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    slots.shuffle(&mut rng);

    let mut out: Vec<Vec<usize>> = counts.iter().map(|&k| Vec::with_capacity(k)).collect();
    for client in slots {
        let mix = &mixtures[client];
        let mass: f64 = (0..classes).filter(|&c| !pools[c].is_empty()).map(|c| mix[c]).sum();
        let class = if mass > 0.0 {
            let mut u = rng.random::<f64>() * mass;
            let mut pick = None;
            for c in (0..classes).filter(|&c| !pools[c].is_empty()) {
                pick = Some(c);
                if u < mix[c] {
                    break;
                }
                u -= mix[c];
            }
            pick.expect("some class has samples left")
        } else {
            // the client's mixture has no mass on any remaining class
            let open: Vec<usize> = (0..classes).filter(|&c| !pools[c].is_empty()).collect();
            open[rng.random_range(0..open.len())]
        };
        out[client].push(pools[class].pop().expect("class non-empty"));
    }
    for rows in out.iter_mut() {
        rows.sort_unstable();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic classification
// ---------------------------------------------------------------------------

/// Gaussian class-conditional data split by [`dirichlet_partition`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClassificationSpec {
    /// Feature dimension, bias included.
    pub dim: usize,
    pub classes: usize,
    pub n_total: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Scale of the class means.
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n_test() -> usize {
    1000
}

fn default_class_sep() -> f64 {
    1.0
}

pub fn synth_classification(spec: &SynthClassificationSpec, seed: u64) -> Result<FederatedDataset> {
    let (d, c) = (spec.dim, spec.classes);
    if c < 2 {
        return Err(invalid("need at least two classes"));
    }
    if d < 2 || spec.n_total == 0 {
        return Err(invalid("dim must be >= 2 and n_total positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = Array2::from_shape_fn((c, d - 1), |_| spec.class_sep * normal(&mut rng));
    let draw = |n: usize, rng: &mut ChaCha8Rng| {
        let y = Array1::from_shape_fn(n, |i| (i % c) as f64);
        let feats = Array2::from_shape_fn((n, d - 1), |(i, j)| means[[i % c, j]] + normal(rng));
        (with_bias(feats), y)
    };
    let (x, y) = draw(spec.n_total, &mut rng);
    let (tx, ty) = draw(spec.n_test, &mut rng);
    let labels: Vec<usize> = (0..spec.n_total).map(|i| i % c).collect();
    let parts = dirichlet_partition(&labels, &spec.partition)?;
    // Client blocks are re-indexed so that provenance refers to the pool order.
    let clients = parts.iter().map(|rows| DataBlock::select(&x, &y, rows)).collect();
    FederatedDataset::new(
        clients,
        DataBlock { x: tx, y: ty },
        Task::Classification { classes: c },
        parts,
    )
}

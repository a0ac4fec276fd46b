//! Smooth convex client losses with exact full-batch gradients.
//!
//! Two families are provided: ridge linear regression
//! `½‖Aw − b‖² + (α/4)‖w‖²` and multinomial softmax regression with an
//! `(α/2)‖w‖²` penalty and the `N/n` sample weighting used for federated
//! averaging. Sparsity constraints are not part of the loss; they are
//! enforced by the algorithms through their proxes.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{check_dim, invalid, Error, Result};

/// Loss and gradient of one client's local objective.
pub trait Objective: Send + Sync {
    /// Model dimension.
    fn dim(&self) -> usize;

    fn loss(&self, w: &[f64]) -> Result<f64>;

    /// Writes the gradient at `w` into `out`.
    fn gradient_into(&self, w: &[f64], out: &mut [f64]) -> Result<()>;

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(w, &mut g)?;
        Ok(g)
    }
}

/// `f(w) = ½‖Aw − b‖² + (α/4)‖w‖²`.
#[derive(Clone, Debug)]
pub struct RidgeProblem {
    a: Array2<f64>,
    b: Array1<f64>,
    alpha: f64,
    // AᵀA and Aᵀb, cached when the Gram route is cheaper than two matvecs.
    gram: Option<(Array2<f64>, Array1<f64>)>,
}

impl RidgeProblem {
    pub fn new(a: Array2<f64>, b: Array1<f64>, alpha: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(invalid("ridge problem needs at least one row and column"));
        }
        check_dim(a.nrows(), b.len())?;
        if !(alpha >= 0.0) {
            return Err(invalid(format!("ridge alpha {alpha} must be >= 0")));
        }
        let a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
        let gram = if a.nrows() > 2 * a.ncols() {
            let at = a.t();
            Some((at.dot(&a), at.dot(&b)))
        } else {
            None
        };
        Ok(RidgeProblem { a, b, alpha, gram })
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.b.view()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `AᵀA` as a dense matrix.
    pub fn gram_matrix(&self) -> Array2<f64> {
        match &self.gram {
            Some((g, _)) => g.clone(),
            None => self.a.t().dot(&self.a),
        }
    }

    /// Largest eigenvalue of `AᵀA` by power iteration.
    pub fn gram_spectral_norm(&self) -> f64 {
        power_iteration(&self.a, 1e-10, 100_000)
    }
}

impl Objective for RidgeProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let wv = ArrayView1::from(w);
        let r = self.a.dot(&wv) - &self.b;
        Ok(0.5 * r.dot(&r) + 0.25 * self.alpha * wv.dot(&wv))
    }

    fn gradient_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), w.len())?;
        check_dim(self.dim(), out.len())?;
        let wv = ArrayView1::from(w);
        let half_alpha = 0.5 * self.alpha;
        let mut g = ArrayViewMut1::from(&mut *out);
        g.assign(&wv);
        g *= half_alpha;
        match &self.gram {
            Some((gram, atb)) => {
                for ((gj, row), bj) in g.iter_mut().zip(gram.rows()).zip(atb) {
                    *gj += row.dot(&wv) - bj;
                }
            }
            // Row-wise products beat the generic matrix-vector kernel at these sizes.
            None => {
                for (row, bi) in self.a.rows().into_iter().zip(&self.b) {
                    let r = row.dot(&wv) - bi;
                    g.scaled_add(r, &row);
                }
            }
        }
        Ok(())
    }
}

/// Multinomial softmax regression for one client.
///
/// Parameters are flattened class-major: entry `k * d + j` is the weight of
/// feature `j` for class `k`. The bias is an ordinary feature column of ones.
#[derive(Clone, Debug)]
pub struct SoftmaxProblem {
    x: Array2<f64>,
    y: Vec<usize>,
    alpha: f64,
    classes: usize,
    // N / n: client count over global sample count.
    sample_weight: f64,
}

impl SoftmaxProblem {
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        alpha: f64,
        classes: usize,
        n_clients: usize,
        n_total: usize,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("softmax needs at least two classes"));
        }
        if x.nrows() == 0 {
            return Err(invalid("softmax problem needs at least one sample"));
        }
        check_dim(x.nrows(), y.len())?;
        if let Some(bad) = y.iter().find(|&&c| c >= classes) {
            return Err(invalid(format!("label {bad} outside 0..{classes}")));
        }
        if n_clients == 0 || n_total == 0 {
            return Err(invalid("client and sample counts must be positive"));
        }
        if !(alpha >= 0.0) {
            return Err(invalid(format!("softmax alpha {alpha} must be >= 0")));
        }
        Ok(SoftmaxProblem {
            x,
            y,
            alpha,
            classes,
            sample_weight: n_clients as f64 / n_total as f64,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    /// Class logits for every sample, `n × C`.
    fn logits(&self, w: &[f64]) -> Array2<f64> {
        let weights = ArrayView2::from_shape((self.classes, self.x.ncols()), w)
            .expect("dimension checked by caller");
        self.x.dot(&weights.t())
    }
}

/// Row-wise `log Σ exp` as `(m, log Σ exp(z − m))` with `m = max z`. The
/// second part uses `ln_1p` so a dominant logit keeps full relative precision.
fn log_sum_exp_parts(row: ArrayView1<'_, f64>) -> (f64, f64) {
    let mut arg = 0;
    for (i, &z) in row.iter().enumerate() {
        if z > row[arg] {
            arg = i;
        }
    }
    let m = row[arg];
    let rest: f64 = row.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, z)| (z - m).exp()).sum();
    (m, rest.ln_1p())
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let (m, tail) = log_sum_exp_parts(row);
    m + tail
}

impl Objective for SoftmaxProblem {
    fn dim(&self) -> usize {
        self.x.ncols() * self.classes
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        let z = self.logits(w);
        let nll: f64 = z
            .axis_iter(Axis(0))
            .zip(&self.y)
            .map(|(row, &label)| {
                let (m, tail) = log_sum_exp_parts(row);
                (m - row[label]) + tail
            })
            .sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        Ok(self.sample_weight * nll + 0.5 * self.alpha * sq)
    }

    fn gradient_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), w.len())?;
        check_dim(self.dim(), out.len())?;
        let mut resid = self.logits(w);
        for (mut row, &label) in resid.axis_iter_mut(Axis(0)).zip(&self.y) {
            let lse = log_sum_exp(row.view());
            row.mapv_inplace(|z| (z - lse).exp());
            row[label] -= 1.0;
        }
        // (P − Y)ᵀ X, shape C × d, row-major matches the flattened layout.
        let g = resid.t().dot(&self.x);
        for ((o, gi), wi) in out.iter_mut().zip(g.iter()).zip(w) {
            *o = self.sample_weight * gi + self.alpha * wi;
        }
        Ok(())
    }
}

/// The per-client objective handed to the federation engine.
#[derive(Clone, Debug)]
pub enum ClientObjective {
    Ridge(RidgeProblem),
    Softmax(SoftmaxProblem),
}

impl Objective for ClientObjective {
    fn dim(&self) -> usize {
        match self {
            ClientObjective::Ridge(p) => p.dim(),
            ClientObjective::Softmax(p) => p.dim(),
        }
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        match self {
            ClientObjective::Ridge(p) => p.loss(w),
            ClientObjective::Softmax(p) => p.loss(w),
        }
    }

    fn gradient_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ClientObjective::Ridge(p) => p.gradient_into(w, out),
            ClientObjective::Softmax(p) => p.gradient_into(w, out),
        }
    }
}

/// `(1/N) Σ f_i(w)`.
pub fn global_loss<O: Objective>(objectives: &[O], w: &[f64]) -> Result<f64> {
    if objectives.is_empty() {
        return Err(invalid("no client objectives"));
    }
    let mut total = 0.0;
    for o in objectives {
        total += o.loss(w)?;
    }
    Ok(total / objectives.len() as f64)
}

/// `(1/N) Σ ∇f_i(w)`.
pub fn global_gradient<O: Objective>(objectives: &[O], w: &[f64]) -> Result<Vec<f64>> {
    if objectives.is_empty() {
        return Err(invalid("no client objectives"));
    }
    let mut total = vec![0.0; w.len()];
    let mut g = vec![0.0; w.len()];
    for o in objectives {
        o.gradient_into(w, &mut g)?;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
    }
    let n = objectives.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    Ok(total)
}

/// Largest eigenvalue of `AᵀA` by power iteration on the normal operator.
fn power_iteration(a: &Array2<f64>, tol: f64, max_iter: usize) -> f64 {
    let d = a.ncols();
    // Deterministic start with no special alignment to coordinate axes.
    let mut x = Array1::from_iter((0..d).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()));
    let n0 = x.dot(&x).sqrt();
    x /= n0;
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = a.t().dot(&a.dot(&x));
        let next = x.dot(&y);
        let ny = y.dot(&y).sqrt();
        if ny == 0.0 {
            return 0.0;
        }
        x = y / ny;
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Smoothness constant `max_i λ_max(A_iᵀA_i) + α/2` over ridge clients.
pub fn estimate_smoothness(objectives: &[ClientObjective]) -> Result<f64> {
    if objectives.is_empty() {
        return Err(invalid("no client objectives"));
    }
    let mut l = 0.0f64;
    for o in objectives {
        match o {
            ClientObjective::Ridge(p) => {
                l = l.max(p.gram_spectral_norm() + 0.5 * p.alpha);
            }
            ClientObjective::Softmax(_) => {
                return Err(Error::Unsupported(
                    "smoothness estimation is only implemented for ridge objectives".into(),
                ))
            }
        }
    }
    Ok(l)
}

/// Minimizer of `(1/N) Σ f_i` over ridge clients: solves
/// `(Σ A_iᵀA_i + (α_i/2) I) w = Σ A_iᵀ b_i` by Cholesky.
pub fn ridge_consensus_optimum(problems: &[&RidgeProblem]) -> Result<Vec<f64>> {
    let first = problems
        .first()
        .ok_or_else(|| invalid("no ridge problems"))?;
    let d = first.dim();
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for p in problems {
        check_dim(d, p.dim())?;
        let g = p.gram_matrix();
        let atb = p.a.t().dot(&p.b);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += g[[i, j]];
            }
            h[(i, i)] += 0.5 * p.alpha;
            rhs[i] += atb[i];
        }
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| invalid("normal equations are not positive definite"))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Convenience over [`ridge_consensus_optimum`] for engine objectives.
pub fn consensus_optimum(objectives: &[ClientObjective]) -> Result<Vec<f64>> {
    let ridge: Vec<&RidgeProblem> = objectives
        .iter()
        .map(|o| match o {
            ClientObjective::Ridge(p) => Ok(p),
            ClientObjective::Softmax(_) => Err(Error::Unsupported(
                "closed-form optimum requires ridge objectives".into(),
            )),
        })
        .collect::<Result<_>>()?;
    ridge_consensus_optimum(&ridge)
}

//! Kernels: the empirical kernel of a random feature block, its expectation,
//! reference kernels for inducing-point blocks, and the two numerical
//! experiments (concentration of `K̂` around `K`, and equality of the
//! random-feature and inducing-point posteriors).

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::blocks::{InducingPointBlock, RandomFeatureBlock};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::{linalg, Matrix, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// First-order arc-cosine kernel, the expectation of ReLU features.
    ArcCosine1,
    Rbf { lengthscale: f64 },
    Linear,
    /// `⟨φ(a), φ(b)⟩` for a fixed random feature block.
    EmpiricalRf { block: Box<RandomFeatureBlock> },
}

impl KernelSpec {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::EmpiricalRf { block } => Some(block.input_dim()),
            _ => None,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::shape("kernel arguments", (1, a.len()), (1, b.len())));
        }
        match self {
            KernelSpec::ArcCosine1 => Ok(arc_cosine_unchecked(a, b)),
            KernelSpec::Rbf { lengthscale } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                Ok((-d2 / (2.0 * lengthscale * lengthscale)).exp())
            }
            KernelSpec::Linear => Ok(dot(a, b)),
            KernelSpec::EmpiricalRf { block } => empirical_kernel(block, a, b),
        }
    }

    /// `K(X, Z)` with shape `rows(X) x rows(Z)`.
    pub fn gram(&self, x: &Matrix, z: &Matrix) -> Result<Matrix> {
        if x.cols() != z.cols() {
            return Err(Error::shape("kernel gram", x.shape(), z.shape()));
        }
        match self {
            KernelSpec::Linear => x.matmul_t(z),
            KernelSpec::EmpiricalRf { block } => block.apply(x)?.matmul_t(&block.apply(z)?),
            _ => {
                let mut k = Matrix::zeros(x.rows(), z.rows());
                for i in 0..x.rows() {
                    for j in 0..z.rows() {
                        k.set(i, j, self.eval(x.row(i), z.row(j))?);
                    }
                }
                Ok(k)
            }
        }
    }

    /// `K(X, Z)` recorded on the tape, differentiable in `X`.
    pub fn cross_on_tape<'t>(&self, x: Var<'t>, z: &Matrix) -> Result<Var<'t>> {
        let tape = x.tape();
        if x.shape().1 != z.cols() {
            return Err(Error::shape("kernel gram", x.shape(), z.shape()));
        }
        match self {
            KernelSpec::Linear => x.matmul(tape.constant(z.transpose())),
            KernelSpec::Rbf { lengthscale } => {
                let zn: Vec<f64> = (0..z.rows()).map(|j| dot(z.row(j), z.row(j))).collect();
                let cross = x.matmul(tape.constant(z.transpose()))?.scale(-2.0);
                let d2 = cross.add_col(x.square().row_sum())?.add_row(tape.constant(Matrix::row_vector(zn)))?;
                Ok(d2.scale(-0.5 / (lengthscale * lengthscale)).exp())
            }
            KernelSpec::EmpiricalRf { block } => block.apply_on_tape(x)?.matmul(tape.constant(block.apply(z)?.transpose())),
            KernelSpec::ArcCosine1 => Err(Error::Unsupported(
                "arc-cosine kernel inside an inducing point block of a trained layer; use rbf, linear or an empirical random-feature kernel".into(),
            )),
        }
    }

    /// `k(x_i, x_i)` as an `n x 1` column on the tape.
    pub fn diag_on_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        match self {
            KernelSpec::Rbf { .. } => Ok(tape.constant(Matrix::filled(x.shape().0, 1, 1.0))),
            KernelSpec::Linear => Ok(x.square().row_sum()),
            KernelSpec::EmpiricalRf { block } => Ok(block.apply_on_tape(x)?.square().row_sum()),
            KernelSpec::ArcCosine1 => Err(Error::Unsupported("arc-cosine kernel on the tape".into())),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `K̂(a, b) = (1/r) Σ_j σ_K(aᵀw_j) σ_K(bᵀw_j) = ⟨φ(a), φ(b)⟩`.
pub fn empirical_kernel(block: &RandomFeatureBlock, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != block.input_dim() || b.len() != block.input_dim() {
        return Err(Error::shape("empirical kernel", (a.len(), b.len()), (block.input_dim(), block.input_dim())));
    }
    let pa = block.feature_vector(a)?;
    let pb = block.feature_vector(b)?;
    Ok(dot(&pa, &pb))
}

fn arc_cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    na * nb / (2.0 * PI) * (theta.sin() + (PI - theta) * cos)
}

/// `E_w[ReLU(aᵀw) ReLU(bᵀw)]` for `w ~ N(0, I)`:
/// `(‖a‖‖b‖ / 2π)(sin θ + (π − θ) cos θ)`.
pub fn arc_cosine_closed_form(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("arc-cosine kernel", (1, a.len()), (1, b.len())));
    }
    if norm(a) == 0.0 || norm(b) == 0.0 {
        return Err(Error::InvalidArgument("arc-cosine kernel of a zero vector".into()));
    }
    Ok(arc_cosine_unchecked(a, b))
}

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} g(x) dx`.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E_w[σ(aᵀw) σ(bᵀw)]` for `w ~ N(0, I)`.
///
/// ReLU uses the arc-cosine closed form. Other activations integrate the
/// equivalent bivariate normal of `(aᵀw, bᵀw)` with 2-D Gauss–Hermite
/// quadrature, which is exact to near machine precision for the smooth
/// bounded activations used here.
pub fn expected_kernel(activation: ActivationKind, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("expected kernel", (1, a.len()), (1, b.len())));
    }
    if activation == ActivationKind::Relu {
        return Ok(arc_cosine_unchecked(a, b));
    }
    let (na, nb) = (norm(a), norm(b));
    let c = if na > 0.0 && nb > 0.0 { (dot(a, b) / (na * nb)).clamp(-1.0, 1.0) } else { 0.0 };
    let s = (1.0 - c * c).max(0.0).sqrt();
    let (x, w) = gauss_hermite(80);
    let mut total = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let z1 = std::f64::consts::SQRT_2 * xi;
        let fa = activation.apply(na * z1);
        for (xj, wj) in x.iter().zip(&w) {
            let z2 = std::f64::consts::SQRT_2 * xj;
            total += wi * wj * fa * activation.apply(nb * (c * z1 + s * z2));
        }
    }
    Ok(total / PI)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub activation: ActivationKind,
    pub dim: usize,
    pub r_grid: Vec<usize>,
    pub n_pairs: usize,
    pub seeds: Vec<u64>,
    /// Seed for the fixed set of evaluation pairs.
    pub pair_seed: u64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            activation: ActivationKind::Relu,
            dim: 10,
            r_grid: vec![64, 256, 1024, 4096, 16384],
            n_pairs: 50,
            seeds: (0..5).collect(),
            pair_seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub r: usize,
    pub seed: u64,
    pub sup_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationTable {
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationTable {
    /// `(r, mean over seeds of the sup error)` in grid order.
    pub fn mean_by_r(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(r, _, _)| *r == row.r) {
                Some(e) => {
                    e.1 += row.sup_error;
                    e.2 += 1;
                }
                None => out.push((row.r, row.sup_error, 1)),
            }
        }
        out.into_iter().map(|(r, s, c)| (r, s / c as f64)).collect()
    }

    /// Least-squares slope of `log(mean error)` against `log r`.
    pub fn log_log_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.mean_by_r().iter().map(|&(r, e)| ((r as f64).ln(), e.ln())).collect();
        fit_slope(&pts)
    }

    pub fn is_decreasing(&self) -> bool {
        self.mean_by_r().windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng::normal(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Pairs of unit vectors with `|cos θ| ≤ 1 − 1e-6`.
pub fn sample_pairs(seed: u64, dim: usize, n_pairs: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = rng::stream(seed, streams::KERNEL);
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let a = unit_vector(&mut rng, dim);
        let b = unit_vector(&mut rng, dim);
        if dot(&a, &b).abs() <= 1.0 - 1e-6 {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Sup error of `K̂` against `K` over a fixed set of pairs, for each
/// feature count and seed.
pub fn concentration_experiment(config: &ConcentrationConfig) -> Result<ConcentrationTable> {
    if config.r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("r grid must be strictly ascending".into()));
    }
    let pairs = sample_pairs(config.pair_seed, config.dim, config.n_pairs);
    let exact: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| expected_kernel(config.activation, a, b))
        .collect::<Result<_>>()?;
    let a_mat = Matrix::from_rows(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>())?;
    let b_mat = Matrix::from_rows(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
    let mut rows = Vec::new();
    for &r in &config.r_grid {
        for &seed in &config.seeds {
            let block = RandomFeatureBlock::new(config.dim, r, config.activation, 1.0, rng::derive_seed(seed, &[r as u64]), false)?;
            let pa = block.apply(&a_mat)?;
            let pb = block.apply(&b_mat)?;
            let sup_error = (0..pairs.len())
                .map(|i| (dot(pa.row(i), pb.row(i)) - exact[i]).abs())
                .fold(0.0, f64::max);
            rows.push(ConcentrationRow { r, seed, sup_error });
        }
    }
    Ok(ConcentrationTable { rows })
}

/// Which side of the equivalence is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceCase {
    RandomFeature,
    InducingPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub case: String,
    pub max_abs_discrepancy: f64,
}

/// Posterior mean and covariance of `f` at a set of points.
#[derive(Clone, Debug)]
pub struct GaussianMarginal {
    pub mean: Matrix,
    pub cov: Matrix,
}

/// Inducing-point form: `μ̃ = αᵀm`, `Σ̃ = K_FF − αᵀ(K_ZZ − S)α`, with
/// `α = K_ZZ⁻¹ K_ZF`.
pub fn inducing_point_posterior(k_ff: &Matrix, k_fz: &Matrix, k_zz: &Matrix, m: &Matrix, s: &Matrix) -> Result<GaussianMarginal> {
    let alpha = linalg::solve(k_zz, &k_fz.transpose())?;
    let mean = alpha.t_matmul(m)?;
    let inner = k_zz.sub(s)?;
    let cov = k_ff.sub(&alpha.t_matmul(&inner.matmul(&alpha)?)?)?;
    Ok(GaussianMarginal { mean, cov })
}

/// Random-feature form: `Φ_F μ`, `Φ_F Σ Φ_Fᵀ`.
pub fn random_feature_posterior(phi_f: &Matrix, mu: &Matrix, sigma: &Matrix) -> Result<GaussianMarginal> {
    Ok(GaussianMarginal {
        mean: phi_f.matmul(mu)?,
        cov: phi_f.matmul(sigma)?.matmul_t(phi_f)?,
    })
}

fn discrepancy(a: &GaussianMarginal, b: &GaussianMarginal) -> Result<f64> {
    Ok(a.mean.sub(&b.mean)?.max_abs().max(a.cov.sub(&b.cov)?.max_abs()))
}

/// Maps `(μ_new, Σ_new)` to `m = Φ_Z μ_new`, `S = Φ_Z Σ_new Φ_Zᵀ` and
/// compares both posterior forms for an RB with the empirical kernel.
pub fn rf_equivalence(block: &RandomFeatureBlock, z: &Matrix, f: &Matrix, mu_new: &Matrix, sigma_new: &Matrix) -> Result<f64> {
    let phi_z = block.apply(z)?;
    let phi_f = block.apply(f)?;
    if phi_z.rows() != phi_z.cols() {
        return Err(Error::InvalidArgument(format!(
            "need as many inducing points as features, got {} and {}",
            phi_z.rows(),
            phi_z.cols()
        )));
    }
    let m = phi_z.matmul(mu_new)?;
    let s = phi_z.matmul(sigma_new)?.matmul_t(&phi_z)?;
    let k_zz = phi_z.matmul_t(&phi_z)?;
    let k_fz = phi_f.matmul_t(&phi_z)?;
    let k_ff = phi_f.matmul_t(&phi_f)?;
    let ip = inducing_point_posterior(&k_ff, &k_fz, &k_zz, &m, &s)?;
    let rf = random_feature_posterior(&phi_f, mu_new, sigma_new)?;
    discrepancy(&ip, &rf)
}

/// Same comparison for an IPB, whose random-feature side carries the
/// offset `K_FF − K_FZ K_ZZ⁻¹ K_ZF`.
pub fn ipb_equivalence(block: &InducingPointBlock, f: &Matrix, mu_new: &Matrix, sigma_new: &Matrix) -> Result<f64> {
    let z = block.points();
    let kernel = block.kernel();
    let phi_z = block.apply(z)?;
    let phi_f = block.apply(f)?;
    let m = phi_z.matmul(mu_new)?;
    let s = phi_z.matmul(sigma_new)?.matmul_t(&phi_z)?;
    let k_zz = kernel.gram(z, z)?;
    let k_fz = kernel.gram(f, z)?;
    let k_ff = kernel.gram(f, f)?;
    let ip = inducing_point_posterior(&k_ff, &k_fz, &k_zz, &m, &s)?;
    let mut rf = random_feature_posterior(&phi_f, mu_new, sigma_new)?;
    let offset = k_ff.sub(&k_fz.matmul(&linalg::solve(&k_zz, &k_fz.transpose())?)?)?;
    rf.cov = rf.cov.add(&offset)?;
    discrepancy(&ip, &rf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub n: usize,
    pub r: usize,
    pub dim: usize,
    pub instances: usize,
    pub activation: ActivationKind,
    pub lengthscale: f64,
    pub seed: u64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            n: 8,
            r: 4,
            dim: 3,
            instances: 10,
            activation: ActivationKind::Relu,
            lengthscale: 1.0,
            seed: 0,
        }
    }
}

const MAX_COND: f64 = 1e8;
const MAX_RESAMPLES: usize = 10;

fn random_spd(rng: &mut impl Rng, r: usize) -> Matrix {
    let a = rng::normal_matrix(rng, r, r);
    let mut s = a.matmul_t(&a).expect("square").scale(1.0 / r as f64);
    for i in 0..r {
        s.set(i, i, s.get(i, i) + 0.1);
    }
    s
}

/// Runs `instances` random RB cases and the same number of RBF-IPB cases.
/// Inducing sets with `cond(Φ_Z) > 1e8` are redrawn up to ten times.
pub fn equivalence_check(config: &EquivalenceConfig) -> Result<Vec<EquivalenceRow>> {
    let mut rows = Vec::new();
    for inst in 0..config.instances {
        let mut rng = rng::stream(rng::derive_seed(config.seed, &[inst as u64]), streams::KERNEL);
        let block = RandomFeatureBlock::new(config.dim, config.r, config.activation, 1.0, rng.gen(), false)?;
        let f = rng::normal_matrix(&mut rng, config.n, config.dim);
        let mu = rng::normal_matrix(&mut rng, config.r, 1);
        let sigma = random_spd(&mut rng, config.r);

        let mut z = None;
        for _ in 0..MAX_RESAMPLES {
            let cand = rng::normal_matrix(&mut rng, config.r, config.dim);
            if linalg::condition_number(&block.apply(&cand)?) <= MAX_COND {
                z = Some(cand);
                break;
            }
        }
        let z = z.ok_or_else(|| Error::InvalidArgument(format!("Φ(Z) stayed singular after {MAX_RESAMPLES} draws")))?;
        rows.push(EquivalenceRow {
            case: format!("rf-{inst}"),
            max_abs_discrepancy: rf_equivalence(&block, &z, &f, &mu, &sigma)?,
        });

        let zi = rng::normal_matrix(&mut rng, config.r, config.dim);
        let ipb = InducingPointBlock::new(KernelSpec::Rbf { lengthscale: config.lengthscale }, zi)?;
        rows.push(EquivalenceRow {
            case: format!("ipb-rbf-{inst}"),
            max_abs_discrepancy: ipb_equivalence(&ipb, &f, &mu, &sigma)?,
        });
    }
    Ok(rows)
}

pub fn write_equivalence_csv<W: Write>(rows: &[EquivalenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

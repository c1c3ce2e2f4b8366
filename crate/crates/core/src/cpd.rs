//! Canonical polyadic decomposition of the received tensor via alternating
//! least squares, used to separate user components.
//!
//! The solver alternates exact linear least-squares updates over the d data
//! modes and the channel mode. After each sweep every data-mode factor
//! column is scaled to unit norm with the aggregate scale pushed into the
//! channel column, which keeps the Grassmannian representative convention
//! and makes component amplitudes readable for power thresholding.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{kron_chain, C64, DenseTensor, TensorShape};

/// Hard cap on the component count accepted by [`cpd_als`].
pub const MAX_COMPONENTS: usize = 4096;

/// A rank-K set of per-mode factor vectors plus channel vectors.
///
/// `factors[i]` is the `T_i x K` matrix whose column `k` is the mode-i
/// vector of component `k`; `channels` is `N x K`.
#[derive(Debug, Clone)]
pub struct FactorSet {
    shape: TensorShape,
    factors: Vec<DMatrix<C64>>,
    channels: DMatrix<C64>,
}

impl FactorSet {
    pub fn new(
        shape: TensorShape,
        factors: Vec<DMatrix<C64>>,
        channels: DMatrix<C64>,
    ) -> Result<Self> {
        if factors.len() != shape.order() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} factor matrices, got {}",
                shape.order(),
                factors.len()
            )));
        }
        let k = channels.ncols();
        for (i, f) in factors.iter().enumerate() {
            if f.nrows() != shape.dims()[i] || f.ncols() != k {
                return Err(Error::ShapeMismatch(format!(
                    "factor {} is {}x{}, expected {}x{}",
                    i,
                    f.nrows(),
                    f.ncols(),
                    shape.dims()[i],
                    k
                )));
            }
        }
        if channels.nrows() != shape.antennas() {
            return Err(Error::ShapeMismatch(format!(
                "channel matrix has {} rows, expected {}",
                channels.nrows(),
                shape.antennas()
            )));
        }
        Ok(Self {
            shape,
            factors,
            channels,
        })
    }

    /// Empty (K = 0) factor set; composes to the zero tensor.
    pub fn empty(shape: TensorShape) -> Self {
        let factors = shape
            .dims()
            .iter()
            .map(|&t| DMatrix::from_element(t, 0, C64::new(0.0, 0.0)))
            .collect();
        let channels = DMatrix::from_element(shape.antennas(), 0, C64::new(0.0, 0.0));
        Self {
            shape,
            factors,
            channels,
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    /// Component count K.
    pub fn k(&self) -> usize {
        self.channels.ncols()
    }

    pub fn factors(&self) -> &[DMatrix<C64>] {
        &self.factors
    }

    pub fn channels(&self) -> &DMatrix<C64> {
        &self.channels
    }

    /// Mode-i factor vector of component `k`.
    pub fn factor_vector(&self, mode: usize, k: usize) -> DVector<C64> {
        self.factors[mode].column(k).into_owned()
    }

    pub fn channel_vector(&self, k: usize) -> DVector<C64> {
        self.channels.column(k).into_owned()
    }

    /// Amplitude of component `k`: the product of all its vector norms.
    pub fn component_amplitude(&self, k: usize) -> f64 {
        let mut a = self.channels.column(k).norm();
        for f in &self.factors {
            a *= f.column(k).norm();
        }
        a
    }

    /// Normalized representative convention: scales every data-mode factor
    /// column to unit norm, pushing the aggregate scale into the channel
    /// column. Zero columns are left untouched.
    pub fn normalize(&mut self) {
        for k in 0..self.k() {
            let mut scale = C64::new(1.0, 0.0);
            for f in &mut self.factors {
                let nrm = f.column(k).norm();
                if nrm > 0.0 {
                    let mut col = f.column_mut(k);
                    col /= C64::new(nrm, 0.0);
                    scale *= C64::new(nrm, 0.0);
                }
            }
            let mut ch = self.channels.column_mut(k);
            ch *= scale;
        }
    }
}

/// Sum of rank-1 Kronecker chains: `sum_k x_{1,k} ⊗ ... ⊗ x_{d,k} ⊗ h_k`,
/// laid out per the crate vectorization convention. K = 0 gives zeros.
pub fn compose(f: &FactorSet) -> DenseTensor {
    let mut out = DenseTensor::zeros(f.shape.clone());
    let data = out.data_mut();
    for k in 0..f.k() {
        let mut chain: Vec<C64> = f.factors[0].column(k).iter().copied().collect();
        for m in &f.factors[1..] {
            let col = m.column(k);
            let mut next = Vec::with_capacity(chain.len() * col.len());
            for &a in &chain {
                for &b in col.iter() {
                    next.push(a * b);
                }
            }
            chain = next;
        }
        let h = f.channels.column(k);
        let n = h.len();
        for (i, &a) in chain.iter().enumerate() {
            for (j, &b) in h.iter().enumerate() {
                data[i * n + j] += a * b;
            }
        }
    }
    out
}

/// Squared reconstruction error `||t - compose(f)||^2`.
pub fn residual(t: &DenseTensor, f: &FactorSet) -> Result<f64> {
    if t.shape() != &f.shape {
        return Err(Error::ShapeMismatch(
            "residual: tensor and factor set shapes differ".into(),
        ));
    }
    let model = compose(f);
    Ok(t.data()
        .iter()
        .zip(model.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}

/// A component whose data-mode factors are pinned during the solve.
///
/// The supplied vectors are kept verbatim (never rescaled or updated);
/// only the component's channel vector remains free.
#[derive(Debug, Clone)]
pub struct FixedComponent {
    pub index: usize,
    pub mode_factors: Vec<DVector<C64>>,
}

/// Solver options for [`cpd_als`].
#[derive(Debug, Clone)]
pub struct CpdOptions {
    pub max_iterations: usize,
    pub rel_fit_tolerance: f64,
    /// Independent random starts; the lowest-residual solution wins.
    pub restarts: usize,
    pub rng_seed: u64,
    pub fixed_components: Vec<FixedComponent>,
    /// Stop restarting early once a solution reaches this fit.
    pub accept_fit: Option<f64>,
    /// Record the per-sweep fit trace of the winning restart.
    pub record_trace: bool,
}

impl Default for CpdOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_fit_tolerance: 1e-8,
            restarts: 4,
            rng_seed: 0,
            fixed_components: Vec::new(),
            accept_fit: None,
            record_trace: false,
        }
    }
}

/// Result of a [`cpd_als`] solve.
#[derive(Debug, Clone)]
pub struct CpdOutcome {
    pub factors: FactorSet,
    /// Relative fit `||t - compose(f)|| / ||t||` (0 for a zero tensor).
    pub fit: f64,
    /// Sweeps used by the winning restart.
    pub sweeps: usize,
    /// Per-sweep fit values when `record_trace` is set.
    pub trace: Option<Vec<f64>>,
}

/// Rank-K approximate CPD by alternating least squares.
///
/// Deterministic given `opts.rng_seed`. Components listed in
/// `opts.fixed_components` keep their supplied data-mode factors verbatim
/// while their channel vectors stay free.
pub fn cpd_als(t: &DenseTensor, k: usize, opts: &CpdOptions) -> Result<CpdOutcome> {
    if k == 0 {
        return Err(Error::InvalidConfig("cpd_als needs K >= 1".into()));
    }
    if k > MAX_COMPONENTS {
        return Err(Error::TooManyComponents {
            k,
            cap: MAX_COMPONENTS,
        });
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("cpd_als input tensor"));
    }
    let shape = t.shape();
    let mode_dims = shape.mode_dims();
    for fc in &opts.fixed_components {
        if fc.index >= k {
            return Err(Error::InvalidConfig(format!(
                "fixed component index {} out of range for K={}",
                fc.index, k
            )));
        }
        if fc.mode_factors.len() != shape.order() {
            return Err(Error::InvalidConfig(format!(
                "fixed component {} supplies {} mode factors, expected {}",
                fc.index,
                fc.mode_factors.len(),
                shape.order()
            )));
        }
        for (i, v) in fc.mode_factors.iter().enumerate() {
            if v.len() != shape.dims()[i] {
                return Err(Error::ShapeMismatch(format!(
                    "fixed component {} mode {} has length {}, expected {}",
                    fc.index,
                    i,
                    v.len(),
                    shape.dims()[i]
                )));
            }
        }
    }

    let t_norm = t.norm();
    let unfolds: Vec<DMatrix<C64>> = (0..mode_dims.len())
        .map(|m| t.unfold(m))
        .collect::<Result<_>>()?;
    let fixed_idx: Vec<usize> = {
        let mut v: Vec<usize> = opts.fixed_components.iter().map(|f| f.index).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let free_idx: Vec<usize> = (0..k).filter(|i| !fixed_idx.contains(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut best: Option<CpdOutcome> = None;

    for _restart in 0..opts.restarts.max(1) {
        // random complex-Gaussian init, fixed columns overwritten verbatim
        let mut mats: Vec<DMatrix<C64>> = mode_dims
            .iter()
            .map(|&d| {
                DMatrix::from_fn(d, k, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                })
            })
            .collect();
        for fc in &opts.fixed_components {
            for (i, v) in fc.mode_factors.iter().enumerate() {
                mats[i].set_column(fc.index, v);
            }
        }

        let mut trace = if opts.record_trace { Some(Vec::new()) } else { None };
        let mut prev_fit = f64::INFINITY;
        let mut fit = f64::INFINITY;
        let mut sweeps = 0;
        for sweep in 0..opts.max_iterations {
            sweeps = sweep + 1;
            for m in 0..mode_dims.len() {
                let data_mode = m < shape.order();
                let solve_free_only = data_mode && !fixed_idx.is_empty();
                update_mode(
                    &unfolds[m],
                    &mut mats,
                    m,
                    if solve_free_only { Some((&fixed_idx, &free_idx)) } else { None },
                );
            }
            // push data-mode scales into the channel mode
            let d = shape.order();
            for col in free_idx.iter().copied() {
                let mut scale = 1.0;
                for mat in mats.iter_mut().take(d) {
                    let nrm = mat.column(col).norm();
                    if nrm > 0.0 {
                        let mut c = mat.column_mut(col);
                        c /= C64::new(nrm, 0.0);
                        scale *= nrm;
                    }
                }
                let mut ch = mats[d].column_mut(col);
                ch *= C64::new(scale, 0.0);
            }

            fit = relative_fit(t, &mats, t_norm);
            if let Some(tr) = trace.as_mut() {
                tr.push(fit);
            }
            if (prev_fit - fit).abs() < opts.rel_fit_tolerance {
                break;
            }
            prev_fit = fit;
        }

        let channels = mats.pop().expect("channel mode present");
        let factors = FactorSet::new(shape.clone(), mats, channels)?;
        let outcome = CpdOutcome {
            factors,
            fit,
            sweeps,
            trace,
        };
        let better = best.as_ref().map_or(true, |b| outcome.fit < b.fit);
        if better {
            best = Some(outcome);
        }
        if let Some(acc) = opts.accept_fit {
            if best.as_ref().map_or(false, |b| b.fit <= acc) {
                break;
            }
        }
    }

    Ok(best.expect("at least one restart"))
}

/// One exact least-squares update of mode `m`, optionally restricted to the
/// free columns (data modes with fixed components).
fn update_mode(
    unfold: &DMatrix<C64>,
    mats: &mut [DMatrix<C64>],
    m: usize,
    partition: Option<(&[usize], &[usize])>,
) {
    let k = mats[m].ncols();
    let n_modes = mats.len();
    // Gram: Hadamard product over the other modes of A_j^H A_j
    let mut gram = DMatrix::from_element(k, k, C64::new(1.0, 0.0));
    for (j, a) in mats.iter().enumerate() {
        if j == m {
            continue;
        }
        let g = a.adjoint() * a;
        gram.zip_apply(&g, |x, y| *x *= y);
    }
    // MTTKRP without materializing the full Khatri-Rao product
    let mut w = DMatrix::from_element(mats[m].nrows(), k, C64::new(0.0, 0.0));
    for col in 0..k {
        let others: Vec<DVector<C64>> = (0..n_modes)
            .filter(|&j| j != m)
            .map(|j| mats[j].column(col).into_owned())
            .collect();
        let z = kron_chain(&others).expect("non-empty mode list");
        let zc = z.map(|c| c.conj());
        w.set_column(col, &(unfold * zc));
    }

    match partition {
        None => {
            // A * conj(G) = W  =>  G A^T = W^T  (G is Hermitian)
            if let Some(x) = solve_hermitian(&gram, &w.transpose()) {
                mats[m] = x.transpose();
            }
        }
        Some((fixed, free)) => {
            if free.is_empty() {
                return;
            }
            let gff = DMatrix::from_fn(free.len(), free.len(), |r, c| gram[(free[r], free[c])]);
            let gxf_conj =
                DMatrix::from_fn(fixed.len(), free.len(), |r, c| gram[(fixed[r], free[c])].conj());
            let wf = DMatrix::from_fn(w.nrows(), free.len(), |r, c| w[(r, free[c])]);
            let ax = DMatrix::from_fn(mats[m].nrows(), fixed.len(), |r, c| mats[m][(r, fixed[c])]);
            let rhs = wf - ax * gxf_conj;
            if let Some(x) = solve_hermitian(&gff, &rhs.transpose()) {
                let af = x.transpose();
                for (ci, &col) in free.iter().enumerate() {
                    mats[m].set_column(col, &af.column(ci));
                }
            }
        }
    }
}

/// LU solve with a small ridge fallback for rank-deficient Grams.
pub(crate) fn solve_hermitian(g: &DMatrix<C64>, rhs: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    if let Some(x) = g.clone().lu().solve(rhs) {
        if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Some(x);
        }
    }
    let k = g.nrows();
    let tr: f64 = (0..k).map(|i| g[(i, i)].re.abs()).sum();
    let eps = 1e-12 * (tr / k as f64).max(1e-30);
    let ridged = g + DMatrix::from_diagonal_element(k, k, C64::new(eps, 0.0));
    ridged
        .lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
}

fn relative_fit(t: &DenseTensor, mats: &[DMatrix<C64>], t_norm: f64) -> f64 {
    if t_norm == 0.0 {
        return 0.0;
    }
    let d = mats.len() - 1;
    let fs = FactorSet {
        shape: t.shape().clone(),
        factors: mats[..d].to_vec(),
        channels: mats[d].clone(),
    };
    let model = compose(&fs);
    let res: f64 = t
        .data()
        .iter()
        .zip(model.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    res.sqrt() / t_norm
}

/// Deterministic rank-1 fit: dominant-singular-vector initialization per
/// mode followed by a few ALS sweeps. Used for decision-directed
/// re-detection where seeding a full solve would be overkill.
pub fn rank_one_fit(t: &DenseTensor, sweeps: usize) -> Result<(Vec<DVector<C64>>, DVector<C64>)> {
    let shape = t.shape();
    let mode_dims = shape.mode_dims();
    let mut vecs: Vec<DVector<C64>> = Vec::with_capacity(mode_dims.len());
    for m in 0..mode_dims.len() {
        let u = t.unfold(m)?;
        vecs.push(dominant_left_singular(&u));
    }
    for _ in 0..sweeps.max(1) {
        for m in 0..mode_dims.len() {
            let others: Vec<DVector<C64>> = (0..mode_dims.len())
                .filter(|&j| j != m)
                .map(|j| vecs[j].clone())
                .collect();
            let z = kron_chain(&others)?;
            let g: f64 = others.iter().map(|v| v.norm_squared()).product();
            if g == 0.0 {
                continue;
            }
            let zc = z.map(|c| c.conj());
            vecs[m] = (t.unfold(m)? * zc) / C64::new(g, 0.0);
        }
        for v in vecs.iter_mut().take(shape.order()) {
            let nrm = v.norm();
            if nrm > 0.0 {
                *v /= C64::new(nrm, 0.0);
            }
        }
    }
    let channel = vecs.pop().expect("channel mode");
    Ok((vecs, channel))
}

/// Dominant left singular vector of `u` by power iteration on `u u^H`.
fn dominant_left_singular(u: &DMatrix<C64>) -> DVector<C64> {
    let gram = u * u.adjoint();
    let n = gram.nrows();
    let mut v = DVector::from_element(n, C64::new(1.0, 0.0)).normalize();
    for iter in 0..40 {
        let next = &gram * &v;
        let nrm = next.norm();
        if nrm < 1e-300 {
            // start was orthogonal to the dominant space; perturb
            v = DVector::from_fn(n, |i, _| C64::new(if i == iter % n { 1.0 } else { 0.1 }, 0.0))
                .normalize();
            continue;
        }
        v = next / C64::new(nrm, 0.0);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_unit(rng: &mut impl Rng, n: usize) -> DVector<C64> {
        DVector::from_fn(n, |_, _| {
            c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
        .normalize()
    }

    fn random_factor_set(rng: &mut impl Rng, shape: &TensorShape, k: usize) -> FactorSet {
        let factors = shape
            .dims()
            .iter()
            .map(|&t| {
                let cols: Vec<DVector<C64>> = (0..k).map(|_| random_unit(rng, t)).collect();
                DMatrix::from_columns(&cols)
            })
            .collect();
        let cols: Vec<DVector<C64>> = (0..k)
            .map(|_| random_unit(rng, shape.antennas()))
            .collect();
        FactorSet::new(shape.clone(), factors, DMatrix::from_columns(&cols)).unwrap()
    }

    /// Greedy max-collinearity matching; returns the minimum per-mode
    /// collinearity over matched pairs.
    fn match_components(truth: &FactorSet, est: &FactorSet) -> f64 {
        let k = truth.k();
        let mut scores = DMatrix::from_fn(k, k, |i, j| {
            let a = truth.factors()[0].column(i).into_owned();
            let b = est.factors()[0].column(j).into_owned();
            a.dotc(&b).norm() / (a.norm() * b.norm())
        });
        let mut pairs = Vec::new();
        for _ in 0..k {
            let mut best = (0, 0, -1.0);
            for i in 0..k {
                for j in 0..k {
                    if scores[(i, j)] > best.2 {
                        best = (i, j, scores[(i, j)]);
                    }
                }
            }
            pairs.push((best.0, best.1));
            for j in 0..k {
                scores[(best.0, j)] = -1.0;
            }
            for i in 0..k {
                scores[(i, best.1)] = -1.0;
            }
        }
        let mut min_col = f64::INFINITY;
        for &(i, j) in &pairs {
            for m in 0..truth.shape().order() {
                let a = truth.factors()[m].column(i).into_owned();
                let b = est.factors()[m].column(j).into_owned();
                let col = a.dotc(&b).norm() / (a.norm() * b.norm());
                min_col = min_col.min(col);
            }
        }
        min_col
    }

    #[test]
    fn compose_empty_is_zero() {
        let shape = TensorShape::new(vec![3, 2], 2).unwrap();
        let f = FactorSet::empty(shape);
        let t = compose(&f);
        assert!(t.data().iter().all(|c| c.norm_sqr() == 0.0));
    }

    #[test]
    fn compose_basis_factors() {
        let shape = TensorShape::new(vec![2, 2], 2).unwrap();
        let e1 = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let factors = vec![
            DMatrix::from_columns(&[e1.clone()]),
            DMatrix::from_columns(&[e1.clone()]),
        ];
        let channels = DMatrix::from_columns(&[e1]);
        let f = FactorSet::new(shape, factors, channels).unwrap();
        let t = compose(&f);
        assert_eq!(t.data()[0], c(1.0, 0.0));
        assert!(t.data()[1..].iter().all(|v| v.norm_sqr() == 0.0));
    }

    #[test]
    fn compose_is_linear_in_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = TensorShape::new(vec![3, 2], 2).unwrap();
        let f2 = random_factor_set(&mut rng, &shape, 2);
        let f_a = FactorSet::new(
            shape.clone(),
            f2.factors().iter().map(|m| m.columns(0, 1).into_owned()).collect(),
            f2.channels().columns(0, 1).into_owned(),
        )
        .unwrap();
        let f_b = FactorSet::new(
            shape.clone(),
            f2.factors().iter().map(|m| m.columns(1, 1).into_owned()).collect(),
            f2.channels().columns(1, 1).into_owned(),
        )
        .unwrap();
        let sum: Vec<C64> = compose(&f_a)
            .data()
            .iter()
            .zip(compose(&f_b).data())
            .map(|(a, b)| a + b)
            .collect();
        let both = compose(&f2);
        for (a, b) in sum.iter().zip(both.data()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_k1_equals_kron_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = TensorShape::new(vec![3, 4], 2).unwrap();
        let f = random_factor_set(&mut rng, &shape, 1);
        let mut vs: Vec<DVector<C64>> = (0..2).map(|i| f.factor_vector(i, 0)).collect();
        vs.push(f.channel_vector(0));
        let chain = kron_chain(&vs).unwrap();
        let t = compose(&f);
        for (a, b) in chain.iter().zip(t.data()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-13);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-13);
        }
    }

    #[test]
    fn unfold_matches_khatri_rao_identity() {
        use crate::tensor::khatri_rao;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let shape = TensorShape::new(vec![3, 2, 2], 2).unwrap();
        let f = random_factor_set(&mut rng, &shape, 3);
        let t = compose(&f);
        let mut all: Vec<DMatrix<C64>> = f.factors().to_vec();
        all.push(f.channels().clone());
        for m in 0..4 {
            let others: Vec<DMatrix<C64>> = (0..4).filter(|&j| j != m).map(|j| all[j].clone()).collect();
            let kr = khatri_rao(&others).unwrap();
            let expect = &all[m] * kr.transpose();
            let got = t.unfold(m).unwrap();
            assert_relative_eq!((got - expect).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_zero_factor_set_is_norm_sq() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = TensorShape::new(vec![2, 3], 2).unwrap();
        let data: Vec<C64> = (0..shape.total_len())
            .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let t = DenseTensor::from_data(shape.clone(), data).unwrap();
        let f = FactorSet::empty(shape);
        let r = residual(&t, &f).unwrap();
        assert_relative_eq!(r, t.norm().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn residual_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let shape = TensorShape::new(vec![2, 2], 3).unwrap();
        let data: Vec<C64> = (0..shape.total_len())
            .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let t = DenseTensor::from_data(shape.clone(), data).unwrap();
        let f = random_factor_set(&mut rng, &shape, 2);
        let model = compose(&f);
        let direct: f64 = t
            .data()
            .iter()
            .zip(model.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert_relative_eq!(residual(&t, &f).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn exact_rank1_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let shape = TensorShape::new(vec![4, 3], 2).unwrap();
        let truth = random_factor_set(&mut rng, &shape, 1);
        let t = compose(&truth);
        let out = cpd_als(&t, 1, &CpdOptions::default()).unwrap();
        assert!(out.fit <= 1e-8, "fit {}", out.fit);
    }

    #[test]
    fn rank3_recovery_with_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let shape = TensorShape::new(vec![4, 4, 4], 4).unwrap();
        let truth = random_factor_set(&mut rng, &shape, 3);
        let t = compose(&truth);
        let out = cpd_als(&t, 3, &CpdOptions { rng_seed: 9, ..Default::default() }).unwrap();
        assert!(out.fit <= 1e-6, "fit {}", out.fit);
        let min_col = match_components(&truth, &out.factors);
        assert!(min_col >= 0.999, "collinearity {}", min_col);
    }

    #[test]
    fn fixed_components_kept_verbatim() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = TensorShape::new(vec![3, 3], 2).unwrap();
        let truth = random_factor_set(&mut rng, &shape, 2);
        let t = compose(&truth);
        let fixed = FixedComponent {
            index: 1,
            mode_factors: (0..2).map(|i| truth.factor_vector(i, 1)).collect(),
        };
        let opts = CpdOptions {
            fixed_components: vec![fixed.clone()],
            rng_seed: 3,
            ..Default::default()
        };
        let out = cpd_als(&t, 2, &opts).unwrap();
        for (i, v) in fixed.mode_factors.iter().enumerate() {
            let got = out.factors.factor_vector(i, 1);
            // bit-identical: the solver must never touch these columns
            assert_eq!(got.as_slice(), v.as_slice());
        }
        assert!(out.fit <= 1e-7, "fit {}", out.fit);
    }

    #[test]
    fn k_cap_and_nonfinite_rejected() {
        let shape = TensorShape::new(vec![2, 2], 1).unwrap();
        let t = DenseTensor::zeros(shape.clone());
        assert!(matches!(
            cpd_als(&t, MAX_COMPONENTS + 1, &CpdOptions::default()),
            Err(Error::TooManyComponents { .. })
        ));
        let mut bad = DenseTensor::zeros(shape);
        bad.data_mut()[0] = c(f64::NAN, 0.0);
        assert!(matches!(
            cpd_als(&bad, 1, &CpdOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn als_fit_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let shape = TensorShape::new(vec![4, 3], 3).unwrap();
        // rank-2 truth plus noise so the solve actually iterates
        let truth = random_factor_set(&mut rng, &shape, 2);
        let mut t = compose(&truth);
        for v in t.data_mut() {
            *v += c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.05;
        }
        let opts = CpdOptions {
            restarts: 2,
            record_trace: true,
            rng_seed: 17,
            ..Default::default()
        };
        let out = cpd_als(&t, 2, &opts).unwrap();
        let trace = out.trace.unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-10) + 1e-15,
                "fit increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn scaling_indeterminacy_leaves_compose_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let shape = TensorShape::new(vec![3, 2], 2).unwrap();
        let f = random_factor_set(&mut rng, &shape, 2);
        let t0 = compose(&f);
        let alpha = c(0.3, -1.2);
        let mut factors = f.factors().to_vec();
        let mut channels = f.channels().clone();
        {
            let mut col = factors[0].column_mut(1);
            col *= alpha;
        }
        {
            let mut ch = channels.column_mut(1);
            ch *= C64::new(1.0, 0.0) / alpha;
        }
        let g = FactorSet::new(shape, factors, channels).unwrap();
        let t1 = compose(&g);
        let diff: f64 = t0
            .data()
            .iter()
            .zip(t1.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-12 * t0.norm());
    }

    #[test]
    fn permutation_invariance_of_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let shape = TensorShape::new(vec![3, 2], 2).unwrap();
        let f = random_factor_set(&mut rng, &shape, 3);
        let perm = [2usize, 0, 1];
        let factors = f
            .factors()
            .iter()
            .map(|m| {
                let cols: Vec<DVector<C64>> =
                    perm.iter().map(|&p| m.column(p).into_owned()).collect();
                DMatrix::from_columns(&cols)
            })
            .collect();
        let cols: Vec<DVector<C64>> = perm
            .iter()
            .map(|&p| f.channels().column(p).into_owned())
            .collect();
        let g = FactorSet::new(shape, factors, DMatrix::from_columns(&cols)).unwrap();
        let (a, b) = (compose(&f), compose(&g));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x.re, y.re, epsilon = 1e-14);
            assert_relative_eq!(x.im, y.im, epsilon = 1e-14);
        }
    }

    #[test]
    fn normalize_preserves_compose_and_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let shape = TensorShape::new(vec![3, 2], 2).unwrap();
        let mut f = random_factor_set(&mut rng, &shape, 2);
        {
            let mut col = f.factors[0].column_mut(0);
            col *= c(2.5, 0.3);
        }
        let before = compose(&f);
        let amp_before = f.component_amplitude(0);
        f.normalize();
        let after = compose(&f);
        assert_relative_eq!(f.factors()[0].column(0).norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(amp_before, f.component_amplitude(0), epsilon = 1e-12);
        for (x, y) in before.data().iter().zip(after.data()) {
            assert_relative_eq!(x.re, y.re, epsilon = 1e-12);
            assert_relative_eq!(x.im, y.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one_fit_recovers_rank1() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let shape = TensorShape::new(vec![4, 3], 3).unwrap();
        let truth = random_factor_set(&mut rng, &shape, 1);
        let t = compose(&truth);
        let (modes, channel) = rank_one_fit(&t, 4).unwrap();
        let f = FactorSet::new(
            shape,
            modes.iter().map(|v| DMatrix::from_columns(&[v.clone()])).collect(),
            DMatrix::from_columns(&[channel]),
        )
        .unwrap();
        let rel = residual(&t, &f).unwrap().sqrt() / t.norm();
        assert!(rel < 1e-8, "relative residual {}", rel);
    }
}

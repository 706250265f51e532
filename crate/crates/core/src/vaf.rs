//! Variable activation functions.
//!
//! A VAF replaces a neuron's fixed nonlinearity with a one-hidden-layer
//! subnetwork of `k` units:
//!
//! ```text
//! z = sum_j beta[j] * g(alpha[j] * a + alpha0[j]) + beta0
//! ```
//!
//! `g` is a fixed [`ActivationKind`]; `alpha`, `alpha0`, `beta` and `beta0`
//! are trained together with the rest of the network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Noise magnitude used to break symmetry between the unused hidden units
/// of an exact embedding.
pub const EMBEDDING_NOISE: f64 = 1e-3;

/// Half-width of the grid a non-exact specific initialization is fitted on.
pub const FIT_DOMAIN: f64 = 5.0;
const FIT_POINTS: usize = 201;
const CHECK_POINTS: usize = 1001;
const CENTER_SPREAD: f64 = 4.0;
const FIT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVafParams<T>", bound(deserialize = "T: Scalar"))]
pub struct VafParams<T> {
    k: usize,
    g: ActivationKind,
    alpha: Vec<T>,
    alpha0: Vec<T>,
    beta: Vec<T>,
    beta0: T,
}

#[derive(Deserialize)]
struct RawVafParams<T> {
    k: usize,
    g: ActivationKind,
    alpha: Vec<T>,
    alpha0: Vec<T>,
    beta: Vec<T>,
    beta0: T,
}

impl<T: Scalar> TryFrom<RawVafParams<T>> for VafParams<T> {
    type Error = Error;

    fn try_from(raw: RawVafParams<T>) -> Result<Self> {
        let p = Self::new(raw.g, raw.alpha, raw.alpha0, raw.beta, raw.beta0)?;
        if p.k != raw.k {
            return Err(Error::input(format!("VAF declares k={} but holds {} units", raw.k, p.k)));
        }
        Ok(p)
    }
}

/// Gradient of a loss with respect to one [`VafParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct VafGrad<T> {
    pub d_alpha: Vec<T>,
    pub d_alpha0: Vec<T>,
    pub d_beta: Vec<T>,
    pub d_beta0: T,
}

impl<T: Scalar> VafGrad<T> {
    pub fn zeros(k: usize) -> Self {
        Self {
            d_alpha: vec![T::zero(); k],
            d_alpha0: vec![T::zero(); k],
            d_beta: vec![T::zero(); k],
            d_beta0: T::zero(),
        }
    }

    pub fn k(&self) -> usize {
        self.d_alpha.len()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            *a += *b;
        }
        for (a, b) in self.d_alpha0.iter_mut().zip(&other.d_alpha0) {
            *a += *b;
        }
        for (a, b) in self.d_beta.iter_mut().zip(&other.d_beta) {
            *a += *b;
        }
        self.d_beta0 += other.d_beta0;
    }

    /// Appends in the same order as [`VafParams::flatten_into`].
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.d_alpha);
        out.extend_from_slice(&self.d_alpha0);
        out.extend_from_slice(&self.d_beta);
        out.push(self.d_beta0);
    }
}

impl<T: Scalar> VafParams<T> {
    pub fn new(g: ActivationKind, alpha: Vec<T>, alpha0: Vec<T>, beta: Vec<T>, beta0: T) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(Error::input("a VAF needs at least one hidden unit"));
        }
        if alpha0.len() != k || beta.len() != k {
            return Err(Error::input(format!(
                "VAF arrays disagree in length: alpha {k}, alpha0 {}, beta {}",
                alpha0.len(),
                beta.len()
            )));
        }
        Ok(Self {
            k,
            g,
            alpha,
            alpha0,
            beta,
            beta0,
        })
    }

    /// Uniform initialization on `[-r, r]` with `r = sqrt(6 / (1 + k))`,
    /// i.e. the fan-based rule for a 1-k-1 network. `beta0` starts at 0.
    pub fn init_random<R: Rng + ?Sized>(k: usize, g: ActivationKind, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("a VAF needs at least one hidden unit"));
        }
        let r = (6.0 / (1.0 + k as f64)).sqrt();
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-r..=r))).collect() };
        let alpha = draw(k);
        let alpha0 = draw(k);
        let beta = draw(k);
        Self::new(g, alpha, alpha0, beta, T::zero())
    }

    /// Parameters that make the VAF approximate `target`.
    ///
    /// When `g == target` the first unit embeds it exactly and the other
    /// units get weights of magnitude at most [`EMBEDDING_NOISE`]. Otherwise
    /// `alpha` is fixed to 1, `alpha0` is spread evenly over `[-4, 4]` and
    /// `beta`, `beta0` are the least-squares fit on `[-5, 5]`.
    pub fn init_specific<R: Rng + ?Sized>(
        k: usize,
        g: ActivationKind,
        target: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_specific_with_noise(k, g, target, EMBEDDING_NOISE, rng)
    }

    pub fn init_specific_with_noise<R: Rng + ?Sized>(
        k: usize,
        g: ActivationKind,
        target: ActivationKind,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("a VAF needs at least one hidden unit"));
        }
        let params = if g == target {
            let mut alpha = vec![T::zero(); k];
            let mut alpha0 = vec![T::zero(); k];
            let mut beta = vec![T::zero(); k];
            alpha[0] = T::one();
            beta[0] = T::one();
            if noise > 0.0 {
                for j in 1..k {
                    alpha[j] = T::lit(rng.random_range(-noise..=noise));
                    alpha0[j] = T::lit(rng.random_range(-noise..=noise));
                    beta[j] = T::lit(rng.random_range(-noise..=noise));
                }
            }
            Self::new(g, alpha, alpha0, beta, T::zero())?
        } else {
            fit_least_squares(k, g, target)?
        };

        let (max_error, tolerance) = params.approximation_error(target);
        if max_error > tolerance {
            return Err(Error::Approximation { max_error, tolerance });
        }
        Ok(params)
    }

    /// Max deviation from `target` over a dense grid of `[-5, 5]`, together
    /// with the tolerance `0.05 * (1 + max |target|)` on that grid.
    pub fn approximation_error(&self, target: ActivationKind) -> (f64, f64) {
        let mut max_err = 0.0f64;
        let mut max_target = 0.0f64;
        for i in 0..CHECK_POINTS {
            let a = -FIT_DOMAIN + 2.0 * FIT_DOMAIN * i as f64 / (CHECK_POINTS - 1) as f64;
            let want = target.apply(a);
            let got = self.eval(T::lit(a)).to_f64_lossy();
            max_err = max_err.max((got - want).abs());
            max_target = max_target.max(want.abs());
        }
        if !max_err.is_finite() {
            max_err = f64::INFINITY;
        }
        (max_err, FIT_TOLERANCE * (1.0 + max_target))
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn g(&self) -> ActivationKind {
        self.g
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn alpha0(&self) -> &[T] {
        &self.alpha0
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn beta0(&self) -> T {
        self.beta0
    }

    /// `3k + 1`.
    pub fn param_count(&self) -> usize {
        3 * self.k + 1
    }

    /// Output together with the `k` hidden pre-activations.
    pub fn forward(&self, a: T) -> (T, Vec<T>) {
        let cache: Vec<T> = self.alpha.iter().zip(&self.alpha0).map(|(&w, &b)| w * a + b).collect();
        let z = cache
            .iter()
            .zip(&self.beta)
            .fold(self.beta0, |acc, (&s, &b)| acc + b * self.g.apply(s));
        (z, cache)
    }

    /// Output only.
    #[inline]
    pub fn eval(&self, a: T) -> T {
        let mut z = self.beta0;
        for j in 0..self.k {
            z += self.beta[j] * self.g.apply(self.alpha[j] * a + self.alpha0[j]);
        }
        z
    }

    /// Backward pass for a single input. Returns `dL/da` and the parameter
    /// gradient, both scaled by `upstream = dL/dz`.
    pub fn backward(&self, a: T, cache: &[T], upstream: T) -> Result<(T, VafGrad<T>)> {
        if cache.len() != self.k {
            return Err(Error::Shape {
                op: "vaf_backward",
                left: (1, self.k),
                right: (1, cache.len()),
            });
        }
        let mut grad = VafGrad::zeros(self.k);
        let mut d_a = T::zero();
        for j in 0..self.k {
            let (gv, gd) = self.g.apply_with_derivative(cache[j]);
            let local = upstream * self.beta[j] * gd;
            grad.d_beta[j] = upstream * gv;
            grad.d_alpha0[j] = local;
            grad.d_alpha[j] = local * a;
            d_a += local * self.alpha[j];
        }
        grad.d_beta0 = upstream;
        Ok((d_a, grad))
    }

    /// Adds this input's parameter gradient into `grad` and returns `dL/da`.
    /// Recomputes the pre-activations instead of reading a cache.
    #[inline]
    pub fn accumulate_backward(&self, a: T, upstream: T, grad: &mut VafGrad<T>) -> T {
        debug_assert_eq!(grad.k(), self.k);
        let mut d_a = T::zero();
        for j in 0..self.k {
            let (gv, gd) = self.g.apply_with_derivative(self.alpha[j] * a + self.alpha0[j]);
            let local = upstream * self.beta[j] * gd;
            grad.d_beta[j] += upstream * gv;
            grad.d_alpha0[j] += local;
            grad.d_alpha[j] += local * a;
            d_a += local * self.alpha[j];
        }
        grad.d_beta0 += upstream;
        d_a
    }

    /// Appends `alpha, alpha0, beta, beta0`.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.alpha0);
        out.extend_from_slice(&self.beta);
        out.push(self.beta0);
    }

    /// Adds the first `3k + 1` entries of `delta` to the parameters, in
    /// flattening order. Returns how many entries were consumed.
    pub(crate) fn add_flat(&mut self, delta: &[T]) -> usize {
        let k = self.k;
        for (p, d) in self.alpha.iter_mut().zip(&delta[..k]) {
            *p += *d;
        }
        for (p, d) in self.alpha0.iter_mut().zip(&delta[k..2 * k]) {
            *p += *d;
        }
        for (p, d) in self.beta.iter_mut().zip(&delta[2 * k..3 * k]) {
            *p += *d;
        }
        self.beta0 += delta[3 * k];
        3 * k + 1
    }

    /// Overwrites the parameters from `values` in flattening order.
    pub(crate) fn set_flat(&mut self, values: &[T]) -> usize {
        let k = self.k;
        self.alpha.copy_from_slice(&values[..k]);
        self.alpha0.copy_from_slice(&values[k..2 * k]);
        self.beta.copy_from_slice(&values[2 * k..3 * k]);
        self.beta0 = values[3 * k];
        3 * k + 1
    }
}

/// Extra parameters VAF layers add to a network.
///
/// `layers` lists `(neurons, k)` per VAF layer. Without sharing every neuron
/// carries `3k + 1` parameters; with sharing each layer carries `3k + 1`.
pub fn parameter_count(shared: bool, layers: &[(usize, usize)]) -> usize {
    layers
        .iter()
        .map(|&(neurons, k)| if shared { 3 * k + 1 } else { neurons * (3 * k + 1) })
        .sum()
}

fn fit_least_squares<T: Scalar>(k: usize, g: ActivationKind, target: ActivationKind) -> Result<VafParams<T>> {
    let centers: Vec<f64> = if k == 1 {
        vec![0.0]
    } else {
        (0..k)
            .map(|j| -CENTER_SPREAD + 2.0 * CENTER_SPREAD * j as f64 / (k - 1) as f64)
            .collect()
    };
    let n = k + 1;
    // Normal equations: (Phi^T Phi) w = Phi^T y with Phi = [g(a + c_j) | 1].
    let mut gram = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    let mut phi = vec![0.0f64; n];
    for i in 0..FIT_POINTS {
        let a = -FIT_DOMAIN + 2.0 * FIT_DOMAIN * i as f64 / (FIT_POINTS - 1) as f64;
        for (p, c) in phi.iter_mut().zip(&centers) {
            *p = g.apply(a + c);
        }
        phi[k] = 1.0;
        let y = target.apply(a);
        for r in 0..n {
            rhs[r] += phi[r] * y;
            for c in 0..n {
                gram[r * n + c] += phi[r] * phi[c];
            }
        }
    }
    let weights = match solve_dense(&gram, &rhs, n) {
        Some(w) => w,
        None => {
            // Collinear basis (e.g. g = identity with k > 1): small ridge term.
            let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
            let ridge = 1e-10 * trace.max(1.0) / n as f64;
            let mut reg = gram.clone();
            for i in 0..n {
                reg[i * n + i] += ridge;
            }
            solve_dense(&reg, &rhs, n).ok_or(Error::Approximation {
                max_error: f64::INFINITY,
                tolerance: 0.0,
            })?
        }
    };
    VafParams::new(
        g,
        vec![T::one(); k],
        centers.iter().map(|&c| T::lit(c)).collect(),
        weights[..k].iter().map(|&w| T::lit(w)).collect(),
        T::lit(weights[k]),
    )
}

/// Gaussian elimination with partial pivoting. `None` when singular.
fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[pivot * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(col * n + c, pivot * n + c);
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r * n + c] -= f * m[col * n + c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for c in col + 1..n {
            s -= m[col * n + c] * x[c];
        }
        x[col] = s / m[col * n + col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

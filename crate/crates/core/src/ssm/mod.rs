//! Linear state-space layers: parameterization, discretization, and the
//! parallel / single-step execution pair.

pub mod discretize;
pub mod hippo;
pub mod kernel;
pub mod layer;
pub mod linalg;
pub mod scan;

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Scalar};
use crate::substrate::Rng;

pub use discretize::discretize;
pub use hippo::{hippo_init, DplrInit};
pub use kernel::{materialize_kernel, pssm_parallel, pssm_step};
pub use layer::{LayerState, SsmLayer, SsmLayerConfig};
pub use scan::{associative_scan, scan_combine, ScanElem};

/// Default cap on the sequence length handled by one parallel call.
pub const DEFAULT_MAX_KERNEL_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    /// Diagonal plus rank-1, one SISO system per channel, bilinear discretization.
    Dplr,
    /// Diagonal state matrix shared by all channels, zero-order hold.
    DiagonalMimo,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Dplr => "dplr",
            Flavor::DiagonalMimo => "diagonal-mimo",
        }
    }
}

/// Continuous-time parameters of one SSM.
///
/// `A = diag(lambda) - p p^H`. With `conjugate` set, the stored states are one
/// half of conjugate pairs and outputs are `2 Re(C s)`.
#[derive(Debug, Clone)]
pub struct SsmParams<T: Scalar> {
    pub flavor: Flavor,
    pub lambda: Array1<Complex<T>>,
    pub p: Option<Array1<Complex<T>>>,
    /// N x U
    pub b: Array2<Complex<T>>,
    /// Y x N
    pub c: Array2<Complex<T>>,
    /// Y; requires Y == U.
    pub d: Array1<T>,
    /// One entry (shared) or N entries (per state).
    pub log_dt: Array1<T>,
    pub conjugate: bool,
}

impl<T: Scalar> SsmParams<T> {
    pub fn state_size(&self) -> usize {
        self.lambda.len()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Step size for state `i`.
    pub fn dt(&self, i: usize) -> T {
        if self.log_dt.len() == 1 {
            self.log_dt[0].exp()
        } else {
            self.log_dt[i].exp()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_size();
        if n == 0 {
            return Err(Error::Invalid("SSM state size must be positive".into()));
        }
        if self.b.nrows() != n {
            return Err(crate::error::shape_err("ssm.B", self.b.shape(), &[n, self.input_dim()]));
        }
        if self.c.ncols() != n {
            return Err(crate::error::shape_err("ssm.C", self.c.shape(), &[self.output_dim(), n]));
        }
        if self.d.len() != self.output_dim() || self.output_dim() != self.input_dim() {
            return Err(crate::error::shape_err("ssm.D", self.d.shape(), &[self.input_dim()]));
        }
        if self.log_dt.len() != 1 && self.log_dt.len() != n {
            return Err(crate::error::shape_err("ssm.log_dt", self.log_dt.shape(), &[n]));
        }
        match (&self.flavor, &self.p) {
            (Flavor::Dplr, Some(p)) if p.len() == n => {}
            (Flavor::Dplr, _) => return Err(Error::Invalid("DPLR flavor needs a rank-1 P of length N".into())),
            (Flavor::DiagonalMimo, None) => {}
            (Flavor::DiagonalMimo, Some(_)) => {
                return Err(Error::Invalid("diagonal flavor carries no low-rank term".into()))
            }
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.re < T::zero())) {
            return Err(Error::Invalid(format!("unstable eigenvalue with Re = {}", to_f64(l.re))));
        }
        Ok(())
    }

    /// A random stable system of real state size `n` (even), stored as `n/2`
    /// conjugate-pair halves around the HiPPO-LegS spectrum.
    ///
    /// DPLR systems are SISO (`channels` is ignored); diagonal ones map
    /// `channels` inputs to `channels` outputs.
    pub fn random(flavor: Flavor, n: usize, channels: usize, rng: &mut Rng) -> Self {
        assert!(n >= 2 && n % 2 == 0, "state size must be even");
        let init = hippo_init(n).conjugate_half();
        let m = n / 2;
        let io = if flavor == Flavor::Dplr { 1 } else { channels };
        let cx = |re: f64, im: f64| Complex::new(cast::<T>(re), cast::<T>(im));
        let lambda = init.lambda.mapv(|l| {
            let re = l.re * rng.uniform_range(0.5, 2.0);
            cx(re, l.im * rng.uniform_range(0.8, 1.2))
        });
        let b = match flavor {
            Flavor::Dplr => Array2::from_shape_fn((m, 1), |(i, _)| cx(init.b[i].re, init.b[i].im)),
            Flavor::DiagonalMimo => Array2::from_shape_fn((m, io), |_| cx(rng.normal(), rng.normal())),
        };
        let scale = (0.5 / m as f64).sqrt();
        let c = Array2::from_shape_fn((io, m), |_| cx(rng.normal() * scale, rng.normal() * scale));
        let d = Array1::from_shape_fn(io, |_| cast::<T>(rng.normal()));
        let dt_len = if flavor == Flavor::Dplr { 1 } else { m };
        let log_dt = Array1::from_shape_fn(dt_len, |_| cast::<T>(rng.uniform_range(1e-3f64.ln(), 1e-1f64.ln())));
        let p = (flavor == Flavor::Dplr).then(|| init.p.mapv(|z| cx(z.re, z.im)));
        SsmParams { flavor, lambda, p, b, c, d, log_dt, conjugate: true }
    }

    /// Dense continuous state matrix `diag(lambda) - p p^H`.
    pub fn dense_a(&self) -> Array2<Complex<T>> {
        let n = self.state_size();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let diag = if i == j { self.lambda[i] } else { Complex::new(T::zero(), T::zero()) };
            match &self.p {
                Some(p) => diag - p[i] * p[j].conj(),
                None => diag,
            }
        })
    }
}

/// State transition of a discretized SSM.
#[derive(Debug, Clone)]
pub enum StateMatrix<T: Scalar> {
    Dense(Array2<Complex<T>>),
    Diagonal(Array1<Complex<T>>),
}

impl<T: Scalar> StateMatrix<T> {
    pub fn size(&self) -> usize {
        match self {
            StateMatrix::Dense(a) => a.nrows(),
            StateMatrix::Diagonal(a) => a.len(),
        }
    }

    pub fn apply(&self, s: &Array1<Complex<T>>) -> Array1<Complex<T>> {
        match self {
            StateMatrix::Dense(a) => linalg::matvec(a, s),
            StateMatrix::Diagonal(a) => a * s,
        }
    }

    pub fn to_dense(&self) -> Array2<Complex<T>> {
        match self {
            StateMatrix::Dense(a) => a.clone(),
            StateMatrix::Diagonal(a) => Array2::from_diag(a),
        }
    }
}

/// Discrete-time system `s_k = A s_{k-1} + B u_k`, `y_k = scale Re(C s_k) + D u_k`.
#[derive(Debug, Clone)]
pub struct DiscreteSsm<T: Scalar> {
    pub a_bar: StateMatrix<T>,
    pub b_bar: Array2<Complex<T>>,
    pub c: Array2<Complex<T>>,
    pub d: Array1<T>,
    pub conjugate: bool,
}

impl<T: Scalar> DiscreteSsm<T> {
    pub fn state_size(&self) -> usize {
        self.a_bar.size()
    }

    pub fn output_scale(&self) -> T {
        if self.conjugate {
            T::one() + T::one()
        } else {
            T::one()
        }
    }

    pub fn zero_state(&self) -> SsmState<T> {
        Array1::zeros(self.state_size())
    }

    /// `scale * Re(C s)`.
    pub fn readout(&self, s: &Array1<Complex<T>>) -> Array1<T> {
        let scale = self.output_scale();
        Array1::from_shape_fn(self.c.nrows(), |y| {
            let mut acc = T::zero();
            for n in 0..s.len() {
                let z = self.c[[y, n]] * s[n];
                acc = acc + z.re;
            }
            acc * scale
        })
    }
}

/// Complex hidden state of one SSM.
pub type SsmState<T> = Array1<Complex<T>>;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex;
use pswm_core::ssm::discretize::{bilinear_dense, zoh_diagonal};
use pswm_core::ssm::{discretize, materialize_kernel, pssm_parallel, pssm_step, DiscreteSsm, SsmParams, StateMatrix};
use pswm_core::{Flavor, Rng, Scalar};

fn sequential<T: Scalar>(disc: &DiscreteSsm<T>, u: &Array2<T>, s0: &Array1<Complex<T>>) -> (Array2<T>, Array1<Complex<T>>) {
    let mut s = s0.clone();
    let mut y = Array2::zeros((u.nrows(), disc.c.nrows()));
    for k in 0..u.nrows() {
        let (yk, next) = pssm_step(disc, u.row(k), &s);
        y.row_mut(k).assign(&yk);
        s = next;
    }
    (y, s)
}

fn max_parallel_gap<T: Scalar>(flavor: Flavor, n: usize, len: usize, with_state: bool, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let params = SsmParams::<T>::random(flavor, n, 3, &mut rng);
    let disc = discretize(&params).unwrap();
    let u = Array2::from_shape_fn((len, params.input_dim()), |_| T::from_f64(rng.normal()).unwrap());
    let s0 = Array1::from_shape_fn(n / 2, |_| {
        let (re, im) = if with_state { (rng.normal(), rng.normal()) } else { (0.0, 0.0) };
        Complex::new(T::from_f64(re).unwrap(), T::from_f64(im).unwrap())
    });
    let (yp, sp) = pssm_parallel(&disc, u.view(), &s0, 4096).unwrap();
    let (ys, ss) = sequential(&disc, &u, &s0);
    let out = yp.iter().zip(ys.iter()).map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs());
    let state = sp.iter().zip(ss.iter()).map(|(a, b)| (a - b).norm().to_f64().unwrap());
    out.chain(state).fold(0.0, f64::max)
}

#[test]
fn parallel_matches_sequential() {
    let mut seed = 0;
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        for n in [4, 16, 64] {
            for len in [8, 256, 1024] {
                for with_state in [false, true] {
                    seed += 1;
                    let g32 = max_parallel_gap::<f32>(flavor, n, len, with_state, seed);
                    let g64 = max_parallel_gap::<f64>(flavor, n, len, with_state, seed);
                    assert!(g32 < 1e-4, "{flavor:?} N={n} T={len}: f32 gap {g32}");
                    assert!(g64 < 1e-9, "{flavor:?} N={n} T={len}: f64 gap {g64}");
                }
            }
        }
    }
}

#[test]
fn impulse_response_is_the_kernel() {
    let mut rng = Rng::new(3);
    for flavor in [Flavor::Dplr, Flavor::DiagonalMimo] {
        let mut params = SsmParams::<f64>::random(flavor, 16, 1, &mut rng);
        params.d.fill(0.0);
        let disc = discretize(&params).unwrap();
        let len = 1024;
        let mut u = Array2::zeros((len, 1));
        u[[0, 0]] = 1.0;
        let (y, _) = pssm_parallel(&disc, u.view(), &disc.zero_state(), 4096).unwrap();
        // direct powers of the dense transition
        let a = disc.a_bar.to_dense();
        let mut x: Array1<Complex<f64>> = disc.b_bar.column(0).to_owned();
        let kernel = materialize_kernel(&disc, len);
        for k in 0..len {
            let direct = 2.0 * disc.c.row(0).iter().zip(x.iter()).map(|(c, s)| (c * s).re).sum::<f64>();
            assert!((y[[k, 0]] - direct).abs() < 1e-4, "step {k}");
            assert!((kernel[[k, 0, 0]] - direct).abs() < 1e-9);
            x = a.dot(&x);
        }
    }
}

#[test]
fn discrete_transitions_are_stable() {
    let mut rng = Rng::new(5);
    for i in 0..40 {
        let flavor = if i % 2 == 0 { Flavor::Dplr } else { Flavor::DiagonalMimo };
        let params = SsmParams::<f64>::random(flavor, [4, 16, 64][i % 3], 2, &mut rng);
        let a = discretize(&params).unwrap().a_bar.to_dense();
        let n = a.nrows();
        let m = DMatrix::from_fn(n, n, |r, c| a[[r, c]]);
        let eig = m.eigenvalues().expect("complex eigenvalues");
        let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius < 1.0, "{flavor:?}: spectral radius {radius}");
    }
}

#[test]
fn outputs_are_real_under_conjugate_doubling() {
    // Running the full (non-halved) conjugate-closed system yields complex
    // outputs whose imaginary part must vanish and whose real part must match.
    let mut rng = Rng::new(8);
    let params = SsmParams::<f32>::random(Flavor::DiagonalMimo, 16, 1, &mut rng);
    let disc = discretize(&params).unwrap();
    let StateMatrix::Diagonal(a) = &disc.a_bar else { panic!("diagonal expected") };
    let len = 256;
    let u: Vec<f32> = (0..len).map(|_| rng.normal() as f32).collect();
    let (y, _) = pssm_parallel(&disc, Array2::from_shape_vec((len, 1), u.clone()).unwrap().view(), &disc.zero_state(), 4096).unwrap();
    let m = a.len();
    let mut s = vec![Complex::new(0.0f32, 0.0); 2 * m];
    for (k, &uk) in u.iter().enumerate() {
        let mut out = Complex::new(0.0f32, 0.0);
        for i in 0..m {
            s[i] = a[i] * s[i] + disc.b_bar[[i, 0]] * uk;
            s[m + i] = a[i].conj() * s[m + i] + disc.b_bar[[i, 0]].conj() * uk;
            out += disc.c[[0, i]] * s[i] + disc.c[[0, i]].conj() * s[m + i];
        }
        out += disc.d[0] * uk;
        assert!(out.im.abs() < 1e-5, "imaginary residue {}", out.im);
        assert!((out.re - y[[k, 0]]).abs() < 1e-4);
    }
}

fn expm(a: &Array2<Complex<f64>>) -> Array2<Complex<f64>> {
    let n = a.nrows();
    let e = DMatrix::from_fn(n, n, |r, c| a[[r, c]]).exp();
    Array2::from_shape_fn((n, n), |(r, c)| e[(r, c)])
}

fn fro(a: &Array2<Complex<f64>>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[test]
fn discretization_converges_to_the_exponential() {
    let mut rng = Rng::new(11);
    let dts = [1e-1, 1e-2, 1e-3];
    for n in [4, 16] {
        let params = SsmParams::<f64>::random(Flavor::Dplr, n, 1, &mut rng);
        let a = params.dense_a();
        let norm = fro(&a);
        let mut errs = Vec::new();
        for &dt in &dts {
            let (bar, _) = bilinear_dense(&a, &params.b, dt).unwrap();
            let err = fro(&(&bar - &expm(&a.mapv(|z| z * dt))));
            assert!(err <= dt * dt * norm * norm, "bilinear N={n} dt={dt}: {err}");
            errs.push(err);
        }
        let order = slope(&dts.map(f64::ln), &errs.iter().map(|e| e.ln()).collect::<Vec<_>>());
        assert!(order >= 1.9, "bilinear order {order}");

        let diag = SsmParams::<f64>::random(Flavor::DiagonalMimo, n, 1, &mut rng);
        for &dt in &dts {
            let steps = Array1::from_elem(n / 2, dt);
            let (bar, _) = zoh_diagonal(&diag.lambda, &diag.b, &steps);
            let exact = expm(&Array2::from_diag(&diag.lambda.mapv(|z| z * dt)));
            let err = fro(&(&Array2::from_diag(&bar) - &exact));
            assert!(err <= 1e-12 + dt * dt * fro(&diag.dense_a()).powi(2), "zoh dt={dt}: {err}");
        }
    }
}

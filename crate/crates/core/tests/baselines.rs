use approx::assert_abs_diff_eq;
use nalgebra::DVector;

use mfgp::dataset::FidelityDataset;
use mfgp::exact_gp::{build_bc, fit_exact_gp, imc_calibrate, Ar1Model, ExactGpConfig, ExactGpModel, ImcConfig, MeanSpec};
use mfgp::kernels::{se_ard_cov, SeArdParams};
use mfgp::nominal::NominalMapping;
use mfgp::num::{DenseMatrix, RngStream};

fn rand_mat(rng: &mut RngStream, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.uniform())
}

/// Posterior with a fixed mean, every inverse formed explicitly.
fn dense_posterior(x: &DenseMatrix, y: &DVector<f64>, p: &SeArdParams, noise: f64, mu: f64, xs: &DenseMatrix) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows();
    let kinv = (se_ard_cov(x, x, p).unwrap() + DenseMatrix::identity(n, n) * noise).try_inverse().unwrap();
    let ks = se_ard_cov(x, xs, p).unwrap();
    let mean = (ks.transpose() * &kinv * y.add_scalar(-mu)).add_scalar(mu);
    let var = (se_ard_cov(xs, xs, p).unwrap() - ks.transpose() * &kinv * &ks).diagonal();
    (mean, var)
}

#[test]
fn exact_gp_matches_dense_oracle() {
    let mut rng = RngStream::new(1);
    for _ in 0..50 {
        let n = 1 + rng.below(15);
        let d = 1 + rng.below(4);
        let x = rand_mat(&mut rng, n, d);
        let y = DVector::from_fn(n, |_, _| rng.normal());
        let p = SeArdParams::new((0..d).map(|_| rng.uniform_range(0.2, 2.0)).collect(), rng.uniform_range(0.3, 3.0)).unwrap();
        let noise = rng.uniform_range(1e-3, 0.5);
        let mu = rng.normal();
        let gp = ExactGpModel::with_params(x.clone(), y.clone(), p.clone(), noise, MeanSpec::Fixed(mu)).unwrap();
        let xs = rand_mat(&mut rng, 5, d);
        let (m, v) = gp.predict(&xs).unwrap();
        let (mo, vo) = dense_posterior(&x, &y, &p, noise, mu, &xs);
        for i in 0..5 {
            assert_abs_diff_eq!(m[i], mo[i], epsilon = 1e-8);
            assert_abs_diff_eq!(v[i], vo[i].max(0.0), epsilon = 1e-8);
        }
    }
}

#[test]
fn variance_does_not_grow_with_more_data() {
    let mut rng = RngStream::new(2);
    let p = SeArdParams::new(vec![0.3, 0.5], 1.2).unwrap();
    let x = rand_mat(&mut rng, 8, 2);
    let y = DVector::from_fn(8, |_, _| rng.normal());
    let xs = rand_mat(&mut rng, 100, 2);
    let small = ExactGpModel::with_params(x.rows(0, 7).into_owned(), y.rows(0, 7).into_owned(), p.clone(), 0.01, MeanSpec::Fixed(0.0)).unwrap();
    let full = ExactGpModel::with_params(x, y, p, 0.01, MeanSpec::Fixed(0.0)).unwrap();
    let (_, v7) = small.predict(&xs).unwrap();
    let (_, v8) = full.predict(&xs).unwrap();
    for i in 0..100 {
        assert!(v8[i] <= v7[i] + 1e-8);
    }
}

#[test]
fn ar1_without_scaling_is_the_discrepancy_gp() {
    let mut rng = RngStream::new(3);
    let x = rand_mat(&mut rng, 6, 1);
    let gp = |y: DVector<f64>| ExactGpModel::with_params(x.clone(), y, SeArdParams::unit(1), 0.01, MeanSpec::Profiled).unwrap();
    let model = Ar1Model {
        lf: gp(DVector::from_fn(6, |_, _| rng.normal())),
        rho: 0.0,
        discrepancy: gp(DVector::from_fn(6, |_, _| rng.normal())),
    };
    let xs = rand_mat(&mut rng, 20, 1);
    assert_eq!(model.predict(&xs).unwrap(), model.discrepancy.predict(&xs).unwrap());
}

#[test]
fn bc_with_flat_lf_is_a_single_fidelity_gp() {
    let mut rng = RngStream::new(4);
    let xl = rand_mat(&mut rng, 12, 1);
    let lf = FidelityDataset::new(xl, vec![0.7; 12], vec![(0.0, 1.0)], 1).unwrap();
    let xh = rand_mat(&mut rng, 7, 1);
    let yh: Vec<f64> = xh.iter().map(|v| (4.0 * v).sin() + v).collect();
    let hf = FidelityDataset::new(xh.clone(), yh.clone(), vec![(0.0, 1.0)], 2).unwrap();
    let cfg = ExactGpConfig::default();
    let bc = build_bc(&lf, &hf, &NominalMapping::identity(1), &cfg).unwrap();
    let gp = fit_exact_gp(&xh, &DVector::from_vec(yh), &cfg).unwrap();
    let xs = rand_mat(&mut rng, 30, 1);
    let (mb, _) = bc.predict(&xs).unwrap();
    let (mg, _) = gp.predict(&xs).unwrap();
    for i in 0..30 {
        assert_abs_diff_eq!(mb[i], mg[i], epsilon = 1e-6);
    }
}

#[test]
fn imc_never_worse_than_nominal() {
    let mut rng = RngStream::new(5);
    let lf = |z: &[f64]| (6.0 * z[0]).cos() + z[1];
    for _ in 0..5 {
        let x = rand_mat(&mut rng, 10, 2);
        let y: Vec<f64> = (0..10).map(|i| lf(&[0.3 * x[(i, 0)] + 0.4, x[(i, 1)]]) + 0.05 * rng.normal()).collect();
        let hf = FidelityDataset::new(x, y, vec![(0.0, 1.0); 2], 2).unwrap();
        let a0 = DenseMatrix::identity(2, 2);
        let r = imc_calibrate(&hf, &lf, &[(0.0, 1.0); 2], &a0, &[0.0, 0.0], &ImcConfig::default()).unwrap();
        assert!(r.objective <= r.nominal_objective);
        assert!(r.objective < 0.1 * r.nominal_objective);
    }
}

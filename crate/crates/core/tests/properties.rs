use proptest::prelude::*;

use mfgp::bench::lhs_sample;
use mfgp::dataset::FidelityDataset;
use mfgp::exact_gp::{ExactGpModel, MeanSpec};
use mfgp::kernels::{composite_mf_cov, se_ard_cov, CompositeMfParams, LayerKernel, SeArdParams};
use mfgp::mfdgp::{build_model, MfDgpModel, NominalInput, TrainConfig};
use mfgp::num::{cholesky_psd, DenseMatrix, RngStream};
use mfgp::svgp::{kl_gaussian, sparse_conditional, MeanFunction, NaturalParams, SparseVariationalLayer};

fn se(rng: &mut RngStream, d: usize) -> SeArdParams {
    SeArdParams::new((0..d).map(|_| rng.uniform_range(0.1, 3.0)).collect(), rng.uniform_range(0.1, 3.0)).unwrap()
}

fn spd(rng: &mut RngStream, m: usize) -> DenseMatrix {
    let g = DenseMatrix::from_fn(m, m, |_, _| rng.uniform_range(-1.0, 1.0));
    &g * g.transpose() + DenseMatrix::identity(m, m) * 1e-2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kl_is_non_negative(seed in any::<u64>(), m in 1usize..7, d in 1usize..4) {
        let mut rng = RngStream::new(seed);
        let z = DenseMatrix::from_fn(m, d, |_, _| rng.uniform());
        let mut layer = SparseVariationalLayer::new(z, DenseMatrix::zeros(m, 1), LayerKernel::SeArd(se(&mut rng, d)), 0.1, MeanFunction::Zero, 1.0).unwrap();
        layer.q_mean = DenseMatrix::from_fn(m, 1, |_, _| rng.normal());
        layer.q_chol[0] = cholesky_psd(&spd(&mut rng, m), &[0.0]).unwrap().lower;
        prop_assert!(kl_gaussian(&layer).unwrap() >= -1e-10);
    }

    #[test]
    fn gram_matrices_are_psd(seed in any::<u64>(), n in 1usize..15, d in 1usize..4, composite in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let x = DenseMatrix::from_fn(n, d, |_, _| rng.uniform_range(-2.0, 2.0));
        let k = if composite {
            let f = rng.normals(n);
            let p = CompositeMfParams { scale: se(&mut rng, d), previous: se(&mut rng, 1), bias: se(&mut rng, d) };
            composite_mf_cov(&x, &x, &f, &f, &p).unwrap()
        } else {
            se_ard_cov(&x, &x, &se(&mut rng, d)).unwrap()
        };
        prop_assert!((&k - k.transpose()).amax() <= 1e-12);
        let scale = k.diagonal().amax();
        prop_assert!(k.symmetric_eigenvalues().min() >= -1e-10 * scale);
    }

    #[test]
    fn natural_parameters_round_trip(seed in any::<u64>(), m in 1usize..7) {
        let mut rng = RngStream::new(seed);
        let mean = DenseMatrix::from_fn(m, 1, |_, _| rng.normal());
        let s = spd(&mut rng, m);
        let (m2, l) = NaturalParams::from_mean_cov(&mean, &s).unwrap().to_mean_chol().unwrap();
        prop_assert!((m2 - mean).amax() <= 1e-8 * (1.0 + s.amax()));
        prop_assert!((&l * l.transpose() - &s).amax() <= 1e-8 * (1.0 + s.amax()));
    }

    #[test]
    fn sparse_layer_at_data_reproduces_exact_gp(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = RngStream::new(seed);
        let x = DenseMatrix::from_fn(n, 1, |i, _| (i as f64 + rng.uniform()) / n as f64);
        let y = nalgebra::DVector::from_fn(n, |_, _| rng.normal());
        let p = SeArdParams::new(vec![rng.uniform_range(0.1, 0.4)], 1.0).unwrap();
        let noise = 0.1;
        let gp = ExactGpModel::with_params(x.clone(), y.clone(), p.clone(), noise, MeanSpec::Fixed(0.0)).unwrap();
        let k = se_ard_cov(&x, &x, &p).unwrap();
        let kn_inv = (&k + DenseMatrix::identity(n, n) * noise).try_inverse().unwrap();
        let post_mean = &k * &kn_inv * &y;
        let q_mean = DenseMatrix::from_column_slice(n, 1, post_mean.as_slice());
        let mut layer = SparseVariationalLayer::new(x.clone(), q_mean, LayerKernel::SeArd(p), noise, MeanFunction::Zero, 1.0).unwrap();
        layer.jitter = 0.0;
        let post = &k - &k * &kn_inv * &k;
        layer.q_chol[0] = cholesky_psd(&((&post + post.transpose()) * 0.5), &[0.0, 1e-12]).unwrap().lower;
        let xs = DenseMatrix::from_fn(10, 1, |_, _| rng.uniform());
        let (m, v) = sparse_conditional(&layer, &xs).unwrap();
        let (me, ve) = gp.predict(&xs).unwrap();
        for i in 0..10 {
            prop_assert!((m[(i, 0)] - me[i]).abs() <= 1e-6);
            prop_assert!((v[(i, 0)] - ve[i]).abs() <= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn lhs_fills_every_stratum_once(seed in any::<u64>(), n in 1usize..40) {
        let bounds = [(0.0, 1.0), (-3.0, 5.0), (100.0, 100.5)];
        let x = lhs_sample(n, &bounds, &mut RngStream::new(seed));
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let mut strata: Vec<usize> = (0..n)
                .map(|i| {
                    prop_assert!(x[(i, j)] >= lo && x[(i, j)] <= hi);
                    Ok((((x[(i, j)] - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
                })
                .collect::<Result<_, _>>()?;
            strata.sort();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }
}

#[test]
fn checkpoint_round_trip_is_value_exact() {
    let mut rng = RngStream::new(6);
    let x1 = DenseMatrix::from_fn(8, 1, |_, _| rng.uniform());
    let y1: Vec<f64> = x1.iter().map(|v| (7.0 * v).sin()).collect();
    let x2 = DenseMatrix::from_fn(4, 2, |_, _| rng.uniform());
    let y2: Vec<f64> = (0..4).map(|i| x2[(i, 0)] - x2[(i, 1)]).collect();
    let lf = FidelityDataset::new(x1, y1, vec![(0.0, 1.0)], 1).unwrap();
    let hf = FidelityDataset::new(x2.clone(), y2, vec![(0.0, 1.0); 2], 2).unwrap();
    let nominal = NominalInput::Values(x2.columns(0, 1).map(|v| 0.5 * v + 0.2));
    let config = TrainConfig { iterations: 30, warmup: 10, ..TrainConfig::fast() };
    let mut m = build_model(&[lf, hf], &[nominal], &config).unwrap();
    m.train(None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save_checkpoint(&path).unwrap();
    let back = MfDgpModel::load_checkpoint(&path).unwrap();
    assert_eq!(back, m);

    // Resuming from the checkpoint continues the same trajectory.
    let mut a = m.clone();
    let mut b = back;
    a.train_iterations(5, None).unwrap();
    b.train_iterations(5, None).unwrap();
    assert_eq!(a.elbo_history, b.elbo_history);
}

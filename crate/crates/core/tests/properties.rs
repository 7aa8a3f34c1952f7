use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use xanes_unmix::cube::{divergence_adjoint, forward_difference, mix_forward};
use xanes_unmix::io::{self, CubeData};
use xanes_unmix::{Dictionary, EnergyGrid, GradientPair, ImageGeometry, PhaseMap, ScalingField};

fn grid_and_fields() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| {
        let n = r * c;
        (
            Just(r),
            Just(c),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
        )
    })
}

fn energies(count: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..20.0f64, count).prop_map(|steps| {
        let mut e = 8000.0;
        steps
            .into_iter()
            .map(|d| {
                e += d;
                e
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn gradient_adjointness((r, c, z, dx, dy) in grid_and_fields()) {
        let geom = ImageGeometry::new(r, c).unwrap();
        let g = GradientPair { dx, dy };
        let lhs = forward_difference(&z, geom).unwrap().dot(&g);
        let div = divergence_adjoint(&g, geom).unwrap();
        let rhs: f64 = z.iter().zip(&div).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_annihilates_constants(r in 1usize..=8, c in 1usize..=8, v in -10.0..10.0f64) {
        let geom = ImageGeometry::new(r, c).unwrap();
        let g = forward_difference(&vec![v; r * c], geom).unwrap();
        prop_assert!(g.dx.iter().chain(&g.dy).all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn mix_forward_is_linear_in_x(
        t in 2usize..6,
        n in 1usize..10,
        seed in any::<u64>(),
        alpha in -2.0..2.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let geom = ImageGeometry::new(1, n).unwrap();
        let a = DMatrix::from_fn(t, 2, |_, _| rng.random_range(0.0..1.0));
        let dict = Dictionary::unlabeled(EnergyGrid::index(t).unwrap(), a).unwrap();
        let s = ScalingField::new(geom, DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0))).unwrap();
        let x1 = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let x2 = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let f = |x: DMatrix<f64>| mix_forward(&dict, &PhaseMap::new(geom, x).unwrap(), &s).unwrap().values;
        let lhs = f(&x1 * alpha + &x2);
        let rhs = f(x1.clone()) * alpha + f(x2.clone());
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn cube_round_trip_is_exact(
        (rows, cols, bands) in (1usize..5, 1usize..5, 2usize..6),
        with_energies in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let energies_ev = with_energies.then(|| {
            let mut e = 8000.0;
            (0..bands).map(|_| { e += rng.random_range(0.1..10.0); e }).collect()
        });
        let values = (0..rows * cols * bands).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        let data = CubeData { rows, cols, bands, energies_ev, values };
        let bytes = io::encode_cube(&data).unwrap();
        let back = io::decode_cube(&bytes).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(io::encode_cube(&back).unwrap(), bytes);
    }

    #[test]
    fn dictionary_csv_round_trip_is_exact(
        e in (2usize..8).prop_flat_map(energies),
        seed in any::<u64>(),
        states in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = e.len();
        let spectra = DMatrix::from_fn(t, states, |_, _| rng.random_range(-2.0..2.0f64));
        let dict = Dictionary::unlabeled(EnergyGrid::new(e).unwrap(), spectra).unwrap();
        let bytes = io::dictionary_csv(&dict).unwrap();
        let back = io::parse_dictionary_csv(&bytes).unwrap();
        prop_assert_eq!(&back, &dict);
        prop_assert_eq!(io::dictionary_csv(&back).unwrap(), bytes);
    }

    #[test]
    fn pgm_round_trip_matches_quantization(
        (rows, cols) in (1usize..6, 1usize..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let geom = ImageGeometry::new(rows, cols).unwrap();
        let x = DMatrix::from_fn(1, rows * cols, |_, _| rng.random_range(-0.2..1.2f64));
        let map = PhaseMap::new(geom, x.clone()).unwrap();
        let (g, px) = io::parse_pgm(&io::pgm_bytes(&map, 0).unwrap()).unwrap();
        prop_assert_eq!(g, geom);
        for (p, v) in px.iter().zip(x.iter()) {
            prop_assert_eq!(*p as f64, (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor());
        }
    }
}

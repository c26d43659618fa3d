use proptest::prelude::*;

use nlhom::energy::{nonlocal_energy, rescaling_identity_check, EnergyParams};
use nlhom::fields::{lp_norm, read_binary, write_binary};
use nlhom::inequalities::gns_check;
use nlhom::kernels::{BuiltinParams, KernelSpec};
use nlhom::regimes::{classify_regime, ScalingLaw};
use nlhom::{Domain, Field, Kernel};

const N: usize = 8;

fn grid() -> Domain {
    Domain::centered_cube(2, 1.0, 2.0 / N as f64).unwrap()
}

fn field(vals: Vec<f64>) -> Field {
    Field::from_values(grid(), 1, vals).unwrap()
}

fn kernels() -> Vec<Kernel> {
    vec![
        KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap(),
        KernelSpec::smooth_decay(2, 1, 1.5, 2.0).unwrap(),
        KernelSpec::builtin(
            "anisotropic",
            2,
            1,
            1.5,
            &BuiltinParams { a: Some(vec![0.8]), c_iso: Some(0.2), ..Default::default() },
        )
        .unwrap(),
    ]
}

fn energy(u: &Field, k: &Kernel) -> f64 {
    let params = EnergyParams::new(k, 0.5, None, u.domain().h()).unwrap();
    nonlocal_energy(u, u.domain(), k, &params).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, N * N)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn energy_is_p_homogeneous(v in values(), t in -3.0f64..3.0) {
        let u = field(v);
        for k in kernels() {
            let a = energy(&u, &k);
            let b = energy(&u.scaled(t), &k);
            prop_assert!(close(b, t.abs().powf(k.p) * a, 1e-11), "{b} vs {}", t.abs().powf(k.p) * a);
        }
    }

    #[test]
    fn energy_ignores_constants(v in values(), c in -5.0f64..5.0) {
        let u = field(v);
        for k in kernels() {
            prop_assert!(close(energy(&u.add_constant(&[c]), &k), energy(&u, &k), 1e-9));
        }
    }

    #[test]
    fn energy_grows_with_the_set(v in values(), cut in 0.2f64..0.9) {
        let u = field(v);
        let k = &kernels()[0];
        let params = EnergyParams::new(k, 0.5, None, u.domain().h()).unwrap();
        let inner = u.domain().restrict(|x| x.iter().all(|c| c.abs() < cut));
        let small = nonlocal_energy(&u, &inner, k, &params).unwrap();
        let big = nonlocal_energy(&u, u.domain(), k, &params).unwrap();
        prop_assert!(small >= 0.0 && small <= big * (1.0 + 1e-12));
    }

    #[test]
    fn kernel_is_p_homogeneous_in_z(xi in prop::collection::vec(-0.9f64..0.9, 2), z in -2.0f64..2.0, t in 0.1f64..4.0) {
        for k in kernels() {
            let a = k.eval(&xi, &[z]);
            let b = k.eval(&xi, &[t * z]);
            prop_assert!(close(b, t.powf(k.p) * a, 1e-12));
        }
    }

    #[test]
    fn rescaling_identity_is_exact(v in values(), n in 1u32..4, up in any::<bool>()) {
        let u = field(v);
        let r = if up { n as f64 } else { 1.0 / n as f64 };
        let k = &kernels()[0];
        let params = EnergyParams::new(k, 0.5, None, u.domain().h()).unwrap();
        let c = rescaling_identity_check(&u, &[0.0, 0.0], r, 0.75, k, &params).unwrap();
        prop_assert!(c.relative_gap <= 1e-12, "{c:?}");
    }

    #[test]
    fn gns_ratio_is_scale_invariant(v in values(), t in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0]) {
        let u = field(v).with_exterior(vec![0.0]);
        let a = gns_check(&u, 0.5, 1.0, 1.5).unwrap();
        let b = gns_check(&u.scaled(t).with_exterior(vec![0.0]), 0.5, 1.0, 1.5).unwrap();
        prop_assert!(close(a.ratio, b.ratio, 1e-12), "{} vs {}", a.ratio, b.ratio);
    }

    #[test]
    fn lp_norm_is_homogeneous(v in values(), t in -3.0f64..3.0, q in 1.0f64..4.0) {
        let u = field(v);
        prop_assert!(close(lp_norm(&u.scaled(t), q), t.abs() * lp_norm(&u, q), 1e-12));
    }

    #[test]
    fn binary_dump_round_trips(v in values()) {
        let u = field(v);
        let mut buf = Vec::new();
        write_binary(&u, &mut buf).unwrap();
        let back = read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values(), u.values());
        prop_assert_eq!(back.domain().shape(), u.domain().shape());
    }

    // away from the critical lines, the regime depends on the exponents only
    #[test]
    fn regime_ignores_prefactors(
        a in 0.05f64..1.5,
        b in 1.05f64..5.0,
        c1 in 0.2f64..5.0,
        c2 in 0.2f64..5.0,
        c3 in 0.2f64..5.0,
        c4 in 0.2f64..5.0,
    ) {
        let q = 3.0;
        prop_assume!((b - q).abs() > 0.05 && (a * b - 1.0).abs() > 0.05);
        let l1 = ScalingLaw::power("x", 3, 2.0, c1, a, c2, b);
        let l2 = ScalingLaw::power("y", 3, 2.0, c3, a, c4, b);
        if let (Ok(l1), Ok(l2)) = (l1, l2) {
            prop_assert_eq!(classify_regime(&l1), classify_regime(&l2));
        }
    }
}

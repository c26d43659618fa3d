use std::f64::consts::PI;

use approx::assert_relative_eq;

use nlhom::capacity::{pcap_annulus_closed_form, phi_power_closed_form, profile_energy};
use nlhom::homogenize::{fhom_cell, fhom_convex_formula};
use nlhom::kernels::KernelSpec;
use nlhom::minimize::SolveOptions;
use nlhom::quad;

// closed forms derived by hand: cap_p(B_1, B_R) = |S^{d-1}| ((p-d)/(p-1))^{p-1} / (R^{(p-d)/(p-1)} - 1)^{p-1}
#[test]
fn annulus_capacity_closed_form() {
    let cap = |d: usize, p: f64, r: f64| {
        let g = (p - d as f64) / (p - 1.0);
        quad::sphere_area(d) * g.abs().powf(p - 1.0) / (1.0 - r.powf(g)).abs().powf(p - 1.0)
    };
    for (d, p, r) in [(3usize, 2.0, 2.0), (3, 1.5, 5.0), (2, 1.5, 3.0), (4, 3.0, 1.5)] {
        assert_relative_eq!(pcap_annulus_closed_form(d, p, r).unwrap(), cap(d, p, r), max_relative = 1e-12);
    }
    assert_relative_eq!(phi_power_closed_form(1.0, 3, 2.0, &[1.0]).unwrap(), 4.0 * PI, max_relative = 1e-12);
    assert_relative_eq!(phi_power_closed_form(1.0, 3, 2.0, &[-2.0]).unwrap(), 16.0 * PI, max_relative = 1e-12);
}

#[test]
fn sampled_profile_approaches_capacity() {
    let exact = pcap_annulus_closed_form(2, 1.5, 3.0).unwrap();
    let coarse = (profile_energy(2, 1.5, 3.0, 1.0 / 8.0).unwrap() - exact).abs();
    let fine = (profile_energy(2, 1.5, 3.0, 1.0 / 32.0).unwrap() - exact).abs();
    assert!(fine < coarse && fine < 0.03 * exact, "{coarse} {fine} {exact}");
}

// ∫_{B_1} |ξ_1|^2 dξ = 4π/15 in d = 3
#[test]
fn indicator_convex_formula() {
    let k = KernelSpec::indicator_ball(3, 1, 2.0, 1.0, 1.0).unwrap();
    assert_relative_eq!(fhom_convex_formula(&k, &[0.0, 1.0, 0.0]).unwrap().value, 4.0 * PI / 15.0, max_relative = 1e-6);
}

#[test]
fn cube_problem_approaches_convex_formula_in_2d() {
    let k = KernelSpec::indicator_ball(2, 1, 1.5, 1.0, 1.0).unwrap();
    let s = [0.6, 0.8];
    let exact = fhom_convex_formula(&k, &s).unwrap().value;
    let opts = SolveOptions::default();
    let a = fhom_cell(&k, &s, 6.0, 0.125, &opts).unwrap();
    let b = fhom_cell(&k, &s, 12.0, 0.125, &opts).unwrap();
    assert!(a.report.converged && b.report.converged);
    assert!((b.value - exact).abs() < (a.value - exact).abs());
    assert!((b.value - exact).abs() < 0.15 * exact, "{} vs {exact}", b.value);
}

use std::f64::consts::PI;

use cavshape_core::assembly::SpaceKind;
use cavshape_core::eigen::speed_of_light;
use cavshape_core::geometry::GeometryFamily;
use cavshape_core::model::{DiscreteModel, SpectralModel};
use cavshape_core::oracle::{
    bessel_j, bessel_zero, box_freqs, box_lambda, crossing_radius, pillbox_freqs, root_brackets, BesselKind, BoxMode,
    CylinderMode, PillboxSpec,
};
use proptest::prelude::*;

fn mode(label: &str) -> CylinderMode {
    label.parse().unwrap()
}

/// Brute-force root: dense sign scan of the series followed by linear interpolation.
fn scan_root(m: u32, n: usize) -> f64 {
    let h = 1e-5;
    let mut found = 0;
    let mut x = h;
    let mut fx = bessel_j(m, x).unwrap();
    loop {
        let y = x + h;
        let fy = bessel_j(m, y).unwrap();
        if fx.signum() != fy.signum() {
            found += 1;
            if found == n {
                return x - fx * h / (fy - fx);
            }
        }
        x = y;
        fx = fy;
    }
}

#[test]
fn bessel_roots() {
    let j01 = bessel_zero(BesselKind::J, 0, 1).unwrap();
    assert!((j01 - 2.404825557695773).abs() <= 1e-13);
    assert!((j01 - scan_root(0, 1)).abs() <= 1e-9);
    assert!((bessel_zero(BesselKind::J, 0, 2).unwrap() - scan_root(0, 2)).abs() <= 1e-9);
    assert!((bessel_zero(BesselKind::JPrime, 1, 1).unwrap() - 1.841183781340659).abs() <= 1e-13);
    assert_eq!(root_brackets(BesselKind::J, 0, 10.0).unwrap().len(), 3);
    assert!(bessel_zero(BesselKind::J, 0, 9).is_err());
    assert!(bessel_zero(BesselKind::J, 0, 0).is_err());
}

#[test]
fn tm010_tuned_radius_gives_three_gigahertz() {
    let spec = PillboxSpec::new(0.03825, 0.1).unwrap();
    let f = pillbox_freqs(&spec, &[mode("TM010")]).unwrap()[0];
    assert!((f - 3e9).abs() <= 0.002 * 3e9, "{f}");
}

#[test]
fn tm_below_te_at_the_start_radius() {
    let spec = PillboxSpec::new(0.06, 0.1).unwrap();
    let f = pillbox_freqs(&spec, &[mode("TM010"), mode("TE111")]).unwrap();
    assert!(f[0] < f[1], "{f:?}");
}

#[test]
fn te111_long_cavity_limit() {
    let r = 0.05;
    let spec = PillboxSpec::new(r, 1e6).unwrap();
    let f = pillbox_freqs(&spec, &[mode("TE111")]).unwrap()[0];
    let limit = speed_of_light() * bessel_zero(BesselKind::JPrime, 1, 1).unwrap() / (2.0 * PI * r);
    assert!((f - limit).abs() <= 1e-9 * limit);
}

#[test]
fn crossing_radius_values() {
    let r = crossing_radius(0.1).unwrap();
    assert!((r - 0.04924).abs() <= 5e-6, "{r}");
    assert!((crossing_radius(0.2).unwrap() - 2.0 * r).abs() <= 1e-15);
    let f = pillbox_freqs(&PillboxSpec::new(r, 0.1).unwrap(), &[mode("TM010"), mode("TE111")]).unwrap();
    assert!((f[0] - f[1]).abs() <= 1e-10 * f[0]);
}

#[test]
fn mode_labels_round_trip_and_reject_garbage() {
    for l in ["TM010", "TE111", "TM110", "TE211"] {
        assert_eq!(mode(l).to_string(), l);
    }
    for bad in ["TX010", "TM01", "TM000", "TE110", "TM01a"] {
        assert!(bad.parse::<CylinderMode>().is_err(), "{bad}");
    }
}

#[test]
fn box_mode_matches_a_discrete_solve() {
    let m110 = BoxMode { m: 1, n: 1, p: 0 };
    let l = box_lambda(1.0, 1.0, 1.0, m110).unwrap();
    assert!((l - 2.0 * PI * PI).abs() <= 1e-12);
    let f = box_freqs(1.0, 1.0, 1.0, m110).unwrap();
    assert!((f - speed_of_light() / 2f64.sqrt()).abs() <= 1e-6);

    let fam = GeometryFamily::scaled_rectangle([1.0, 2.0], 1.0).unwrap();
    let model = DiscreteModel::new(fam, SpaceKind::ScalarH1Dirichlet, 2, 2, 1).unwrap();
    let discrete = model.solve(&[0.0]).unwrap().solution.frequencies()[0];
    assert!((discrete - f).abs() <= 1e-3 * f, "{discrete} vs {f}");
}

#[test]
fn box_ordering_in_a_wide_section() {
    let l21 = box_lambda(1.2, 1.0, 1.0, BoxMode { m: 2, n: 1, p: 0 }).unwrap();
    let l12 = box_lambda(1.2, 1.0, 1.0, BoxMode { m: 1, n: 2, p: 0 }).unwrap();
    assert!(l21 < l12);
    assert!(box_lambda(1.0, 1.0, 1.0, BoxMode { m: 0, n: 1, p: 0 }).is_err());
}

proptest! {
    #[test]
    fn pillbox_frequencies_fall_with_radius_and_scale_exactly(
        r in 0.01f64..0.2,
        grow in 1.001f64..2.0,
        length in 0.02f64..0.5,
        s in 0.1f64..10.0,
        which in 0usize..4,
    ) {
        let m = [mode("TM010"), mode("TE111"), mode("TM110"), mode("TM011")][which];
        let f = |r: f64, l: f64| pillbox_freqs(&PillboxSpec::new(r, l).unwrap(), &[m]).unwrap()[0];
        let base = f(r, length);
        prop_assert!(f(r * grow, length) < base);
        prop_assert!((f(r * s, length * s) - base / s).abs() <= 1e-12 * base / s);
    }
}

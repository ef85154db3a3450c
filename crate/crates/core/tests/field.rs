use proptest::prelude::*;
use regflow::counterexample::{build_field, CounterexampleParams};
use regflow::domain::Region;
use regflow::field::{mollify, verify_divergence_bound, AnalyticShape, DivergenceBound, MollifierParams, SamplePlan, VectorFieldSpec};
use regflow::quadrature::composite_rule;

fn analytic(shape: AnalyticShape, d: usize) -> VectorFieldSpec {
    VectorFieldSpec::analytic(shape, d, 1.0).unwrap()
}

fn shapes() -> impl Strategy<Value = AnalyticShape> {
    prop_oneof![
        Just(AnalyticShape::Rotation),
        (-2.0..2.0f64).prop_map(|rate| AnalyticShape::Linear { rate }),
        Just(AnalyticShape::CubicRadial),
        Just(AnalyticShape::Saturating),
        (0.1..3.0f64).prop_map(|speed| AnalyticShape::RadialConstant { speed }),
        (0.1..2.0f64, -3.0..3.0f64).prop_map(|(radial, tangential)| AnalyticShape::Spiral { radial, tangential }),
        (-1.0..1.0f64, -2.0..2.0f64).prop_map(|(drift, shear)| AnalyticShape::ShearKink { drift, shear }),
    ]
}

proptest! {
    #[test]
    fn evaluation_is_bit_identical(shape in shapes(), x in prop::array::uniform2(-3.0..3.0f64), t in 0.0..1.0f64) {
        prop_assume!(x[0].hypot(x[1]) > 1e-3);
        let f = analytic(shape, 2);
        let a = f.evaluate(t, &x).unwrap();
        let b = f.evaluate(t, &x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_outside_support(shape in shapes(), r in 1.0001..5.0f64, angle in 0.0..std::f64::consts::TAU) {
        let f = analytic(shape, 2).with_support(Region::centered_ball(2, 1.0));
        let v = f.evaluate(0.5, &[r * angle.cos(), r * angle.sin()]).unwrap();
        prop_assert!(v.iter().all(|c| *c == 0.0));
    }
}

#[test]
fn divergence_bound_examples() {
    let plan = SamplePlan { region: Region::centered_ball(3, 2.0), points: 400, times: 3, tolerance: 1e-9, fd_step: None };
    let lin = analytic(AnalyticShape::Linear { rate: 1.0 }, 3);
    let check = verify_divergence_bound(&lin, &DivergenceBound::constant(None, 3.0, 1.0), &plan).unwrap();
    assert!(check.violations.is_empty());
    assert_eq!(check.worst_margin, 0.0);

    let plan = SamplePlan { region: Region::centered_ball(2, 2.0), ..plan };
    let rot = analytic(AnalyticShape::Rotation, 2);
    assert!(verify_divergence_bound(&rot, &DivergenceBound::constant(None, 0.0, 1.0), &plan).unwrap().violations.is_empty());
    let strict = DivergenceBound::constant(None, 0.5, 1.0);
    assert_eq!(verify_divergence_bound(&rot, &strict, &plan).unwrap().violations.len(), 400 * 3);
}

// L1 distance over [-1, 1]^2, resolved finely across the kink line x_1 = 0.
fn l1_distance(exact: &VectorFieldSpec, smooth: &VectorFieldSpec) -> f64 {
    let xs = composite_rule(-1.0, 1.0, 400, 4);
    let ys = composite_rule(-1.0, 1.0, 2, 4);
    let mut total = 0.0;
    for &(x, wx) in &xs {
        for &(y, wy) in &ys {
            let a = exact.evaluate(0.0, &[x, y]).unwrap();
            let b = smooth.evaluate(0.0, &[x, y]).unwrap();
            total += wx * wy * (a[0] - b[0]).hypot(a[1] - b[1]);
        }
    }
    total
}

#[test]
fn mollified_lipschitz_field_converges_in_l1() {
    let b = analytic(AnalyticShape::ShearKink { drift: 0.3, shear: 1.0 }, 2);
    let clip = Region::centered_ball(2, 3.0);
    let dist: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| l1_distance(&b, &mollify(&b, &MollifierParams::new(eps), &clip).unwrap()))
        .collect();
    for w in dist.windows(2) {
        assert!(w[1] / w[0] <= 0.6, "{dist:?}");
    }
}

#[test]
fn sup_distance_shrinks_with_epsilon() {
    let b = analytic(AnalyticShape::Saturating, 2);
    let clip = Region::centered_ball(2, 4.0);
    let pts: Vec<[f64; 2]> = (0..200)
        .map(|i| {
            let r = 0.2 + 0.8 * ((i * 37 % 200) as f64 / 200.0);
            let a = i as f64 * 0.61803398875 * std::f64::consts::TAU;
            [r * a.cos(), r * a.sin()]
        })
        .collect();
    let sup = |eps: f64| {
        let m = mollify(&b, &MollifierParams { epsilon: eps, quadrature_points: 12 }, &clip).unwrap();
        pts.iter()
            .map(|x| {
                let (p, q) = (b.evaluate(0.0, x).unwrap(), m.evaluate(0.0, x).unwrap());
                (p[0] - q[0]).hypot(p[1] - q[1])
            })
            .fold(0.0, f64::max)
    };
    let s: Vec<f64> = [0.4, 0.2, 0.1, 0.05].into_iter().map(sup).collect();
    assert!(s.windows(2).all(|w| w[1] < w[0]), "{s:?}");
}

#[test]
fn counterexample_is_divergence_free_in_cylinders() {
    let params = CounterexampleParams::new(3, 1.5, 8);
    let field = build_field(&params, 2.5).unwrap();
    for k in 1..=4usize {
        let a = params.radius(k);
        let h = 1e-3 * a;
        let axis = 0.5f64.powi(k as i32);
        let (zlo, zhi) = if k % 2 == 1 {
            (-(2f64.powi(k as i32 - 1)), 2f64.powi(k as i32))
        } else {
            (-(2f64.powi(k as i32)), 2f64.powi(k as i32 - 1))
        };
        for i in 0..40 {
            let rho = (a - 2.0 * h) * (i as f64 / 40.0);
            let ang = i as f64 * 2.399963;
            let z = zlo + (zhi - zlo) * (0.1 + 0.8 * (i as f64 / 39.0));
            let x = [axis + rho * ang.cos(), rho * ang.sin(), z];
            let div = field.fd_divergence(0.0, &x, h).unwrap();
            assert!(div.abs() <= 1e-6 * 4f64.powi(k as i32), "k={k} x={x:?} div={div}");
        }
    }
}

//! Property-based tests: moment inequalities, algebraic identities of the
//! decomposition, covariance of `I`, and moment-vs-finite-difference agreement
//! on randomized sources and parameters.

use proptest::prelude::*;

use riesz_lab::decomposition::{grouped_terms, split_lambda, terms_bruteforce, terms_factored};
use riesz_lab::math::{lagrange_wedge_inner, Vector};
use riesz_lab::operator::{i_core, l_pq, p_laplacian_of_power};
use riesz_lab::potential::{bundle_from_moments, compute_moments, fd_oracle, moment_bundle};
use riesz_lab::source::{AtomicMeasure, Params, SourceMeasure};

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 3)
}

fn atoms(max: usize) -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
    prop::collection::vec((0.05..2.0f64, prop::collection::vec(-1.5..1.5f64, 3)), 1..=max)
}

/// Random in-regime parameters (alpha strictly inside the admissible range,
/// and above -2 so the grouped sign argument applies).
fn in_regime_params() -> impl Strategy<Value = Params> {
    prop_oneof![
        // case 1: 2 <= p < n, q >= 1, 0 < alpha <= (n-p)/(p-2+q)
        (4usize..=6, 0.0..1.0f64, 1.0..3.0f64, 0.05..1.0f64).prop_map(|(n, pfrac, q, afrac)| {
            let p = 2.0 + pfrac * (n as f64 - 2.0 - 0.05);
            let thr = (n as f64 - p) / (p - 2.0 + q);
            Params::finite(n, p, q, afrac * thr).unwrap()
        }),
        // case 2: p > n, 0 < q <= 1, -alpha >= (p-n)/(p-2+q), alpha > -2
        (3usize..=5, 0.2..3.0f64, 0.15..1.0f64, 0.0..1.0f64).prop_filter_map(
            "alpha must stay above -2",
            |(n, pex, q, frac)| {
                let p = n as f64 + pex;
                let thr = (p - n as f64) / (p - 2.0 + q);
                let alpha = -(thr + frac * (2.0 - thr).max(0.0));
                if alpha <= -2.0 || -alpha < thr {
                    None
                } else {
                    Some(Params::finite(n, p, q, alpha).unwrap())
                }
            }
        ),
    ]
}

fn source3(pairs: &[(f64, Vec<f64>)]) -> SourceMeasure {
    SourceMeasure::Atomic(AtomicMeasure::from_pairs(pairs).unwrap())
}

proptest! {
    /// |U ^ V|^2 >= 0 and symmetry of the wedge inner product in (V, W).
    #[test]
    fn wedge_inner_nonneg_and_symmetric(u in vec3(), v in vec3(), w in vec3()) {
        let (u, v, w) = (Vector(u), Vector(v), Vector(w));
        let sq = lagrange_wedge_inner(&u, &v, &v).unwrap();
        prop_assert!(sq >= -1e-12 * u.norm_sq() * v.norm_sq());
        let a = lagrange_wedge_inner(&u, &v, &w).unwrap();
        let b = lagrange_wedge_inner(&u, &w, &v).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    /// Linear dependence is exactly the equality case of |U ^ V|^2 = 0.
    #[test]
    fn wedge_inner_dependence_cases(u in vec3(), c in -3.0..3.0f64) {
        let u = Vector(u);
        prop_assume!(u.norm() > 0.1);
        let v = u.scale(c);
        let sq = lagrange_wedge_inner(&u, &v, &v).unwrap();
        prop_assert!(sq.abs() <= 1e-10 * u.norm_sq() * v.norm_sq().max(1.0));
        // generic perpendicular perturbation is strictly positive
        let mut wv = v.0.clone();
        wv[0] += u.0[1] + 1.0;
        wv[1] -= u.0[0];
        let w = Vector(wv);
        let sq2 = lagrange_wedge_inner(&u, &w, &w).unwrap();
        let dep = u.dot(&w).powi(2);
        let full = u.norm_sq() * w.norm_sq();
        if full - dep > 1e-6 * full {
            prop_assert!(sq2 > 0.0);
        }
    }

    /// Cauchy-Schwarz family of the moments, plus the trace identity; single
    /// atoms achieve equality.
    #[test]
    fn moment_inequalities(
        pairs in atoms(6),
        x in vec3(),
        alpha in -1.8..0.9f64,
    ) {
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(x);
        prop_assume!(measure.min_distance_to(&x) > 0.15);
        let source = SourceMeasure::Atomic(measure);
        let m = compute_moments(&source, &x, alpha).unwrap();

        prop_assert!(m.s_alpha > 0.0 && m.s_alpha_1 > 0.0 && m.s_alpha_2 > 0.0);
        let cs = m.s_alpha * m.s_alpha_2 - m.s_alpha_1 * m.s_alpha_1;
        prop_assert!(cs >= -1e-12 * m.s_alpha * m.s_alpha_2, "S CS defect {cs}");
        prop_assert!(m.v.norm() <= m.s_alpha_1 * (1.0 + 1e-12));
        prop_assert!((m.m.trace() - m.s_alpha_2).abs() <= 1e-12 * m.s_alpha_2);

        // 0 <= d^T M d <= S_{alpha+2} |d|^2 along random directions
        for k in 0..3 {
            let mut d = vec![0.01; 3];
            d[k] += 1.0 + x.0[k].abs();
            let d = Vector(d);
            let q = m.m.quad_form(&d);
            prop_assert!(q >= -1e-12 * m.s_alpha_2 * d.norm_sq());
            prop_assert!(q <= m.s_alpha_2 * d.norm_sq() * (1.0 + 1e-12));
        }
    }

    /// Single atoms are the equality case of the Cauchy-Schwarz moments.
    #[test]
    fn single_atom_equalities(loc in vec3(), w in 0.1..3.0f64, x in vec3(), alpha in -1.5..0.9f64) {
        let measure = AtomicMeasure::from_pairs(&[(w, loc)]).unwrap();
        let x = Vector(x);
        prop_assume!(measure.min_distance_to(&x) > 0.2);
        let source = SourceMeasure::Atomic(measure);
        let m = compute_moments(&source, &x, alpha).unwrap();
        let rel = (m.s_alpha_1 * m.s_alpha_1 - m.s_alpha * m.s_alpha_2).abs()
            / (m.s_alpha * m.s_alpha_2);
        prop_assert!(rel <= 1e-14, "CS equality defect {rel}");
        let relv = (m.v.norm() - m.s_alpha_1).abs() / m.s_alpha_1;
        prop_assert!(relv <= 1e-14, "|V| equality defect {relv}");
    }

    /// The factored split and the regrouping both reproduce I.
    #[test]
    fn split_and_regroup_identities(
        pairs in atoms(6),
        x in vec3(),
        params in in_regime_params(),
    ) {
        // fit the measure dimension to the sampled parameter dimension
        let n = params.n();
        let pairs: Vec<(f64, Vec<f64>)> = pairs
            .into_iter()
            .map(|(w, mut loc)| {
                loc.resize(n, 0.1);
                (w, loc)
            })
            .collect();
        let mut xv = x;
        xv.resize(n, -0.2);
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(xv);
        prop_assume!(measure.min_distance_to(&x) > 0.2);
        let source = SourceMeasure::Atomic(measure);

        let m = compute_moments(&source, &x, params.alpha()).unwrap();
        let bundle = bundle_from_moments(&m);
        let i = i_core(&bundle, &params).unwrap();
        let t = terms_factored(&m, &params).unwrap();
        let g = grouped_terms(&m, &params).unwrap();
        let scale = i.abs().max(1.0);
        prop_assert!((i - t.sum()).abs() <= 1e-10 * scale, "split defect");
        prop_assert!((i - g.sum()).abs() <= 1e-10 * scale, "regroup defect");

        // coefficient additivity of the lambda split
        let (c11, lam) = split_lambda(&params).unwrap();
        let d = params.derived().unwrap();
        let direct = params.alpha() + 4.0 - params.n() as f64 - d.p;
        prop_assert!((c11 + lam - direct).abs() <= 1e-13 * direct.abs().max(1.0));
        let simplified = params.alpha() * (d.p - 1.0) + (d.p - params.n() as f64);
        prop_assert!((c11 - simplified).abs() <= 1e-12 * simplified.abs().max(1.0));
    }

    /// Cauchy-Schwarz facts behind the group signs, and the group signs
    /// themselves, pointwise over random in-regime parameters.
    #[test]
    fn group_sign_lemma(
        pairs in atoms(5),
        x in vec3(),
        params in in_regime_params(),
    ) {
        let n = params.n();
        let pairs: Vec<(f64, Vec<f64>)> = pairs
            .into_iter()
            .map(|(w, mut loc)| {
                loc.resize(n, -0.3);
                (w, loc)
            })
            .collect();
        let mut xv = x;
        xv.resize(n, 0.4);
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(xv);
        prop_assume!(measure.min_distance_to(&x) > 0.2);
        let source = SourceMeasure::Atomic(measure);
        let m = compute_moments(&source, &x, params.alpha()).unwrap();

        // the two nonnegative brackets
        let wedge_bracket = m.s_alpha_2 * m.v.norm_sq() - m.vmv();
        let polar_bracket = m.s_alpha * m.s_alpha_2 - m.v.norm_sq();
        let s = m.s_alpha * m.s_alpha_2;
        prop_assert!(wedge_bracket >= -1e-12 * m.s_alpha_2 * m.v.norm_sq());
        prop_assert!(polar_bracket >= -1e-12 * s);

        let g = grouped_terms(&m, &params).unwrap();
        let tol = 1e-12 * (g.i11_plus_i3.abs() + g.i12_plus_i2.abs()).max(1e-300);
        if params.alpha() > 0.0 {
            prop_assert!(g.i11_plus_i3 <= tol, "case1 group 1 sign");
            prop_assert!(g.i12_plus_i2 <= tol, "case1 group 2 sign");
        } else {
            prop_assert!(g.i11_plus_i3 >= -tol, "case2 group 1 sign");
            prop_assert!(g.i12_plus_i2 >= -tol, "case2 group 2 sign");
        }
    }

    /// Weight scaling multiplies I by c^4 (exactly for dyadic c), and a joint
    /// translation of atoms and point leaves I unchanged to rounding.
    #[test]
    fn i_core_covariance(
        pairs in atoms(4),
        x in vec3(),
        shift in prop::collection::vec(-5.0..5.0f64, 3),
        c in 0.1..4.0f64,
    ) {
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(x);
        prop_assume!(measure.min_distance_to(&x) > 0.2);
        let params = Params::finite(3, 3.0, 2.0, 0.4).unwrap();
        let source = source3(&pairs);
        let b = moment_bundle(&source, &x, 0.4).unwrap();
        let i = i_core(&b, &params).unwrap();

        // dyadic scaling is exact
        let scaled: Vec<(f64, Vec<f64>)> =
            pairs.iter().map(|(w, l)| (w * 2.0, l.clone())).collect();
        let bs = moment_bundle(&source3(&scaled), &x, 0.4).unwrap();
        let is = i_core(&bs, &params).unwrap();
        prop_assert_eq!(is, 16.0 * i, "dyadic weight scaling must be exact");

        // generic scaling to rounding
        let scaled: Vec<(f64, Vec<f64>)> =
            pairs.iter().map(|(w, l)| (w * c, l.clone())).collect();
        let bc = moment_bundle(&source3(&scaled), &x, 0.4).unwrap();
        let ic = i_core(&bc, &params).unwrap();
        let c4 = c * c * c * c;
        prop_assert!((ic - c4 * i).abs() <= 1e-12 * (c4 * i).abs().max(1e-300));

        // translation covariance
        let moved: Vec<(f64, Vec<f64>)> = pairs
            .iter()
            .map(|(w, l)| (*w, l.iter().zip(&shift).map(|(a, s)| a + s).collect()))
            .collect();
        let xm = Vector(x.0.iter().zip(&shift).map(|(a, s)| a + s).collect());
        let bm = moment_bundle(&source3(&moved), &xm, 0.4).unwrap();
        let im = i_core(&bm, &params).unwrap();
        prop_assert!(
            (im - i).abs() <= 1e-10 * i.abs().max(1e-12),
            "translation changed I: {} vs {}", im, i
        );
    }

    /// Brute-force tensor sums equal the factored terms.
    #[test]
    fn bruteforce_matches_factored(
        pairs in atoms(5),
        x in vec3(),
        params in in_regime_params(),
    ) {
        let n = params.n();
        let pairs: Vec<(f64, Vec<f64>)> = pairs
            .into_iter()
            .map(|(w, mut loc)| {
                loc.resize(n, 0.2);
                (w, loc)
            })
            .collect();
        let mut xv = x;
        xv.resize(n, -0.5);
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(xv);
        prop_assume!(measure.min_distance_to(&x) > 0.2);
        let m = compute_moments(&SourceMeasure::Atomic(measure.clone()), &x, params.alpha())
            .unwrap();
        let t = terms_factored(&m, &params).unwrap();
        let bf = terms_bruteforce(&measure, &x, &params).unwrap();
        let scale = t.i1.abs().max(t.i2.abs()).max(t.i3.abs()).max(1e-300);
        prop_assert!((t.i1 - bf.i1).abs() <= 1e-10 * scale);
        prop_assert!((t.i2 - bf.i2).abs() <= 1e-10 * scale);
        prop_assert!((t.i3 - bf.i3).abs() <= 1e-10 * scale);
    }

    /// The power relation Delta_p(u^m) = m^{p-1} L_{p,q} u.
    #[test]
    fn power_relation(
        pairs in atoms(5),
        x in vec3(),
        params in in_regime_params(),
    ) {
        let n = params.n();
        let pairs: Vec<(f64, Vec<f64>)> = pairs
            .into_iter()
            .map(|(w, mut loc)| {
                loc.resize(n, 0.0);
                (w, loc)
            })
            .collect();
        let mut xv = x;
        xv.resize(n, 1.0);
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let x = Vector(xv);
        prop_assume!(measure.min_distance_to(&x) > 0.25);
        let source = SourceMeasure::Atomic(measure);
        let b = moment_bundle(&source, &x, params.alpha()).unwrap();
        prop_assume!(b.grad_norm_sq() > 1e-12);
        let d = params.derived().unwrap();
        let lhs = p_laplacian_of_power(&b, &params).unwrap();
        let rhs = d.m.powf(d.p - 1.0) * l_pq(&b, &params).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        prop_assert!(rel <= 1e-9, "relation residual {rel}");
    }
}

/// Moment agreement between the factored path and central differences.
#[test]
fn fd_vs_moment_agreement() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..40 {
        let count = rng.random_range(1..=5);
        let pairs: Vec<(f64, Vec<f64>)> = (0..count)
            .map(|_| {
                (
                    rng.random_range(0.1..2.0),
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let measure = AtomicMeasure::from_pairs(&pairs).unwrap();
        let source = SourceMeasure::Atomic(measure.clone());
        let alpha = rng.random_range(-1.5..0.9);
        let x = loop {
            let x = Vector((0..3).map(|_| rng.random_range(-2.5..2.5)).collect());
            if measure.min_distance_to(&x) >= 0.5 {
                break x;
            }
        };
        let mb = moment_bundle(&source, &x, alpha).unwrap();
        let fd = fd_oracle(&source, &x, alpha, None).unwrap();

        let grad_rel = fd.bundle.grad.sub(&mb.grad).norm() / mb.grad.norm().max(1e-12);
        assert!(grad_rel <= 1e-6, "gradient defect {grad_rel}");

        let mut hess_num = 0.0;
        let mut hess_den = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                hess_num += (fd.bundle.hess.get(i, j) - mb.hess.get(i, j)).powi(2);
                hess_den += mb.hess.get(i, j).powi(2);
            }
        }
        let hess_rel = (hess_num / hess_den.max(1e-300)).sqrt();
        assert!(hess_rel <= 1e-4, "hessian defect {hess_rel}");

        let inf_rel =
            (fd.bundle.inf_lap - mb.inf_lap).abs() / mb.inf_lap.abs().max(1e-9);
        assert!(inf_rel <= 1e-4, "lapinf defect {inf_rel}");
    }
}

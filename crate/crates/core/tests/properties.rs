use std::sync::OnceLock;

use dyadic_tents::bergman::{hybrid_quadrature, QuadratureScheme};
use dyadic_tents::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, BoundarySample, GridFamily, GridParams};
use dyadic_tents::extremal::tau;
use dyadic_tents::flow::{flow, flow_project, FlowIntegrator};
use dyadic_tents::geometry::FlowTable;
use dyadic_tents::numeric::{dist, stream_rng};
use dyadic_tents::sparse::{ap_constant, TentBasis, WeightModel};
use dyadic_tents::tents::normal_lift;
use dyadic_tents::DomainSpec;
use proptest::prelude::*;
use rand::Rng;

struct Fixture {
    d: DomainSpec,
    s: BoundarySample,
    fam: GridFamily,
    q: QuadratureScheme,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = with_voronoi_weights(&d, &sample_boundary(&d, 600, 1).unwrap(), 5, 2).unwrap();
        let fam = build_adjacent_family(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.06).waived(), &[0, 1]).unwrap();
        let g = &fam.grids[0];
        let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
        let table = FlowTable::build(&d, &s, &sides, 12, 2).unwrap();
        let q = hybrid_quadrature(&d, &s, &table, &s, 20_000, 3).unwrap();
        Fixture { d, s, fam, q }
    })
}

fn domains() -> impl Strategy<Value = DomainSpec> {
    prop_oneof![Just(DomainSpec::ball(2).unwrap()), Just(DomainSpec::ellipsoid(&[1, 2]).unwrap())].prop_map(|d| d.with_nbhd_width(0.3).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_lowers_r_by_exactly_t(d in domains(), seed in 0u64..1000, t in 0.001f64..0.14) {
        let w = d.sample_boundary_point(&mut stream_rng(seed, 0)).unwrap();
        let p = flow(&d, &w, t, &FlowIntegrator::for_domain(&d)).unwrap();
        prop_assert!((d.value(&p) + t).abs() < 1e-8);
        prop_assert!(dist(&flow_project(&d, &p).unwrap(), &w) < 1e-6);
    }

    #[test]
    fn tau_is_increasing_in_eps(d in domains(), seed in 0u64..1000, e in 0.0005f64..0.07) {
        let xi = d.sample_boundary_point(&mut stream_rng(seed, 1)).unwrap();
        let u = dyadic_tents::extremal::scale_free_basis(&d, &xi);
        for v in &u {
            let a = tau(&d, &xi, v, e).unwrap();
            let b = tau(&d, &xi, v, 2.0 * e).unwrap();
            prop_assert!(a > 0.0 && b > a);
        }
    }

    #[test]
    fn ap_constant_at_least_one_with_exact_duality(alpha in -0.9f64..0.9, p in prop_oneof![Just(4.0 / 3.0), Just(2.0), Just(3.0), Just(4.0)]) {
        let f = fixture();
        let basis = TentBasis::new(&f.d, &f.s, &f.fam, &f.q);
        let w = WeightModel::Power { alpha };
        prop_assume!(w.ap_finite(p));
        let r = ap_constant(&basis, w, p).unwrap();
        prop_assert!(r.constant >= 1.0 - 1e-12);
        prop_assert!(r.duality_error < 1e-10);
    }

    #[test]
    fn sparse_operator_is_monotone(seed in 0u64..1000, depth in 0.002f64..0.1) {
        let f = fixture();
        let basis = TentBasis::new(&f.d, &f.s, &f.fam, &f.q);
        let mut rng = stream_rng(seed, 2);
        let g: Vec<f64> = (0..f.q.len()).map(|_| rng.random::<f64>()).collect();
        let h: Vec<f64> = g.iter().map(|x| x + rng.random::<f64>()).collect();
        let z = normal_lift(&f.d, &f.d.sample_boundary_point(&mut rng).unwrap(), depth);
        let (a, b) = (basis.sparse_apply(&g, &z).unwrap().value, basis.sparse_apply(&h, &z).unwrap().value);
        prop_assert!(a > 0.0 && b >= a);
        prop_assert!(basis.maximal(&h, &z, None).unwrap() >= basis.maximal(&g, &z, None).unwrap());
    }

    #[test]
    fn alpha_ladders_parse(a in -0.9f64..0.0, n in 1usize..8) {
        let step = (-a) / n as f64;
        let text = format!("{a}:{}:{step}", -a);
        let v = dyadic_tents::cli::parse_ladder(&text).unwrap();
        prop_assert!(v.len() == 2 * n + 1 || v.len() == 2 * n);
        prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
    }
}

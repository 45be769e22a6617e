mod common;

use cachefair_core::bucket::bucket_fill_traced;
use cachefair_core::crp::{augmented_lagrangian, build_instance, feasibility_residual, objective, UtilityDefaults};
use cachefair_core::netgen::generate_single_tier;
use cachefair_core::{
    bucket_fill, closest_available, extract_regions, fair, mean_coverage, solve_crp, unsplittable, Catalog, DualVector,
    FillEvent, RoutingVector, SolverConfig, Window,
};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bucket_fill_stays_in_the_box_and_meets_kkt(seed in any::<u64>(), rho in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let mut r = rng(seed);
        let u = random_utility(&mut r);
        let buckets = random_buckets(&mut r, 12);
        let y = bucket_fill(&buckets, &u, rho).unwrap().allocation;
        for (b, &x) in buckets.iter().zip(&y) {
            prop_assert!((0.0..=b.capacity).contains(&x));
        }
        prop_assert!(subproblem_kkt_violation(&buckets, &u, rho, &y, 1e-8) <= 1e-8);
    }

    #[test]
    fn buckets_activate_in_nonincreasing_coefficient_order(seed in any::<u64>(), rho in 0.2..3.0f64) {
        let mut r = rng(seed);
        let u = random_utility(&mut r);
        let buckets = random_buckets(&mut r, 12);
        let (_, events) = bucket_fill_traced(&buckets, &u, rho).unwrap();
        let coefficient = |q: usize| buckets.iter().find(|b| b.region_file == q).unwrap().coefficient;
        let order: Vec<f64> = events
            .iter()
            .filter_map(|e| match *e { FillEvent::Activate { region_file, .. } => Some(coefficient(region_file)), _ => None })
            .collect();
        if let Some(&first) = order.first() {
            let top = buckets.iter().filter(|b| b.capacity > 0.0).map(|b| b.coefficient).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(first, top);
        }
        prop_assert!(order.windows(2).all(|w| w[0] >= w[1]), "{:?}", order);
    }

    #[test]
    fn lagrangian_equals_objective_on_feasible_points(seed in any::<u64>(), rho in 0.01..10.0f64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 5, 12, false);
        let y = RoutingVector::even_split(&inst);
        let prices: Vec<f64> = (0..inst.region_file_count()).map(|_| r.random_range(-5.0..5.0)).collect();
        let prices = DualVector::from_values(&inst, prices).unwrap();
        let (al, obj) = (augmented_lagrangian(&inst, &y, &prices, rho), objective(&inst, &y));
        prop_assert!((al - obj).abs() <= 1e-12 * (1.0 + obj.abs()), "{} vs {}", al, obj);
    }

    /// Midpoint test along random directions: f(y+d) + f(y-d) < 2 f(y).
    #[test]
    fn lagrangian_is_strictly_concave(seed in any::<u64>(), rho in 0.1..5.0f64) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 5, 12, false);
        let prices = DualVector::zeros(&inst);
        let base: Vec<f64> = (0..inst.arc_count()).map(|a| inst.demand(inst.arc_region_file(a)) * r.random_range(0.3..0.7)).collect();
        let at = |x: Vec<f64>| augmented_lagrangian(&inst, &RoutingVector::from_arc_values(&inst, x).unwrap(), &prices, rho);
        let centre = at(base.clone());
        for _ in 0..100 {
            let d: Vec<f64> = base.iter().map(|&x| x * r.random_range(-0.2..0.2)).collect();
            let plus = base.iter().zip(&d).map(|(x, e)| x + e).collect();
            let minus = base.iter().zip(&d).map(|(x, e)| x - e).collect();
            prop_assert!(at(plus) + at(minus) - 2.0 * centre < 0.0);
        }
    }

    #[test]
    fn objective_is_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 5, 12, false);
        let y: Vec<f64> = (0..inst.arc_count()).map(|_| r.random_range(0.0..3.0)).collect();
        let up: Vec<f64> = y.iter().map(|&x| x + r.random_range(0.0..1.0)).collect();
        let f = |x: Vec<f64>| objective(&inst, &RoutingVector::from_arc_values(&inst, x).unwrap());
        prop_assert!(f(up) >= f(y));
    }

    #[test]
    fn mean_coverage_increases_in_radius_and_density(density in 0.1..100.0f64, radius in 0.001..1.0f64, bump in 1.001..2.0f64) {
        let c = mean_coverage(density, radius);
        prop_assert!(c >= 1.0);
        prop_assert!(mean_coverage(density, radius * bump) > c);
        prop_assert!(mean_coverage(density * bump, radius) > c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn region_areas_add_up_to_the_covered_cells(seed in any::<u64>(), radius in 0.05..0.4f64) {
        let mut r = rng(seed);
        let window = Window::square(1.0).unwrap();
        let net = generate_single_tier(&mut r, window, 15.0, radius, Catalog::zipf(6, 1.0).unwrap(), 2).unwrap();
        let regions = extract_regions(&net.stations, window, 100.0).unwrap();
        let cells: u64 = regions.iter().map(|(_, region)| region.cells).sum();
        prop_assert_eq!(cells, regions.covered_cells());
        let area: f64 = regions.iter().map(|(_, region)| region.area).sum();
        prop_assert!((area - cells as f64 * regions.cell_area()).abs() <= 1e-12 * area.max(1.0));
        prop_assert!(area <= window.area() + 1e-9);
        prop_assert!(regions.iter().all(|(key, region)| !key.is_empty() && region.cells > 0));
        prop_assert_eq!(extract_regions(&net.stations, window, 100.0).unwrap(), regions);
    }

    #[test]
    fn solver_reports_hold_their_invariants(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 5, 12, false);
        let cfg = SolverConfig::default();
        let report = solve_crp(&inst, &cfg).unwrap();
        prop_assert_eq!(&solve_crp(&inst, &cfg).unwrap(), &report);
        for a in 0..inst.arc_count() {
            let x = report.routing.as_slice()[a];
            prop_assert!((0.0..=inst.demand(inst.arc_region_file(a))).contains(&x));
        }
        prop_assert!(report.converged);
        let residual = feasibility_residual(&inst, &report.routing);
        prop_assert!(residual <= 10.0 * cfg.eps_outer / report.rho, "{} with rho {}", residual, report.rho);
        let obj = objective(&inst, &report.routing);
        let al = augmented_lagrangian(&inst, &report.routing, &report.duals, report.rho);
        prop_assert!((obj - al).abs() <= 1e-6 * (1.0 + obj.abs()));
    }

    #[test]
    fn policies_route_the_same_total(seed in any::<u64>(), radius in 0.1..0.35f64) {
        let mut r = rng(seed);
        let window = Window::square(0.8).unwrap();
        let net = generate_single_tier(&mut r, window, 20.0, radius, Catalog::zipf(6, 1.0).unwrap(), 2).unwrap();
        let regions = extract_regions(&net.stations, window, 100.0).unwrap();
        let inst = build_instance(&net, &regions, 100.0, UtilityDefaults::default()).unwrap();
        prop_assume!(!inst.is_empty());
        let total = |y: &RoutingVector| y.as_slice().iter().sum::<f64>();
        let f = fair(&inst, &SolverConfig::default()).unwrap().routing;
        let c = closest_available(&inst, &net, &regions).unwrap();
        let u = unsplittable(&inst, seed);
        prop_assert!((total(&f) - total(&c)).abs() <= 1e-9);
        prop_assert!((total(&u) - total(&c)).abs() <= 1e-9);
        prop_assert!(feasibility_residual(&inst, &f) <= 1e-6);
        prop_assert_eq!(feasibility_residual(&inst, &c), 0.0);
        prop_assert_eq!(feasibility_residual(&inst, &u), 0.0);
        prop_assert_eq!(&closest_available(&inst, &net, &regions).unwrap(), &c);
        prop_assert_eq!(&unsplittable(&inst, seed), &u);
    }
}

use nalgebra::Matrix6;
use proptest::prelude::*;

use subsim::analysis::summarize;
use subsim::conflict::{pc_dmc, pc_ss, ConflictKernel, ConflictQuery, ConflictSystem, PreparedQuery};
use subsim::dynamics::{min_distance, planar_distance, propagate, AircraftState};
use subsim::rng::SeedStream;
use subsim::scenarios::{build_head_on, knots, Overrides, PROTECTED_RADIUS};
use subsim::subset::{
    assemble_ccdf, draw_prior_samples, intermediate_threshold, probability_intervals, run_subset_simulation,
    select_seeds, IntervalVariant, LevelBlock, RareEventSystem, SubsetConfig,
};
use subsim::toy::{distance_to_center, dmc_estimate, mh_chains, ss_toy, CircleRegion, Point2, ToySystem, ToyTarget};
use subsim::tracking::{kf_step, process_noise, InitialCovariance, KalmanEstimate, Measurement, NoiseConfig};

fn level_config() -> impl Strategy<Value = SubsetConfig> {
    (prop::sample::select(vec![0.5, 0.25, 0.2, 0.1]), 1usize..6, 1usize..8).prop_map(|(p0, multiple, levels)| {
        let chain_length = (1.0 / p0) as usize;
        SubsetConfig::new(chain_length * multiple, p0, levels, IntervalVariant::Shifted).unwrap()
    })
}

fn reference_system() -> ToySystem {
    ToySystem {
        region: CircleRegion::reference(),
        target: ToyTarget::ConditionalPrior,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ccdf_row_count(config in level_config(), seed in any::<u64>()) {
        let run = run_subset_simulation(&reference_system(), &config, -1.0, &SeedStream::new(seed)).unwrap();
        let n = config.n_samples;
        let levels = run.diagnostics.levels_completed;
        prop_assert_eq!(levels, config.max_levels);
        prop_assert_eq!(run.table.len(), n + (levels - 1) * (n - config.chains()));
        prop_assert!(run.table.rows.windows(2).all(|w| w[0].probability >= w[1].probability));
        prop_assert_eq!(run.diagnostics.samples_used, n * levels);
    }

    #[test]
    fn shifted_intervals_bounded_and_decreasing(config in level_config()) {
        for level in 0..config.max_levels {
            let p = probability_intervals(level, &config).unwrap();
            let top = config.level_probability.powi(level as i32);
            let floor = top / config.n_samples as f64;
            prop_assert!(p.iter().all(|&v| v >= floor * (1.0 - 1e-12) && v <= top * (1.0 + 1e-12)));
            prop_assert!(p.windows(2).all(|w| w[0] > w[1]));
        }
    }

    /// Threshold and seeds against an independent sort and nearest-N_c scan
    /// of the same level-0 draws.
    #[test]
    fn threshold_and_seeds_match_brute_force(seed in any::<u64>()) {
        let config = SubsetConfig::new(100, 0.1, 2, IntervalVariant::Shifted).unwrap();
        let system = reference_system();
        let stream = SeedStream::new(seed);
        let points = draw_prior_samples(&system, 100, &stream).unwrap();

        let mut distances: Vec<f64> = points.iter().map(|p| distance_to_center(p, &system.region)).collect();
        // Insertion sort, descending.
        for i in 1..distances.len() {
            let mut j = i;
            while j > 0 && distances[j - 1] < distances[j] {
                distances.swap(j - 1, j);
                j -= 1;
            }
        }
        let mut remaining: Vec<usize> = (0..points.len()).collect();
        let mut nearest = Vec::new();
        for _ in 0..10 {
            let (pos, _) = remaining
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = distance_to_center(&points[*a.1], &system.region);
                    let db = distance_to_center(&points[*b.1], &system.region);
                    da.total_cmp(&db)
                })
                .unwrap();
            nearest.push(points[remaining.remove(pos)]);
        }

        let entries = points.iter().map(|p| (*p, distance_to_center(p, &system.region))).collect();
        let block = LevelBlock::from_unsorted(0, entries, &config).unwrap();
        prop_assert_eq!(&block.responses, &distances);
        prop_assert_eq!(intermediate_threshold(&block.responses, &config).unwrap(), distances[89]);
        let mut seeds = select_seeds(&block.samples, &config).unwrap().to_vec();
        let key = |p: &Point2| (distance_to_center(p, &system.region), p.x, p.y);
        seeds.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        nearest.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        prop_assert_eq!(seeds, nearest);

        let run = run_subset_simulation(&system, &config, -1.0, &stream).unwrap();
        prop_assert_eq!(run.diagnostics.thresholds[0], distances[89]);
        let head: Vec<f64> = run.table.rows[..90].iter().map(|r| r.response).collect();
        prop_assert_eq!(&head[..], &distances[..90]);
    }

    #[test]
    fn assembly_keeps_head_rows(config in level_config(), seed in any::<u64>()) {
        let system = reference_system();
        let stream = SeedStream::new(seed);
        let blocks: Vec<LevelBlock<Point2>> = (0..config.max_levels)
            .map(|level| {
                let pts = draw_prior_samples(&system, config.n_samples, &stream.child(level as u64)).unwrap();
                let entries = pts.iter().map(|p| (*p, system.response(p))).collect();
                LevelBlock::from_unsorted(level, entries, &config).unwrap()
            })
            .collect();
        let table = assemble_ccdf(&blocks, &config).unwrap();
        let keep = config.n_samples - config.chains();
        let mut row = 0;
        for (i, block) in blocks.iter().enumerate() {
            let take = if i + 1 == blocks.len() { config.n_samples } else { keep };
            for k in 0..take {
                prop_assert_eq!(table.rows[row].response, block.responses[k]);
                prop_assert_eq!(table.rows[row].probability, block.intervals[k]);
                row += 1;
            }
        }
    }

    #[test]
    fn toy_chains_respect_threshold(seed in any::<u64>(), threshold in 0.5f64..4.0) {
        let region = CircleRegion::reference();
        let start = Point2::new(3.0 + 0.3 * threshold, -3.0);
        for target in [ToyTarget::ConditionalPrior, ToyTarget::RegionCentered] {
            let chains = mh_chains(&[start; 5], 20, &region, threshold, target, &SeedStream::new(seed)).unwrap();
            prop_assert!(chains.iter().flatten().all(|(_, d)| *d <= threshold));
        }
    }

    #[test]
    fn distance_is_a_metric(ax in -10.0f64..10.0, ay in -10.0f64..10.0, bx in -10.0f64..10.0, by in -10.0f64..10.0, cx in -10.0f64..10.0, cy in -10.0f64..10.0) {
        let a = Point2::new(ax, ay);
        let region_b = CircleRegion::new(Point2::new(bx, by), 1.0).unwrap();
        let region_a = CircleRegion::new(a, 1.0).unwrap();
        let b = Point2::new(bx, by);
        let c = Point2::new(cx, cy);
        let d_ab = distance_to_center(&a, &region_b);
        prop_assert!(d_ab >= 0.0);
        prop_assert_eq!(d_ab, distance_to_center(&b, &region_a));
        prop_assert!(d_ab <= a.distance(&c) + c.distance(&b) + 1e-12);
    }

    #[test]
    fn dmc_is_a_fraction(seed in any::<u64>(), radius in 0.1f64..6.0, n in 1usize..300) {
        let region = CircleRegion::new(Point2::new(1.0, -1.0), radius).unwrap();
        let p = dmc_estimate(&region, n, &SeedStream::new(seed)).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!((p * n as f64).round() / n as f64, p);
    }

    #[test]
    fn toy_runs_are_deterministic(seed in any::<u64>()) {
        let config = SubsetConfig::conflict_default();
        let region = CircleRegion::reference();
        let a = ss_toy(&region, &config, ToyTarget::default(), &SeedStream::new(seed)).unwrap();
        let b = ss_toy(&region, &config, ToyTarget::default(), &SeedStream::new(seed)).unwrap();
        prop_assert_eq!(a.table, b.table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn process_noise_is_psd(dt in 1e-3f64..5.0, sx in 0.0f64..10.0, sy in 0.0f64..10.0) {
        let noise = NoiseConfig { sigma_ax2: sx, sigma_ay2: sy, ..Default::default() };
        let q = process_noise(dt, &noise).unwrap();
        prop_assert_eq!(q, q.transpose());
        let eig = q.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-12 * eig.amax().max(1.0));
    }

    #[test]
    fn propagation_keeps_acceleration(ax in -3.0f64..3.0, ay in -3.0f64..3.0, u in -200.0f64..200.0) {
        let s = AircraftState::new(0.0, u, ax, 10.0, -u, ay);
        let j = propagate(&s, 20.0, 5.0).unwrap();
        prop_assert!(j.states.iter().all(|t| t.a_x == ax && t.a_y == ay));
    }

    #[test]
    fn closest_approach_properties(dx in -3000.0f64..3000.0, dy in -3000.0f64..3000.0, u in -150.0f64..150.0, v in -150.0f64..150.0) {
        let o0 = AircraftState::moving(0.0, 0.0, 77.17, 0.0);
        let i0 = AircraftState::new(dx, u, 0.0, dy, v, 0.0);
        let o = propagate(&o0, 20.0, 20.0).unwrap();
        let i = propagate(&i0, 20.0, 20.0).unwrap();
        let a = min_distance(&o, &i).unwrap();
        let b = min_distance(&i, &o).unwrap();
        prop_assert_eq!(a.miss_distance, b.miss_distance);
        prop_assert_eq!(a.observer_point, b.intruder_point);
        prop_assert!(a.miss_distance <= planar_distance(&o0.position(), &i0.position()));

        // Halving the time step moves the grid minimum by at most one step of relative motion.
        let o_fine = propagate(&o0, 40.0, 20.0).unwrap();
        let i_fine = propagate(&i0, 40.0, 20.0).unwrap();
        let fine = min_distance(&o_fine, &i_fine).unwrap();
        let rel_speed = ((u - 77.17).powi(2) + v * v).sqrt();
        prop_assert!((a.miss_distance - fine.miss_distance).abs() <= rel_speed * 0.05 + 1e-9);
    }

    #[test]
    fn covariance_stays_symmetric_psd(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = SeedStream::new(seed).rng();
        let noise = NoiseConfig::default();
        let mut est = KalmanEstimate::new(AircraftState::moving(2000.0, 1000.0, 77.17, 180.0), InitialCovariance::default().matrix());
        for _ in 0..1000 {
            let m = rng.random_bool(0.1).then(|| Measurement { z: [est.mean.x + rng.random::<f64>(), est.mean.y] });
            let before = est.covariance;
            est = kf_step(&est, m.as_ref(), 0.05, &noise).unwrap();
            prop_assert_eq!(est.covariance, est.covariance.transpose());
            prop_assert!((0..6).all(|k| est.covariance[(k, k)] >= 0.0));
            if m.is_some() {
                let predicted = kf_step(&KalmanEstimate::new(est.mean, before), None, 0.05, &noise).unwrap();
                prop_assert!(est.covariance[(0, 0)] <= predicted.covariance[(0, 0)]);
                prop_assert!(est.covariance[(3, 3)] <= predicted.covariance[(3, 3)]);
            }
        }
        prop_assert!(est.covariance.symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn cov_is_scale_invariant(values in prop::collection::vec(0.001f64..1.0, 2..30), scale in 1e-6f64..1e6) {
        let (_, _, a) = summarize(&values);
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let (_, _, b) = summarize(&scaled);
        prop_assert!((a.unwrap() - b.unwrap()).abs() <= 1e-9 * a.unwrap().max(1.0));
    }
}

fn borderline_query(radius: f64) -> PreparedQuery {
    let mut cov = Matrix6::from_diagonal(&nalgebra::Vector6::new(25.0, 4.0, 0.3, 25.0, 4.0, 0.3));
    cov[(0, 1)] = 2.0;
    cov[(1, 0)] = 2.0;
    PreparedQuery::new(ConflictQuery {
        observer: AircraftState::moving(0.0, 0.0, knots(150.0), 0.0),
        intruder_estimate: KalmanEstimate::new(AircraftState::moving(2000.0, 200.0, knots(150.0), 180.0), cov),
        protected_radius: radius,
        horizon: 20.0,
        sample_rate: 20.0,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conflict_runs_are_deterministic_and_consistent(seed in any::<u64>()) {
        let prepared = borderline_query(PROTECTED_RADIUS);
        let config = SubsetConfig::conflict_default();
        let stream = SeedStream::new(seed);
        let (a, table_a) = pc_ss(&prepared, &config, ConflictKernel::default(), &stream).unwrap();
        let (b, table_b) = pc_ss(&prepared, &config, ConflictKernel::default(), &stream).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(&table_a, &table_b);
        prop_assert_eq!(a.samples_used, 100 * a.levels_used);
        for row in &table_a.rows {
            let traj = row.sample.trajectory(&prepared).unwrap();
            let again = min_distance(&prepared.observer_track, &traj).unwrap();
            prop_assert_eq!(again.miss_distance, row.response);
        }
        if a.levels_used == 1 {
            let level0 = table_a.rows.iter().filter(|r| r.response <= PROTECTED_RADIUS).count();
            prop_assert_eq!(a.conflict_count, level0);
            if level0 > 0 {
                prop_assert_eq!(a.pc, level0 as f64 / 100.0);
                prop_assert_eq!(a.pc, pc_dmc(&prepared, 100, &stream).unwrap().pc);
            }
        }
    }

    #[test]
    fn shrinking_radius_never_adds_conflicts(seed in any::<u64>()) {
        let full = pc_dmc(&borderline_query(PROTECTED_RADIUS), 500, &SeedStream::new(seed)).unwrap();
        let half = pc_dmc(&borderline_query(PROTECTED_RADIUS / 2.0), 500, &SeedStream::new(seed)).unwrap();
        prop_assert!(half.conflict_count <= full.conflict_count);
    }

    #[test]
    fn conflict_chains_respect_threshold(seed in any::<u64>()) {
        let prepared = borderline_query(PROTECTED_RADIUS);
        let system = ConflictSystem { prepared: &prepared, kernel: ConflictKernel::default() };
        let mut rng = SeedStream::new(seed).rng();
        let samples: Vec<_> = (0..50).map(|_| system.sample_prior(&mut rng).unwrap()).collect();
        let seed_sample = samples.iter().min_by(|a, b| a.miss_distance().total_cmp(&b.miss_distance())).unwrap();
        let threshold = seed_sample.miss_distance() + 10.0;
        let chain = system.conditional_chain(seed_sample, threshold, 100, &mut rng).unwrap();
        prop_assert_eq!(chain.len(), 100);
        prop_assert!(chain.iter().all(|s| s.miss_distance() < threshold));
    }
}

#[test]
fn scenario_budgets_match() {
    let o = Overrides { duration: Some(2.0), ..Default::default() };
    let spec = build_head_on(PROTECTED_RADIUS, 2000.0, &o).unwrap();
    let records = subsim::conflict::simulate_scenario(
        &spec,
        &SubsetConfig::conflict_default(),
        ConflictKernel::default(),
        &SeedStream::new(17),
    )
    .unwrap();
    assert_eq!(records.len(), 40);
    for r in &records {
        let dmc = r.dmc.unwrap();
        assert_eq!(dmc.samples_used, r.ss.samples_used);
        if r.ss.levels_used == 1 && dmc.pc > 0.0 {
            assert_eq!(dmc.pc, r.ss.pc);
        }
    }
}

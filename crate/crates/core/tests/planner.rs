use ccplan::calibration::ThresholdPolicy;
use ccplan::chance_eval::{count_violations, CollisionGeometry};
use ccplan::mpc::{warm_start, MpcConfig};
use ccplan::planner::*;
use ccplan::trajectory::BoundaryConditions;
use ccplan::uncertainty::{preset, sample_particles, EnvironmentModel, GaussianObstacle};

fn gaussian_model() -> EnvironmentModel {
    EnvironmentModel::StaticGaussian {
        obstacles: vec![GaussianObstacle::isotropic([5.0, 5.0], 0.5, 1.0)],
        dt: 0.05,
    }
}

fn quick(eta: f64, seed: u64) -> PlannerConfig {
    PlannerConfig {
        eta,
        max_iter: 30,
        seed,
        ..PlannerConfig::default()
    }
}

#[test]
fn plan_respects_threshold_and_limits() {
    let particles = sample_particles(&gaussian_model(), 100, 1, 3).unwrap().into_static().unwrap();
    let bc = BoundaryConditions::rest_to_rest(vec![1.0, 1.0], vec![9.0, 9.0]).unwrap();
    for eta in [0.05, 0.2] {
        let cfg = quick(eta, 1);
        let res = plan(&cfg, &PlanRequest::new(bc.clone(), 0.25, &particles)).unwrap();
        assert!(!res.infeasible);
        assert!(res.k <= res.k_thresh);
        assert!(res.trajectory.satisfies(&cfg.limits));
        // Reported k is the count on the planning particles.
        let geom = CollisionGeometry::for_particles(0.25, &particles).unwrap();
        let again = count_violations(&res.trajectory, &particles, &geom, f64::INFINITY).unwrap();
        assert_eq!(again.k, res.k);
        assert_eq!(res.log.len(), cfg.max_iter);
        assert!(res.log.windows(2).all(|w| w[1].best_cost <= w[0].best_cost));
    }
}

#[test]
fn looser_eta_is_never_slower_on_the_same_particles() {
    let particles = sample_particles(&gaussian_model(), 100, 1, 8).unwrap().into_static().unwrap();
    let bc = BoundaryConditions::rest_to_rest(vec![1.0, 1.0], vec![9.0, 9.0]).unwrap();
    let hard = PlannerConfig {
        policy: ThresholdPolicy::Hard,
        ..quick(0.2, 2)
    };
    let t_hard = plan(&hard, &PlanRequest::new(bc.clone(), 0.25, &particles)).unwrap();
    let t_naive = plan(
        &PlannerConfig {
            policy: ThresholdPolicy::Naive,
            ..quick(0.2, 2)
        },
        &PlanRequest::new(bc.clone(), 0.25, &particles),
    )
    .unwrap();
    assert_eq!(t_hard.k, 0);
    assert!(t_naive.trajectory.duration() <= t_hard.trajectory.duration() + 0.05);
}

#[test]
fn plan_is_deterministic_across_thread_counts() {
    let env = preset("env0").unwrap();
    let particles = sample_particles(&env.model, 100, 101, 4).unwrap();
    let bc = BoundaryConditions::rest_to_rest(vec![1.0, 1.0], vec![9.0, 9.0]).unwrap();
    let cfg = quick(0.1, 9);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| plan(&cfg, &PlanRequest::new(bc.clone(), env.robot_radius, &particles)).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.record(), b.record());
    assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    assert_eq!(a.log, b.log);
}

#[test]
fn model_particles_resampling_is_seeded() {
    let model = gaussian_model();
    let bc = BoundaryConditions::rest_to_rest(vec![1.0, 1.0], vec![9.0, 9.0]).unwrap();
    let cfg = PlannerConfig {
        resample_each_iter: true,
        max_iter: 10,
        ..quick(0.1, 5)
    };
    let req = PlanRequest {
        particles: Particles::Model { model: &model, steps: 1 },
        ..PlanRequest::new(bc.clone(), 0.25, &sample_particles(&model, 1, 1, 0).unwrap())
    };
    let a = plan(&cfg, &req).unwrap();
    let b = plan(&cfg, &req).unwrap();
    assert_eq!(a.record(), b.record());
}

#[test]
fn warm_start_is_usually_no_worse_than_cold() {
    let env = preset("env0").unwrap();
    let mpc = MpcConfig::default();
    let bc0 = BoundaryConditions::rest_to_rest(mpc.start.clone(), mpc.goal.clone()).unwrap();
    let objective = Objective::GoalReaching {
        goal: mpc.goal.clone(),
        w_goal: mpc.w_goal,
    };
    let trials = 20;
    let mut wins = 0;
    for seed in 0..trials {
        let mut cfg = mpc.planner.clone();
        cfg.seed = seed;
        let p0 = sample_particles(&env.model, 100, 101, seed).unwrap();
        let first = plan(
            &cfg,
            &PlanRequest {
                objective: objective.clone(),
                ..PlanRequest::new(bc0.clone(), env.robot_radius, &p0)
            },
        )
        .unwrap();
        let (q, qd) = first.trajectory.state_at_time(mpc.delta);
        let qd: Vec<f64> = qd.iter().map(|v| v.clamp(-1.5, 1.5)).collect();
        let bc = BoundaryConditions::new(q, qd, mpc.goal.clone(), vec![0.0, 0.0]).unwrap();
        let p1 = sample_particles(&env.model, 100, 101, seed + 1000).unwrap();
        cfg.seed = seed + 1;
        let base = PlanRequest {
            objective: objective.clone(),
            ..PlanRequest::new(bc, env.robot_radius, &p1)
        };
        let cold = plan(&cfg, &base).unwrap();
        let warm = plan(
            &cfg,
            &PlanRequest {
                initial_mean: warm_start(&first.trajectory, mpc.delta, cfg.n_via),
                ..base.clone()
            },
        )
        .unwrap();
        wins += usize::from(warm.cost <= cold.cost);
    }
    assert!(wins * 10 >= trials as usize * 6, "warm start won {wins}/{trials}");
}

#[test]
fn rejects_bad_requests() {
    let particles = sample_particles(&gaussian_model(), 10, 1, 0).unwrap();
    let bc = BoundaryConditions::new(vec![0.0, 0.0], vec![5.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        plan(&PlannerConfig::default(), &PlanRequest::new(bc, 0.25, &particles)),
        Err(ccplan::Error::Infeasible(_))
    ));
    let bc = BoundaryConditions::rest_to_rest(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
    assert!(plan(&PlannerConfig::default(), &PlanRequest::new(bc, 0.25, &particles)).is_err());
    let cfg = PlannerConfig {
        population: 2,
        ..PlannerConfig::default()
    };
    let bc = BoundaryConditions::rest_to_rest(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    assert!(plan(&cfg, &PlanRequest::new(bc, 0.25, &particles)).is_err());
}

#[test]
fn cmaes_rank_order_breaks_ties_by_point() {
    let a = (vec![1.0, 2.0], 3.0);
    let b = (vec![2.0, 1.0], 3.0);
    let c = (vec![0.0, 0.0], 2.0);
    assert_eq!(rank_order(&c, &a), std::cmp::Ordering::Less);
    let ab = rank_order(&a, &b);
    assert_ne!(ab, std::cmp::Ordering::Equal);
    assert_eq!(rank_order(&b, &a), ab.reverse());
}

#[test]
fn cmaes_minimizes_rosenbrock() {
    use rand::SeedableRng;
    let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let mut es = CmaEs::new(vec![-1.0, 2.0], 0.5, 12).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for _ in 0..400 {
        let pop: Vec<(Vec<f64>, f64)> = (0..es.lambda())
            .map(|_| {
                let x = es.sample(&mut rng);
                let v = f(&x);
                (x, v)
            })
            .collect();
        es.update(&pop).unwrap();
    }
    assert!(f(es.mean()) < 1e-8, "{:?}", es.mean());
}

use mastery_sim::{erlang_c_wait, run_sim, run_sim_traced, CourseConfig, MmcConfig, SimConfig, SimError};

fn mmc(seed: u64, lambda: f64, mu: f64, c: u32, jobs: u64) -> SimConfig {
    SimConfig::Mmc(MmcConfig {
        seed,
        servers: c,
        arrival_rate: lambda,
        service_rate: mu,
        jobs: Some(jobs),
        horizon: None,
    })
}

#[test]
fn mmc_matches_erlang_c() {
    for &(l, m, c) in &[(1.0, 1.0, 2), (0.5, 1.0, 1), (5.0, 1.0, 7), (0.9, 0.25, 4)] {
        let r = run_sim(&mmc(11, l, m, c, 200_000)).unwrap();
        let oracle = erlang_c_wait(l, m, c).unwrap();
        let rel = (r.mean_wait - oracle).abs() / oracle;
        assert!(rel < 0.05, "({l},{m},{c}): sim {} oracle {oracle}", r.mean_wait);
    }
}

#[test]
fn same_seed_same_result_and_trace() {
    let cfg = mmc(5, 1.0, 1.0, 2, 5_000);
    let (mut t1, mut t2) = (Vec::new(), Vec::new());
    let a = run_sim_traced(&cfg, Some(&mut t1)).unwrap();
    let b = run_sim_traced(&cfg, Some(&mut t2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(t1, t2);
    assert_eq!(String::from_utf8(t1).unwrap().lines().count(), 10_000);
    assert_ne!(a, run_sim(&mmc(6, 1.0, 1.0, 2, 5_000)).unwrap());

    let course = SimConfig::Course(CourseConfig::default());
    assert_eq!(run_sim(&course).unwrap(), run_sim(&course).unwrap());
}

#[test]
fn conservation() {
    let horizon = SimConfig::Mmc(MmcConfig {
        seed: 3,
        servers: 2,
        arrival_rate: 1.8,
        service_rate: 1.0,
        jobs: None,
        horizon: Some(2_000.0),
    });
    let r = run_sim(&horizon).unwrap();
    assert!(r.in_system_at_horizon > 0 || r.jobs_completed == r.jobs_generated);
    assert_eq!(r.jobs_completed + r.in_system_at_horizon + r.rejected_at_session_end, r.jobs_generated);

    for servers in [1, 3, 7] {
        let r = run_sim(&SimConfig::Course(CourseConfig { servers, sessions: 3, ..CourseConfig::default() })).unwrap();
        assert_eq!(r.jobs_completed + r.in_system_at_horizon + r.rejected_at_session_end, r.jobs_generated);
        assert!((0.0..=1.0).contains(&r.utilization), "{}", r.utilization);
        assert!(r.per_server_busy.iter().all(|b| (0.0..=1.0).contains(b)));
    }
}

#[test]
fn littles_law() {
    let r = run_sim(&mmc(9, 1.5, 1.0, 2, 200_000)).unwrap();
    let predicted = r.throughput() * r.mean_wait;
    let rel = (r.mean_queue_length - predicted).abs() / predicted;
    assert!(rel < 0.05, "Lq {} vs lambda*Wq {predicted}", r.mean_queue_length);
}

#[test]
fn extra_examiner_does_not_increase_wait() {
    for seed in 1..=5 {
        let base = CourseConfig { seed, ..CourseConfig::default() };
        let seven = run_sim(&SimConfig::Course(CourseConfig { servers: 7, ..base.clone() })).unwrap();
        let eight = run_sim(&SimConfig::Course(CourseConfig { servers: 8, ..base })).unwrap();
        assert!(eight.mean_wait <= seven.mean_wait, "seed {seed}: {} > {}", eight.mean_wait, seven.mean_wait);
    }
}

#[test]
fn course_defaults_give_finite_positive_wait() {
    let r = run_sim(&SimConfig::Course(CourseConfig::default())).unwrap();
    assert!(r.mean_wait.is_finite() && r.mean_wait > 0.0);
    assert!(r.jobs_completed > 0);
}

#[test]
fn parses_config_files() {
    let cfg = SimConfig::from_toml_str(
        "mode = \"mmc\"\nseed = 1\nservers = 2\narrival_rate = 1.0\nservice_rate = 1.0\njobs = 10\n",
    )
    .unwrap();
    assert_eq!(cfg, mmc(1, 1.0, 1.0, 2, 10));
    let course = SimConfig::from_toml_str("mode = \"course\"\nservers = 8\n").unwrap();
    assert_eq!(course, SimConfig::Course(CourseConfig { servers: 8, ..CourseConfig::default() }));
    assert!(SimConfig::from_toml_str("mode = \"course\"\nbogus = 1\n").is_err());
}

#[test]
fn rejects_invalid_configs() {
    assert!(matches!(run_sim(&mmc(1, 2.0, 1.0, 2, 10)), Err(SimError::Unstable { .. })));
    assert!(matches!(run_sim(&mmc(1, 1.0, 1.0, 0, 10)), Err(SimError::InvalidConfig(_))));
    let both = SimConfig::Mmc(MmcConfig {
        seed: 1,
        servers: 1,
        arrival_rate: 0.1,
        service_rate: 1.0,
        jobs: Some(1),
        horizon: Some(1.0),
    });
    assert!(run_sim(&both).is_err());
    let p = SimConfig::Course(CourseConfig { p_fail: 1.5, ..CourseConfig::default() });
    assert!(matches!(run_sim(&p), Err(SimError::InvalidConfig(_))));
}

#[test]
fn table_output() {
    let r = run_sim(&mmc(1, 0.5, 1.0, 1, 100)).unwrap();
    let t = r.to_table();
    assert!(t.starts_with("metric,value\njobs_generated,100\njobs_completed,100\n"));
    assert!(t.contains("server_0_busy,"));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn course_runs_conserve_jobs(
            seed in any::<u64>(),
            servers in 1u32..10,
            students in 1u32..60,
            sessions in 1u32..4,
            p_fail in 0.0f64..0.6,
            cap in 1u32..5,
        ) {
            let cfg = CourseConfig { seed, servers, students, sessions, p_fail, per_attempt_cap: cap, ..CourseConfig::default() };
            let r = run_sim(&SimConfig::Course(cfg)).unwrap();
            prop_assert_eq!(r.jobs_completed + r.in_system_at_horizon + r.rejected_at_session_end, r.jobs_generated);
            prop_assert!((0.0..=1.0).contains(&r.utilization));
            prop_assert!(r.mean_wait >= 0.0 && r.median_wait >= 0.0 && r.p90_wait >= r.median_wait);
        }

        #[test]
        fn horizon_runs_conserve_jobs(seed in any::<u64>(), servers in 1u32..5, rho in 0.1f64..0.95, horizon in 1.0f64..500.0) {
            let cfg = SimConfig::Mmc(MmcConfig {
                seed,
                servers,
                arrival_rate: rho * f64::from(servers),
                service_rate: 1.0,
                jobs: None,
                horizon: Some(horizon),
            });
            let r = run_sim(&cfg).unwrap();
            prop_assert_eq!(r.jobs_completed + r.in_system_at_horizon, r.jobs_generated);
            prop_assert!(r.per_server_busy.iter().all(|b| (0.0..=1.0 + 1e-9).contains(b)));
        }
    }
}

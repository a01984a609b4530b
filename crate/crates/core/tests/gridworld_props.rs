use herdsearch::gridworld::{
    read_episode_log, replay, write_episode_log, Action, EpisodeConfig, EpisodeState, GridPos, LoggedStep, MemoryMap,
    MotionModel, Plane,
};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = EpisodeConfig> {
    (2usize..12, 2usize..12, 0usize..3, prop_oneof![Just(0.05), Just(0.3), Just(0.9), Just(1.0)], any::<u64>(), any::<bool>())
        .prop_flat_map(|(w, h, half, delta, seed, moving)| {
            let max_targets = (w * h - 1).min(17);
            (0..=max_targets, 0..h, 0..w).prop_map(move |(n, r, c)| EpisodeConfig {
                width: w,
                height: h,
                num_targets: n,
                sense_half_width: half,
                reset_fraction: delta,
                motion: if moving {
                    MotionModel::RandomWalk { p_move: 0.3 }
                } else {
                    MotionModel::Static
                },
                start: GridPos::new(r, c),
                seed,
            })
        })
}

fn actions() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn episode_invariants_hold(cfg in config(), picks in actions()) {
        let mut s = EpisodeState::spawn(&cfg).unwrap();
        let mut m = MemoryMap::for_config(&cfg);
        m.update(&s, &s.sense()).unwrap();
        let mut recovered = 0;
        for p in picks {
            let legal: Vec<Action> = s.legal_actions().iter().collect();
            prop_assert!(!legal.is_empty());
            let a = legal[p % legal.len()];
            let before = s.targets.iter().filter(|t| t.recovered).count();
            let out = s.apply(a).unwrap();
            let after = s.targets.iter().filter(|t| t.recovered).count();
            prop_assert_eq!(after - before, out.recoveries);
            recovered += out.recoveries;
            m.update(&s, &s.sense()).unwrap();

            prop_assert!(s.agent.row < cfg.height && s.agent.col < cfg.width);
            prop_assert_eq!(m.plane_cells(Plane::AgentCurrent), vec![s.agent]);
            prop_assert_eq!(m.plane_cells(Plane::AgentStart), vec![cfg.start]);
            prop_assert!(m.get(Plane::Visited, s.agent));
            for p in m.plane_cells(Plane::Visited) {
                prop_assert!(m.get(Plane::Seen, p));
            }
            for t in &s.targets {
                prop_assert!(t.pos.row < cfg.height && t.pos.col < cfg.width);
                if t.recovered {
                    prop_assert!(m.get(Plane::TargetRecovered, t.pos));
                }
            }
            prop_assert!((m.count(Plane::Visited) as f64) / (cfg.cells() as f64) < cfg.reset_fraction
                || m.count(Plane::Visited) == 1);
        }
        prop_assert_eq!(recovered, s.recovered_count);
        prop_assert!(s.recovered_count <= cfg.num_targets);
    }

    #[test]
    fn placement_is_distinct_and_avoids_start(cfg in config()) {
        let s = EpisodeState::spawn(&cfg).unwrap();
        prop_assert_eq!(s.targets.len(), cfg.num_targets);
        let mut cells: Vec<GridPos> = s.targets.iter().map(|t| t.pos).collect();
        prop_assert!(!cells.contains(&cfg.start));
        cells.sort_unstable();
        cells.dedup();
        prop_assert_eq!(cells.len(), cfg.num_targets);
        prop_assert_eq!(&EpisodeState::spawn(&cfg).unwrap(), &s);
    }

    #[test]
    fn sensing_reports_exactly_the_unrecovered_targets_in_view(cfg in config(), picks in actions()) {
        let mut s = EpisodeState::spawn(&cfg).unwrap();
        for p in picks {
            let legal: Vec<Action> = s.legal_actions().iter().collect();
            s.apply(legal[p % legal.len()]).unwrap();
            let view = s.sense();
            let half = cfg.sense_half_width as isize;
            for r in 0..view.side() {
                for c in 0..view.side() {
                    let wr = s.agent.row as isize + r as isize - half;
                    let wc = s.agent.col as isize + c as isize - half;
                    let expected = s.targets.iter().any(|t| {
                        !t.recovered && t.pos.row as isize == wr && t.pos.col as isize == wc
                    });
                    prop_assert_eq!(view.get(r, c), expected);
                }
            }
        }
    }

    #[test]
    fn logs_replay_exactly(cfg in config(), picks in actions()) {
        let mut s = EpisodeState::spawn(&cfg).unwrap();
        let mut steps = Vec::new();
        for (i, p) in picks.into_iter().enumerate() {
            let legal: Vec<Action> = s.legal_actions().iter().collect();
            let a = legal[p % legal.len()];
            let agent = s.agent;
            let out = s.apply(a).unwrap();
            steps.push(LoggedStep { step: i, agent, action: a, recoveries: out.recoveries });
        }
        let mut buf = Vec::new();
        write_episode_log(&mut buf, &cfg, &steps).unwrap();
        let (cfg2, steps2) = read_episode_log(buf.as_slice()).unwrap();
        prop_assert_eq!(&cfg2, &cfg);
        prop_assert_eq!(&steps2, &steps);
        prop_assert_eq!(replay(&cfg2, &steps2).unwrap(), s);
    }
}

#[test]
fn tampered_log_fails_replay() {
    let cfg = EpisodeConfig {
        seed: 5,
        ..EpisodeConfig::default()
    };
    let mut s = EpisodeState::spawn(&cfg).unwrap();
    let mut steps = Vec::new();
    for (i, a) in [Action::E, Action::E, Action::S].into_iter().enumerate() {
        let agent = s.agent;
        let out = s.apply(a).unwrap();
        steps.push(LoggedStep {
            step: i,
            agent,
            action: a,
            recoveries: out.recoveries,
        });
    }
    steps[2].agent = GridPos::new(9, 9);
    assert!(replay(&cfg, &steps).is_err());
}

use vptc::sim::scenario::{Command, ConstraintName, Scenario, ScheduledCommand};
use vptc::sim::{run_scenario, LoadedModels, Simulation};
use vptc_teleop::Session;

fn scenario() -> Scenario {
    Scenario::from_toml(
        r#"
name = "teleop-test"
duration = 2.0

[field]
x_star = [0.5, 0.3]

[initial]
q = [0.5, 1.2, 0.9]

[constraints]
sca = false
eca = false

[[obstacles]]
id = 0
center = [-0.5, -0.5]
radius = 0.05
"#,
    )
    .unwrap()
}

fn session(s: &Scenario) -> Session {
    Session::new(
        Simulation::new(s.clone(), LoadedModels::default()).unwrap(),
        4,
    )
}

#[test]
fn idle_session_matches_batch_run() {
    let s = scenario();
    let mut live = session(&s);
    live.run_headless(usize::MAX).unwrap();
    let (expected, _) = run_scenario(&s).unwrap();
    let got = live.into_simulation().finish().0;
    assert_eq!(
        got.without_wall_clock().to_bytes(),
        expected.without_wall_clock().to_bytes()
    );
}

#[test]
fn replayed_commands_match_scripted_scenario() {
    let script = [
        (50, Command::SetTarget { x: [0.2, 0.6] }),
        (
            120,
            Command::Push {
                tau: vec![0.0, 1.0, 0.0],
                duration: 0.05,
            },
        ),
        (
            150,
            Command::MoveObstacle {
                id: 0,
                p: [-0.6, -0.4],
            },
        ),
        (
            200,
            Command::Toggle {
                constraint: ConstraintName::Sca,
                enabled: false,
            },
        ),
        (
            260,
            Command::AddObstacle {
                p: [0.7, -0.5],
                radius: 0.04,
                id: None,
            },
        ),
        (300, Command::RemoveObstacle { id: 0 }),
    ];
    let base = scenario();
    let mut scripted = base.clone();
    scripted.commands = script
        .iter()
        .map(|(k, c)| ScheduledCommand {
            step: *k,
            command: c.clone(),
        })
        .collect();
    let (expected, _) = run_scenario(&scripted).unwrap();

    let mut live = session(&base);
    let shared = live.shared();
    let mut next = script.iter().peekable();
    let mut seq = 0;
    while !live.simulation().is_done() {
        let k = live.simulation().step_index() as u64;
        while let Some((_, c)) = next.next_if(|(at, _)| *at == k) {
            seq += 1;
            shared.mailbox.post(seq, c.clone());
        }
        live.step().unwrap();
    }
    let got = live.into_simulation().finish().0;
    assert_eq!(
        got.without_wall_clock().to_bytes(),
        expected.without_wall_clock().to_bytes()
    );
}

#[test]
fn two_targets_in_one_period_only_the_later_applies() {
    let s = scenario();
    let mut live = session(&s);
    let shared = live.shared();
    live.run_headless(8).unwrap();
    shared.mailbox.post(1, Command::SetTarget { x: [0.1, 0.7] });
    shared
        .mailbox
        .post(2, Command::SetTarget { x: [0.6, -0.2] });
    live.step().unwrap();
    let log = live.simulation().log();
    assert_eq!(log.records.last().unwrap().target.as_slice(), &[0.6, -0.2]);
    assert!(log
        .records
        .iter()
        .all(|r| r.target.as_slice() != [0.1, 0.7]));
    let snap = shared.snapshot.load_full().unwrap();
    assert_eq!(snap.step, 8);
    assert_eq!(snap.last_seq, Some(2));
}

#[test]
fn failed_command_reports_its_sequence_number() {
    let s = scenario();
    let mut live = session(&s);
    let shared = live.shared();
    let mut errors = shared.errors.subscribe();
    shared.mailbox.post(41, Command::RemoveObstacle { id: 99 });
    live.step().unwrap();
    match errors.try_recv().unwrap() {
        vptc_teleop::ServerFrame::Error { seq, .. } => assert_eq!(seq, Some(41)),
        other => panic!("unexpected frame {other:?}"),
    }
    assert_eq!(live.simulation().step_index(), 1);
}

#[test]
fn snapshots_follow_decimation() {
    let s = scenario();
    let mut live = session(&s);
    let shared = live.shared();
    let mut seen = Vec::new();
    for _ in 0..12 {
        live.step().unwrap();
        let step = shared.snapshot.load_full().unwrap().step;
        if seen.last() != Some(&step) {
            seen.push(step);
        }
    }
    assert_eq!(seen, vec![0, 4, 8]);
}

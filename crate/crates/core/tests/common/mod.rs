#![allow(dead_code)]

use std::collections::BTreeSet;

use mastery_core::catalog::{Achievement, AchievementGroup, AchievementKind, ExamContext};
use mastery_core::ledger::RequestState;
use mastery_core::queue::{GradingSheet, QueueError, SheetVerdict};
use mastery_core::{
    AchievementId, CourseCatalog, Engine, ExaminerId, GradeLevel, Ledger, QueuePolicy, RequestId, StudentId, Timestamp,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const T0: i64 = 1_790_000_000_000;

/// Twelve lab achievements over three levels; every fourth is an assignment.
pub fn catalog() -> CourseCatalog {
    CourseCatalog {
        groups: vec![AchievementGroup { id: "g".into(), name: "G".into() }],
        achievements: (0..12)
            .map(|i| Achievement {
                id: AchievementId(format!("a{i:02}")),
                name: format!("A{i}"),
                group: "g".into(),
                level: GradeLevel::new(["3", "4", "5"][i / 4]),
                kind: if i % 4 == 0 { AchievementKind::Assignment } else { AchievementKind::Regular },
                context: ExamContext::LabDemonstrable,
            })
            .collect(),
        ..CourseCatalog::default()
    }
}

pub fn examiners() -> Vec<ExaminerId> {
    vec!["e0".into(), "e1".into()]
}

/// Applies `ops` random operations; returns the engine and per-op results.
pub fn drive(seed: u64, ops: usize, students: usize) -> (Engine, Vec<Result<(), QueueError>>) {
    let mut engine = Engine::new(catalog(), QueuePolicy::default(), Ledger::in_memory()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<AchievementId> = engine.catalog().achievements.iter().map(|a| a.id.clone()).collect();
    let roster: Vec<StudentId> = (0..students).map(|i| StudentId(format!("s{i}"))).collect();
    let staff = examiners();
    let mut now = Timestamp(T0);
    let mut results = Vec::with_capacity(ops);
    for _ in 0..ops {
        now = now + rng.random_range(0..5) * Timestamp::MINUTE;
        let r = match rng.random_range(0..10) {
            0..=3 => {
                let who = vec![roster.choose(&mut rng).unwrap().clone()];
                let n = rng.random_range(1..=4);
                let ask: Vec<AchievementId> = ids.choose_multiple(&mut rng, n).cloned().collect();
                engine.submit_request(&who, &ask, &mut rng, now).map(|_| ())
            }
            4 | 5 => match pick(&engine, RequestState::Pending, &mut rng) {
                Some(id) => engine.claim(staff.choose(&mut rng).unwrap(), id, now).map(|_| ()),
                None => Ok(()),
            },
            6 | 7 => match pick(&engine, RequestState::Claimed, &mut rng) {
                Some(id) => {
                    let req = engine.state().requests[&id].clone();
                    let mut sheet = GradingSheet::default();
                    for s in &req.students {
                        for a in req.stated_for(s) {
                            let v = [SheetVerdict::Pass, SheetVerdict::Fail, SheetVerdict::Pushback]
                                [rng.random_range(0..3)];
                            sheet.set(s.clone(), a.clone(), v);
                        }
                    }
                    engine.record_results(id, &sheet, now).map(|_| ())
                }
                None => Ok(()),
            },
            8 => match pick(&engine, RequestState::Pending, &mut rng) {
                Some(id) => {
                    let who = engine.state().requests[&id].students[0].clone();
                    engine.cancel_request(id, &who, now).map(|_| ())
                }
                None => Ok(()),
            },
            _ => match engine.state().open_session().map(|s| s.id) {
                Some(s) => engine.close_session(s, now).map(|_| ()),
                None => engine
                    .open_session(now, now + 4 * Timestamp::HOUR, staff.iter().cloned().collect::<BTreeSet<_>>())
                    .map(|_| ()),
            },
        };
        results.push(r);
    }
    (engine, results)
}

fn pick(engine: &Engine, state: RequestState, rng: &mut ChaCha8Rng) -> Option<RequestId> {
    let ids: Vec<RequestId> = engine.state().requests.values().filter(|r| r.state == state).map(|r| r.id).collect();
    ids.choose(rng).copied()
}

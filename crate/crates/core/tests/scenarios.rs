//! End-to-end scenarios through the harness.

use angelfish::harness::{run_seed, ScenarioConfig};
use angelfish::sim::{Crash, DelayModel, StopCondition};
use angelfish::{PartyId, RbcKind};

#[test]
fn leader_edge_spans_two_crashed_leaders() {
    // Round-robin schedule: parties 5 and 6 lead rounds 5 and 6.
    let mut cfg = ScenarioConfig::new(7);
    cfg.rbc = RbcKind::TwoStepCertified;
    cfg.delay = DelayModel::Fixed { delta: 1 };
    cfg.stop = StopCondition::Round { round: 10 };
    cfg.faults.crashes = vec![
        Crash {
            party: PartyId(5),
            at: 0,
        },
        Crash {
            party: PartyId(6),
            at: 0,
        },
    ];
    let o = run_seed(&cfg, 0).unwrap();
    assert!(o.safety.is_ok() && o.liveness.is_ok());
    assert!(o.trace.tc_rounds.contains(&5) && o.trace.tc_rounds.contains(&6));

    let dag = o.nodes[0].dag();
    let lv7 = dag.get_leader_vertex(7).expect("leader vertex of round 7");
    let lv4 = dag.get_leader_vertex(4).expect("leader vertex of round 4");
    assert!(lv7.leader_edges().contains(&lv4.id()));
    let tc_rounds: Vec<_> = lv7.tcs().iter().map(|tc| tc.round).collect();
    assert_eq!(tc_rounds, [5, 6]);

    let dot = dag.to_dot(3..=7);
    assert!(dot.contains("v7_0 -> v4_4 [style=bold];"), "{dot}");
    assert!(dot.contains("cluster_r5") && !dot.contains("v5_5 "));
}

#[test]
fn runs_replay_from_their_seed() {
    let mut cfg = ScenarioConfig::new(4);
    cfg.delay = DelayModel::Adversarial { min: 1, max: 3 };
    cfg.gst = 30;
    cfg.stop = StopCondition::RoundsAfterGst { rounds: 8 };
    let a = run_seed(&cfg, 17).unwrap();
    let b = run_seed(&cfg, 17).unwrap();
    assert_eq!(
        serde_json::to_string(&a.metrics).unwrap(),
        serde_json::to_string(&b.metrics).unwrap()
    );
    assert_eq!(a.trace.tc_rounds, b.trace.tc_rounds);
    for (x, y) in a.nodes.iter().zip(&b.nodes) {
        assert_eq!(x.committed_round(), y.committed_round());
    }
}

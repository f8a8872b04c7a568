use angelfish::harness::{run_seed, ScenarioConfig};
use angelfish::sim::{DelayModel, StopCondition};
use angelfish::{DagStore, Node, RbcKind, VertexId};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn scenario(n: usize, rbc: RbcKind) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(n);
    cfg.rbc = rbc;
    cfg.delay = DelayModel::Jitter { min: 1, max: 2 };
    cfg.stop = StopCondition::Round { round: 10 };
    cfg
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_10_rounds");
    group.sample_size(20);
    for n in [4, 7, 13] {
        for rbc in [RbcKind::Bracha, RbcKind::TwoStepCertified] {
            let cfg = scenario(n, rbc);
            group.bench_with_input(BenchmarkId::new(format!("{rbc:?}"), n), &cfg, |b, cfg| {
                b.iter(|| run_seed(black_box(cfg), 7).expect("valid scenario"))
            });
        }
    }
    group.finish();
}

/// A correct party's node after a 20-round run, for read-only DAG queries.
fn populated_node() -> Node {
    let mut cfg = scenario(10, RbcKind::TwoStepCertified);
    cfg.stop = StopCondition::Round { round: 20 };
    let o = run_seed(&cfg, 3).expect("valid scenario");
    let p = o.trace.correct().next().expect("a correct party");
    o.nodes.into_iter().nth(p.index()).expect("node exists")
}

fn dag_queries(c: &mut Criterion) {
    let node = populated_node();
    let dag = node.dag();
    let top = dag.max_round() - 1;
    let from: VertexId = dag
        .round_vertices(top)
        .next()
        .expect("top round has vertices")
        .id();
    let targets: Vec<VertexId> = dag.round_vertices(2).map(|v| v.id()).collect();
    let leader = dag
        .get_leader_vertex(top)
        .or_else(|| dag.get_leader_vertex(top - 1))
        .expect("a recent leader")
        .id();
    let old_leader = (1..4)
        .find_map(|r| dag.get_leader_vertex(r))
        .expect("an early leader")
        .id();

    c.bench_function("dag_path_across_rounds", |b| {
        b.iter(|| {
            targets
                .iter()
                .filter(|t| dag.path(black_box(&from), t))
                .count()
        })
    });
    c.bench_function("dag_leader_path", |b| {
        b.iter(|| dag.leader_path(black_box(&leader), black_box(&old_leader)))
    });
    let mut vertices: Vec<_> = dag.vertices().cloned().collect();
    vertices.sort_by_key(|v| v.id());
    let schedule = node.schedule().clone();
    c.bench_function("dag_insert_and_linearize", |b| {
        b.iter(|| {
            let mut fresh = DagStore::new(schedule.clone());
            for v in &vertices {
                fresh.try_add_to_dag(v.clone());
            }
            fresh.deliver_history(&leader).len()
        })
    });
}

criterion_group!(benches, simulation, dag_queries);
criterion_main!(benches);

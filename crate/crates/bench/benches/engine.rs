use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use enerstat_core::dsl::{parse, static_costs, CostTable};
use enerstat_core::scenario::load_scenario;
use enerstat_core::step_world;

const NEURON_SOMA: &str = "let v = sense(self.potential) + sense(struct[2].input);\n\
                           affect(self.potential, clamp(v - 1, 0, 10));\n\
                           affect(env.alloc_self, if v > 0 then 60 else 42)";

fn scenarios() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios"))
}

fn dsl(c: &mut Criterion) {
    c.bench_function("parse", |b| b.iter(|| parse(black_box(NEURON_SOMA)).unwrap()));
    let ast = parse(NEURON_SOMA).unwrap();
    let table = CostTable::default();
    c.bench_function("static_costs", |b| {
        b.iter(|| static_costs(black_box(&ast), &table).unwrap())
    });
}

fn engine(c: &mut Criterion) {
    for (name, steps) in [("minimal-loop", 200), ("men", 200)] {
        let s = load_scenario(scenarios().join(format!("{name}.scenario"))).unwrap();
        c.bench_function(&format!("step_world/{name}/{steps}"), |b| {
            b.iter_batched(
                || s.build().unwrap(),
                |mut w| {
                    for _ in 0..steps {
                        black_box(step_world(&mut w).unwrap());
                    }
                    w
                },
                BatchSize::LargeInput,
            )
        });
    }
}

criterion_group!(benches, dsl, engine);
criterion_main!(benches);

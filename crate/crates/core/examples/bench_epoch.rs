use kinetic_pinn::trainer::{train, Problem, TrainerConfig, Mode};
use std::time::Instant;

fn main() {
    let mut cfg = TrainerConfig::defaults(Problem::FpTest1);
    cfg.mode = Mode::Augmented;
    cfg.epochs = 20;
    let t0 = Instant::now();
    let report = train(&cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("20 epochs + overhead: {dt:.2}s -> {:.3}s/epoch", dt / 20.0);
    println!("first loss {}", report.records[0].loss_total);
    println!("last loss  {}", report.records.last().unwrap().loss_total);
}

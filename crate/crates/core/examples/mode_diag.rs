use kinetic_pinn::trainer::{train, Mode, Problem, TrainerConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let mu: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let eta: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let period: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1);
    let beta: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let modes: Vec<Mode> = match std::env::args().nth(6).as_deref() {
        Some("la") => vec![Mode::Lagrange, Mode::Augmented],
        _ => vec![Mode::Unconstrained, Mode::Penalty, Mode::Lagrange, Mode::Augmented],
    };
    for mode in modes {
        let mut cfg = TrainerConfig::defaults(Problem::FpTest1);
        cfg.mode = mode;
        cfg.epochs = epochs;
        cfg.mu = mu;
        cfg.eta_dual = eta;
        cfg.dual_period = period;
        cfg.beta = vec![beta];
        cfg.seed = 1;
        let r = train(&cfg).unwrap();
        let last = r.records.last().unwrap();
        let mass = &r.traces.mass;
        let max_dev = mass.iter().map(|m| (m - 1.0).abs()).fold(0.0f64, f64::max);
        let net_drift = mass.last().unwrap() - mass.first().unwrap();
        let tv: f64 = mass.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let lam_max = r.multipliers.values.iter().flatten().map(|l| l.abs()).fold(0.0f64, f64::max);
        println!(
            "{:>13}: loss={:+.3e} ge={:.3e} ic={:.3e} cnorm={:.3e} err={:.4} max|m-1|={:.4} drift={:+.4} tv={:.4} lam_max={:.2} aborted={:?}",
            mode.as_str(), last.loss_total, last.loss_ge, last.loss_ic,
            last.constraint_norms[0], last.error_linf_l2, max_dev, net_drift, tv, lam_max, r.aborted
        );
    }
}

use sg2m_core::config::RunConfig;
use sg2m_core::networks::Variant;
use sg2m_core::training::Trainer;
use std::time::Instant;

fn time_cfg(name: &str, base: usize, cap: usize, batch: usize, steps: u64) {
    let mut cfg = RunConfig::default();
    cfg.network.resolution = 32;
    cfg.network.z_dim = 64;
    cfg.network.w_dim = 64;
    cfg.network.mapping_depth = 4;
    cfg.network.channel_base = base;
    cfg.network.channel_cap = cap;
    cfg.network.g_variant = Variant::Skip;
    cfg.network.d_variant = Variant::Residual;
    cfg.batch_size = batch;
    let mut t = Trainer::new(&cfg);
    let start = Instant::now();
    for _ in 0..steps {
        t.train_step().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("{name}: {:.3} s/step  ({:.1}s for {steps} steps; 10k steps = {:.1} min)", dt / steps as f64, dt, dt / steps as f64 * 10_000.0 / 60.0);
}

fn main() {
    time_cfg("base8/cap32/batch8", 8, 32, 8, 30);
    time_cfg("base8/cap32/batch4", 8, 32, 4, 30);
    time_cfg("base16/cap64/batch8", 16, 64, 8, 20);
    time_cfg("base16/cap128/batch8 (default)", 16, 128, 8, 10);
}

//! Run the desk-scale experiment once and print its MTF tables.
//!
//! `cargo run --release --example desk -- [config-json] [seed]`

use volsr::experiment::{run_desk, DeskConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg: DeskConfig = match args.next() {
        Some(json) => serde_json::from_str(&json)?,
        None => DeskConfig::default(),
    };
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    let r = run_desk(&cfg)?;
    for (name, rep) in [
        ("in-plane", &r.in_plane_report),
        ("through-plane", &r.through_plane_report),
    ] {
        let n = rep.losses.len();
        let w = 500.min(n);
        println!(
            "{name} loss first {:.4} last {:.4}",
            rep.mean_loss(0..w),
            rep.mean_loss(n - w..n)
        );
    }
    for (plane, curves) in [("in-plane", &r.in_plane), ("through-plane", &r.through_plane)] {
        println!("{plane}");
        for c in curves {
            let m: Vec<String> = c.modulations().iter().map(|v| format!("{v:.3}")).collect();
            println!("  {:12} {}", c.method, m.join(" "));
        }
    }
    println!(
        "loss halved {}  sr >= lr {}  xyz-all >= axial {}",
        r.loss_halved(),
        r.sr_beats_lr(),
        r.xyz_all_beats_axial()
    );
    for (stage, s) in &r.timings_s {
        println!("{stage}: {s:.1}s");
    }
    Ok(())
}

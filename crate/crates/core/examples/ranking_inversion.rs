//! Benchmarks two fixture models under both NMS triples and prints their fps
//! ranking per triple together with the share of time spent in NMS.
//!
//! Usage: `cargo run --release --example ranking_inversion [EXP_A] [EXP_B] [RUNS]`

use refinedet_core::fixtures::{experiment_spec, LOOSE_NMS, TIGHT_NMS};
use refinedet_core::profiler::{benchmark, Stage};
use refinedet_core::{Model, ModelRunner};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let exp_a: u32 = args.first().map_or(Ok(1), |s| s.parse())?;
    let exp_b: u32 = args.get(1).map_or(Ok(9), |s| s.parse())?;
    let runs: usize = args.get(2).map_or(Ok(6), |s| s.parse())?;
    let warmup = 1.min(runs - 1);

    let mut fps = Vec::new();
    for exp in [exp_a, exp_b] {
        let spec = experiment_spec(exp).ok_or("experiment number must be 1..=50")?;
        let runner = ModelRunner::new(Model::<f32>::assemble(&spec)?, 2, 0);
        let mut row = Vec::new();
        let mut shares = Vec::new();
        for nms in [TIGHT_NMS, LOOSE_NMS] {
            let r = benchmark(&runner, runs, warmup, &nms)?;
            println!(
                "exp{exp:02} {:<14} {:<16} nms {:<18} fps {:>8.2}  nms share {:>5.1}%",
                spec.name,
                spec.backbone.display_name(),
                nms.to_string(),
                r.fps,
                r.share(Stage::Nms) * 100.0
            );
            row.push(r.fps);
            shares.push(r.share(Stage::Nms));
        }
        assert!(
            shares[1] > shares[0],
            "nms share did not grow with max_input for exp{exp:02}"
        );
        fps.push(row);
    }

    for (i, nms) in [TIGHT_NMS, LOOSE_NMS].iter().enumerate() {
        let (first, second) = if fps[0][i] >= fps[1][i] { (exp_a, exp_b) } else { (exp_b, exp_a) };
        println!("ranking under {nms}: exp{first:02} > exp{second:02}");
    }
    let inverted = (fps[0][0] >= fps[1][0]) != (fps[0][1] >= fps[1][1]);
    println!("ranking inverted between triples: {}", if inverted { "yes" } else { "no" });
    Ok(())
}

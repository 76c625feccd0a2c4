// Reduced-scale directional pilot of the paired-training ablation:
// 1500 steps (vs the 20k protocol), one seed, two rate points, all
// three variants. Prints held-out RD points and slice-1 shares.
use std::path::PathBuf;

use cca_cli::ablation::{heldout_images, train_run, AblationSpec, Variant};
use cca_cli::eval::{eval_model, info_distribution};

fn main() {
    let spec = AblationSpec {
        steps: 1500,
        lambdas: vec![0.85, 3.5],
        seeds: vec![11],
        corpus_images: 200,
        corpus_seed: 0xC0FFEE,
        crop: 64,
        batch: 2,
        eval_images: 12,
        out_dir: PathBuf::from("target/cca-fixtures/pilot"),
        verbose: true,
    };
    let eval_set = heldout_images(&spec);
    for &lambda in &spec.lambdas {
        for variant in [Variant::UnevenCca, Variant::UnevenBase, Variant::EvenCca] {
            let trained = train_run(&spec, variant, lambda, spec.seeds[0]).unwrap();
            let per = eval_model(&trained, &eval_set).unwrap();
            let n = per.len() as f64;
            let bpp = per.iter().map(|p| p.0).sum::<f64>() / n;
            let psnr = per.iter().map(|p| p.1).sum::<f64>() / n;
            let dist = info_distribution(&trained, &eval_set).unwrap();
            println!(
                "PILOT lambda={lambda} variant={} bpp={bpp:.4} psnr={psnr:.2} z={:.4} shares={:?}",
                variant.label(),
                dist.z_share,
                dist.slice_shares
                    .iter()
                    .map(|s| (s * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            );
        }
    }
}

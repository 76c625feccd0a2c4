use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cca_cli::eval;
use cca_pipeline::{
    compress, decompress, load_checkpoint, read_ppm, save_checkpoint, write_ppm, CropSampler,
    PipelineError, PipelineResult, RgbImage, TrainConfig, Trainer, TrainedModel,
};

#[derive(Parser)]
#[command(
    name = "cca",
    version,
    about = "CCA learned image codec: train, compress, decompress and evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a `key = value` config file.
    Train {
        /// Path to the training config.
        #[arg(long)]
        config: PathBuf,
        /// Print a progress line every N steps.
        #[arg(long, default_value_t = 100)]
        progress_every: usize,
    },
    /// Compress a PPM (P6) image to a .cca bitstream.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decompress a .cca bitstream to a PPM image.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compress+decompress an image set and report bpp/PSNR per image.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Directory of .ppm images (or a single image).
        #[arg(long)]
        images: PathBuf,
        /// Output CSV (image,bpp,psnr).
        #[arg(long)]
        output: PathBuf,
    },
    /// Bjontegaard rate difference between two RD CSV files.
    Bdrate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Average payload-bit shares per bitstream component.
    Infodist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Output CSV (component,share).
        #[arg(long)]
        output: PathBuf,
    },
    /// Rate-distortion sweep over one checkpoint per lambda.
    Rdsweep {
        /// Repeatable: <lambda>=<checkpoint path>.
        #[arg(long = "model", value_name = "LAMBDA=PATH")]
        models: Vec<String>,
        #[arg(long)]
        images: PathBuf,
        /// Output CSV (lambda,bpp,psnr,model_id).
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_images(path: &Path) -> PipelineResult<Vec<(String, RgbImage)>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(PipelineError::Dataset(format!(
                "no .ppm images in {}",
                path.display()
            )));
        }
        files
            .into_iter()
            .map(|f| {
                let name = f
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, read_ppm(&f)?))
            })
            .collect()
    } else {
        Ok(vec![(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            read_ppm(path)?,
        )])
    }
}

fn run(cmd: Cmd) -> PipelineResult<()> {
    match cmd {
        Cmd::Train {
            config,
            progress_every,
        } => {
            let cfg = TrainConfig::from_file(&config)?;
            let (sampler, warnings) =
                CropSampler::load_dir(&cfg.data_dir, cfg.crop_size, cfg.seed)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let ckpt = cfg.checkpoint_path.clone();
            let every = progress_every.max(1);
            let mut trainer = Trainer::new(cfg, sampler)?;
            let last = trainer.run(|step, r| {
                if step % every == 0 {
                    println!(
                        "step {step} rate_y {:.5} rate_z {:.5} D {:.3} cca {:.5} aux {:.5} total {:.3}",
                        r.rate_y, r.rate_z, r.distortion, r.cca, r.aux, r.total
                    );
                }
            })?;
            save_checkpoint(&ckpt, &trainer.trained())?;
            println!(
                "trained {} steps; final total {:.4}; checkpoint {}",
                trainer.step,
                last.total,
                ckpt.display()
            );
            Ok(())
        }
        Cmd::Compress {
            model,
            input,
            output,
        } => {
            let trained: TrainedModel<f64> = load_checkpoint(&model)?;
            let image = read_ppm(&input)?;
            let (container, stats) = compress(&trained, &image)?;
            let bytes = container.serialize()?;
            std::fs::write(&output, &bytes).map_err(|e| PipelineError::Io {
                path: output.display().to_string(),
                source: e,
            })?;
            let (total_bpp, payload_bpp) = eval::bpp_measure(&container);
            println!(
                "compressed {}x{} -> {} bytes ({:.4} bpp total, {:.4} payload, {} saturated)",
                image.width,
                image.height,
                bytes.len(),
                total_bpp,
                payload_bpp,
                stats.saturated_symbols
            );
            Ok(())
        }
        Cmd::Decompress {
            model,
            input,
            output,
        } => {
            let trained: TrainedModel<f64> = load_checkpoint(&model)?;
            let bytes = std::fs::read(&input).map_err(|e| PipelineError::Io {
                path: input.display().to_string(),
                source: e,
            })?;
            let container = cca_codec::BitstreamContainer::parse(&bytes)?;
            let image = decompress(&trained, &container)?;
            write_ppm(&output, &image)?;
            println!(
                "decompressed {} -> {}x{} {}",
                input.display(),
                image.width,
                image.height,
                output.display()
            );
            Ok(())
        }
        Cmd::Eval {
            model,
            images,
            output,
        } => {
            let trained: TrainedModel<f64> = load_checkpoint(&model)?;
            let set = load_images(&images)?;
            let mut rows = Vec::new();
            for (name, img) in &set {
                let (container, _) = compress(&trained, img)?;
                let out = decompress(&trained, &container)?;
                let (bpp, _) = eval::bpp_measure(&container);
                rows.push((name.clone(), bpp, eval::psnr(img, &out)?));
            }
            eval::write_eval_csv(&output, &rows)?;
            let n = rows.len() as f64;
            println!(
                "images {} mean_bpp {:.4} mean_psnr {:.2}",
                rows.len(),
                rows.iter().map(|r| r.1).sum::<f64>() / n,
                rows.iter().map(|r| r.2).sum::<f64>() / n
            );
            Ok(())
        }
        Cmd::Bdrate { anchor, test } => {
            let a = eval::read_rd_csv(&anchor)?;
            let t = eval::read_rd_csv(&test)?;
            let bd = eval::bd_rate(&a, &t)?;
            println!("{bd:.2}%");
            Ok(())
        }
        Cmd::Infodist {
            model,
            images,
            output,
        } => {
            let trained: TrainedModel<f64> = load_checkpoint(&model)?;
            let set = load_images(&images)?;
            let imgs: Vec<RgbImage> = set.into_iter().map(|(_, i)| i).collect();
            let dist = eval::info_distribution(&trained, &imgs)?;
            eval::write_infodist_csv(&output, &dist)?;
            print!("z {:.4}", dist.z_share);
            for (i, s) in dist.slice_shares.iter().enumerate() {
                print!(" slice_{} {:.4}", i + 1, s);
            }
            println!();
            Ok(())
        }
        Cmd::Rdsweep {
            models,
            images,
            output,
        } => {
            if models.is_empty() {
                return Err(PipelineError::Invalid(
                    "rdsweep needs at least one --model <lambda>=<path>".into(),
                ));
            }
            let mut parsed = Vec::new();
            for spec in &models {
                let (l, p) = spec.split_once('=').ok_or_else(|| {
                    PipelineError::Invalid(format!(
                        "--model expects <lambda>=<path>, got {spec:?}"
                    ))
                })?;
                let lambda: f64 = l.parse().map_err(|_| {
                    PipelineError::Invalid(format!("bad lambda {l:?} in --model {spec:?}"))
                })?;
                let path = PathBuf::from(p);
                let trained: TrainedModel<f64> = load_checkpoint(&path).map_err(|e| {
                    PipelineError::Invalid(format!(
                        "missing or unreadable checkpoint for lambda {lambda}: {e}"
                    ))
                })?;
                parsed.push((lambda, trained, p.to_string()));
            }
            let set = load_images(&images)?;
            let imgs: Vec<RgbImage> = set.into_iter().map(|(_, i)| i).collect();
            let points = eval::rd_sweep(&parsed, &imgs)?;
            eval::write_rd_csv(&output, &points)?;
            println!("{} rate points -> {}", points.len(), output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

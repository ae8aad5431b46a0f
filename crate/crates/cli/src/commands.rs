use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edgeflow_core::bam::{bam_generate, BamConfig, Norm};
use edgeflow_core::codec::{
    decode_latent, encode_latent, load_model, model_hash, psnr_y, read_image, residual_stats, save_model, ssim_y,
    storage_report, write_image, EncodeMode, RescalePayload,
};
use edgeflow_core::coupling::{CouplingMode, FlowConfig, FlowModel, DEFAULT_INIT_STD};
use edgeflow_core::losses::LossReport;
use edgeflow_core::pipeline::{downscale, upscale, LatentSource};
use edgeflow_core::synth;
use edgeflow_core::training::{train, TrainConfig};
use edgeflow_core::{Error, Result};

use crate::{BamArgs, Command, EncodingArg, ModeArg, NormArg, EXIT_DATA, EXIT_OK};

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        }
    }
}

impl BamArgs {
    fn config(&self, bits: u8) -> BamConfig {
        BamConfig {
            sigma: self.sigma,
            threshold: self.threshold,
            bits,
            norm: self.norm.into(),
        }
    }
}

fn io_line(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line)?;
    out.write_all(b"\n")?;
    Ok(())
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { io_line($out, format_args!($($arg)*)) };
}

fn read_rgb(path: &Path) -> Result<edgeflow_core::Tensor> {
    let img = read_image(path)?;
    if img.shape()[0] != 3 {
        return Err(Error::Format(format!(
            "{}: expected a colour (P6) image",
            path.display()
        )));
    }
    Ok(img)
}

pub(crate) fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Init {
            out: path,
            levels,
            mode,
            hidden,
            bits,
            zero,
            seed,
        } => {
            let config = FlowConfig {
                levels,
                channels: 3,
                hidden,
                mode: match mode {
                    ModeArg::General => CouplingMode::General,
                    ModeArg::Additive => CouplingMode::Additive,
                },
                bits,
            };
            if levels == 0 || hidden == 0 || !(1..=3).contains(&bits) {
                return Err(Error::Config("need levels >= 1, hidden >= 1, bits in 1..=3".into()));
            }
            let model = if zero {
                FlowModel::zeros(config)
            } else {
                FlowModel::init(config, DEFAULT_INIT_STD, &mut ChaCha8Rng::seed_from_u64(seed))
            };
            save_model(&path, &model)?;
            say!(out, "wrote {} ({} parameters)", path.display(), model.param_count())?;
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            images,
            synthetic,
            out: path,
            log,
        } => {
            let cfg = match config {
                Some(p) => TrainConfig::parse(&fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            let data = match (synthetic, images.is_empty()) {
                (Some(n), true) => synth::corpus(0, n, cfg.crop),
                (None, false) => images.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>>>()?,
                _ => return Err(Error::Config("give either --images or --synthetic".into())),
            };
            let mut csv = format!("{}\n", LossReport::CSV_HEADER);
            let outcome = train(&data, &cfg, |step, lr, r| {
                csv.push_str(&r.csv_row(step, lr));
                csv.push('\n');
            })?;
            save_model(&path, &outcome.model)?;
            if let Some(log) = log {
                fs::write(log, csv)?;
            }
            let last = outcome.history.last().copied().unwrap_or_default();
            say!(
                out,
                "trained {} steps, final total loss {:.6}",
                outcome.history.len(),
                last.total
            )?;
            Ok(EXIT_OK)
        }
        Command::Down {
            model,
            input,
            out: path,
            sidecar,
            latent,
            encoding,
            bam,
        } => {
            let model = load_model(model)?;
            let x = read_rgb(&input)?;
            let mode = match encoding {
                EncodingArg::Auto => EncodeMode::Auto,
                EncodingArg::Raw => EncodeMode::Raw,
                EncodingArg::Rle => EncodeMode::Rle,
            };
            let (payload, exact) = downscale(&model, &x, &bam.config(model.config.bits), mode)?;
            write_image(&path, &payload.lr)?;
            fs::write(&sidecar, payload.sidecar_bytes())?;
            if let Some(p) = latent {
                fs::write(p, encode_latent(&exact))?;
            }
            let r = storage_report(&payload);
            say!(
                out,
                "lr_bytes={} sidecar_payload_bytes={} sidecar_file_bytes={} payload_ratio={:.6} file_ratio={:.6}",
                r.lr_raw_bytes,
                r.sidecar_payload_bytes,
                r.sidecar_file_bytes,
                r.payload_ratio(),
                r.file_ratio()
            )?;
            Ok(EXIT_OK)
        }
        Command::Up {
            model,
            input,
            sidecar,
            seed,
            sigma_z,
            latent,
            out: path,
        } => {
            let model = load_model(model)?;
            let img = match (latent, input, sidecar) {
                (Some(l), _, _) => model.inverse(&decode_latent(&fs::read(l)?)?)?,
                (None, Some(input), Some(sidecar)) => {
                    let lr = read_rgb(&input)?;
                    let (sidecars, hash) = RescalePayload::parse_sidecars(&fs::read(&sidecar)?)?;
                    if hash != model_hash(&model) {
                        return Err(Error::Format(format!(
                            "{} was produced by a different model",
                            sidecar.display()
                        )));
                    }
                    let payload = RescalePayload {
                        lr,
                        sidecars,
                        model_hash: hash,
                    };
                    upscale(&model, &payload, LatentSource::Sampled { seed, sigma: sigma_z })?
                }
                _ => return Err(Error::Config("up needs --in and --sidecar, or --latent".into())),
            };
            write_image(&path, &img)?;
            Ok(EXIT_OK)
        }
        Command::Bam {
            input,
            bits,
            bam,
            out: path,
        } => {
            let img = read_image(&input)?.map(|v| v * 255.0);
            let map = bam_generate(&img, &bam.config(bits))?;
            write_image(&path, &map.normalized())?;
            say!(out, "boundary pixels: {}", map.nonzero_count())?;
            Ok(EXIT_OK)
        }
        Command::Metrics { reference, test } => {
            let a = read_image(reference)?;
            let b = read_image(test)?;
            let p = psnr_y(&a, &b)?;
            let s = ssim_y(&a, &b)?;
            say!(out, "PSNR: {p:.2} SSIM: {s:.4}")?;
            Ok(EXIT_OK)
        }
        Command::Stats { input, scale } => {
            let img = read_image(input)?;
            let s = residual_stats(&img, scale)?;
            say!(out, "mean: {:.6} variance: {:.6}", s.mean, s.variance)?;
            let hist: Vec<String> = s.histogram.iter().map(u64::to_string).collect();
            say!(out, "histogram: {}", hist.join(" "))?;
            Ok(EXIT_OK)
        }
        Command::Check { trials, seed } => {
            let results = crate::check::run_all(trials, seed)?;
            let mut failed = 0;
            for (name, ok, detail) in &results {
                say!(out, "{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" })?;
                if !ok {
                    failed += 1;
                }
            }
            Ok(if failed == 0 { EXIT_OK } else { EXIT_DATA })
        }
    }
}

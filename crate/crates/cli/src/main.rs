//! `mvcg`: batch command-line tool for training the generator and rendering
//! diagnostics from checkpoints. No interactive input; every command that
//! takes a seed is bit-reproducible.
//!
//! Exit codes: 0 success, 1 usage error, 2 config/IO error, 3 runtime error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mvcg_core::camera::{CameraPose, PoseDistribution};
use mvcg_core::error::{Error, Result};
use mvcg_core::imgio::save_png_linear;
use mvcg_core::losses::image_reproj_loss_with_mu;
use mvcg_core::tensor::Tensor;
use mvcg_core::train::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "mvcg", version, about = "train and render multi-view consistent generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the two-stage training loop
    Train {
        /// flat key = value config file
        #[arg(long)]
        config: PathBuf,
        /// checkpoint to resume from (its embedded config wins)
        #[arg(long)]
        resume: Option<PathBuf>,
        /// output directory for checkpoints and the loss log
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// stop after this many total steps (smoke runs / partial schedules)
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Render one identity across a horizontal yaw sweep plus a contact sheet
    RenderSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 35)]
        n_views: usize,
        /// total yaw span in radians, centered on frontal
        #[arg(long, default_value_t = 0.7)]
        yaw_range: f64,
    },
    /// Interpolate between two identities in style (or latent) space
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_a: u64,
        #[arg(long)]
        seed_b: u64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// interpolate z before the mapping network instead of w
        #[arg(long)]
        z_space: bool,
        /// also write the interpolated style rows to w.csv
        #[arg(long)]
        dump_w: bool,
        #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
        yaw_a: f64,
        #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
        yaw_b: f64,
    },
    /// 2x2 grid swapping which identity drives the field vs the decoder
    StyleMix {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_a: u64,
        #[arg(long)]
        seed_b: u64,
    },
    /// Dump the stereo warp pipeline for one pose pair
    WarpDebug {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pri_pitch: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pri_yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        aux_pitch: f64,
        #[arg(long, default_value_t = 0.3, allow_hyphen_values = true)]
        aux_yaw: f64,
    },
    /// Render n posed views of one identity plus a poses.csv manifest
    ExportViews {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 }; // --help / --version
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e {
            Error::InvalidArgument(_) | Error::Checkpoint(_) | Error::Dataset(_) | Error::Io(_) => 2,
            _ => 3,
        };
        std::process::exit(code);
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, resume, out, max_steps } => cmd_train(&config, resume.as_deref(), &out, max_steps),
        Command::RenderSweep { checkpoint, out, seed, n_views, yaw_range } => {
            cmd_render_sweep(&checkpoint, &out, seed, n_views, yaw_range)
        }
        Command::Interpolate { checkpoint, out, seed_a, seed_b, steps, z_space, dump_w, yaw_a, yaw_b } => {
            cmd_interpolate(&checkpoint, &out, seed_a, seed_b, steps, z_space, dump_w, yaw_a, yaw_b)
        }
        Command::StyleMix { checkpoint, out, seed_a, seed_b } => cmd_style_mix(&checkpoint, &out, seed_a, seed_b),
        Command::WarpDebug { checkpoint, out, seed, pri_pitch, pri_yaw, aux_pitch, aux_yaw } => {
            cmd_warp_debug(&checkpoint, &out, seed, (pri_pitch, pri_yaw), (aux_pitch, aux_yaw))
        }
        Command::ExportViews { checkpoint, out, seed, n } => cmd_export_views(&checkpoint, &out, seed, n),
    }
}

fn cmd_train(config: &Path, resume: Option<&Path>, out: &Path, max_steps: Option<usize>) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let t = Trainer::load(ckpt)?;
            if t.config != cfg {
                eprintln!("note: resuming with the checkpoint's config, ignoring {}", config.display());
            }
            t
        }
        None => Trainer::new(cfg)?,
    };
    fs::create_dir_all(out)?;
    let total = trainer.config.total_steps();
    let stop = max_steps.map_or(total, |m| m.min(total));
    let every = trainer.config.checkpoint_every.max(1);

    let log_path = out.join("log.csv");
    let fresh = resume.is_none() || !log_path.exists();
    let mut log = std::io::BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(&log_path)?,
    );
    if fresh {
        writeln!(log, "{}", mvcg_core::losses::LossReport::csv_header())?;
    }

    let started = std::time::Instant::now();
    let first = trainer.step;
    while trainer.step < stop {
        let at = trainer.step;
        let report = trainer.train_step()?;
        writeln!(log, "{}", report.csv_row(at))?;
        if trainer.step % every == 0 || trainer.step == stop {
            log.flush()?;
            let ckpt = out.join(format!("step_{:07}.ckpt", trainer.step));
            trainer.save(&ckpt)?;
            fs::copy(&ckpt, out.join("latest.ckpt"))?;
        }
        if trainer.step % 100 == 0 {
            let rate = (trainer.step - first) as f64 / started.elapsed().as_secs_f64();
            eprintln!(
                "step {}/{stop} stage {} res {} ({rate:.2} it/s)",
                trainer.step,
                trainer.stage(),
                trainer.current_resolution()
            );
        }
    }
    log.flush()?;
    Ok(())
}

fn cmd_render_sweep(checkpoint: &Path, out: &Path, seed: u64, n_views: usize, yaw_range: f64) -> Result<()> {
    if n_views == 0 {
        return Err(Error::InvalidArgument("n_views must be >= 1".into()));
    }
    let t = Trainer::load(checkpoint)?;
    let w = t.w_from_seed(seed)?;
    fs::create_dir_all(out)?;
    let mut tiles = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let yaw = if n_views == 1 {
            0.0
        } else {
            -yaw_range / 2.0 + yaw_range * i as f64 / (n_views - 1) as f64
        };
        let pose = CameraPose::new(0.0, yaw, t.config.cam_radius);
        let img = single_image(&t, &w, &w, &pose)?;
        save_png_linear(&out.join(format!("view_{i:03}.png")), &img)?;
        tiles.push(img);
    }
    save_png_linear(&out.join("sheet.png"), &contact_sheet(&tiles, 8)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_interpolate(
    checkpoint: &Path,
    out: &Path,
    seed_a: u64,
    seed_b: u64,
    steps: usize,
    z_space: bool,
    dump_w: bool,
    yaw_a: f64,
    yaw_b: f64,
) -> Result<()> {
    if steps < 2 {
        return Err(Error::InvalidArgument("steps must be >= 2 (the two endpoints)".into()));
    }
    let t = Trainer::load(checkpoint)?;
    let za = t.z_from_seed(seed_a);
    let zb = t.z_from_seed(seed_b);
    let wa = t.w_from_z(&za)?;
    let wb = t.w_from_z(&zb)?;
    fs::create_dir_all(out)?;
    let mut wlog = if dump_w {
        Some(fs::File::create(out.join("w.csv"))?)
    } else {
        None
    };
    for s in 0..steps {
        let alpha = s as f64 / (steps - 1) as f64;
        let w = if z_space {
            t.w_from_z(&lerp(&za, &zb, alpha)?)?
        } else {
            lerp(&wa, &wb, alpha)?
        };
        if let Some(f) = wlog.as_mut() {
            let row: Vec<String> = w.data().iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{s},{alpha},{}", row.join(","))?;
        }
        let yaw = yaw_a * (1.0 - alpha) + yaw_b * alpha;
        let pose = CameraPose::new(0.0, yaw, t.config.cam_radius);
        let img = single_image(&t, &w, &w, &pose)?;
        save_png_linear(&out.join(format!("frame_{s:03}.png")), &img)?;
    }
    Ok(())
}

fn cmd_style_mix(checkpoint: &Path, out: &Path, seed_a: u64, seed_b: u64) -> Result<()> {
    let t = Trainer::load(checkpoint)?;
    if t.stage() == 1 {
        return Err(Error::InvalidArgument(
            "style mixing needs a stage II checkpoint: the decoder has not trained yet".into(),
        ));
    }
    let wa = t.w_from_seed(seed_a)?;
    let wb = t.w_from_seed(seed_b)?;
    let pose = CameraPose::frontal(t.config.cam_radius);
    fs::create_dir_all(out)?;
    // row-major grid; the diagonal is the two plain renders
    let cells = [
        ("aa", &wa, &wa),
        ("ab", &wa, &wb), // identity A drives the field, B the decoder
        ("ba", &wb, &wa),
        ("bb", &wb, &wb),
    ];
    let mut tiles = Vec::with_capacity(4);
    for (name, w_field, w_dec) in cells {
        let img = single_image(&t, w_field, w_dec, &pose)?;
        save_png_linear(&out.join(format!("{name}.png")), &img)?;
        tiles.push(img);
    }
    save_png_linear(&out.join("grid.png"), &contact_sheet(&tiles, 2)?)?;
    Ok(())
}

fn cmd_warp_debug(
    checkpoint: &Path,
    out: &Path,
    seed: u64,
    pri: (f64, f64),
    aux: (f64, f64),
) -> Result<()> {
    let t = Trainer::load(checkpoint)?;
    let w = t.w_from_seed(seed)?;
    let r = t.config.cam_radius;
    let pri_pose = CameraPose::new(pri.0, pri.1, r);
    let aux_pose = CameraPose::new(aux.0, aux.1, r);
    let pair = t.stereo_eval(&w, &[pri_pose], &[aux_pose])?;
    fs::create_dir_all(out)?;

    let res = t.config.train_res;
    let rgb = |img: &Tensor<f32>| img.reshape(&[3, res, res]);
    save_png_linear(&out.join("primary.png"), &rgb(&pair.pri.color)?)?;
    save_png_linear(&out.join("auxiliary.png"), &rgb(&pair.aux.color)?)?;
    save_png_linear(&out.join("warped.png"), &rgb(&pair.warped_color)?)?;

    // residual heatmap: masked per-pixel mean |primary - warped|
    let resid = pair
        .pri
        .color
        .sub(&pair.warped_color)?
        .abs()
        .mul(&pair.valid)?
        .mean_axes(&[1], true)?;
    save_png_linear(&out.join("residual.png"), &heatmap(resid.data(), res))?;
    save_png_linear(
        &out.join("validity.png"),
        &gray_rgb(&pair.valid.reshape(&[1, res, res])?)?,
    )?;

    // depth normalized over [near, far], zeroed where nothing was hit
    let span = t.config.far - t.config.near;
    let depth_vis = pair
        .pri
        .depth
        .add_scalar(-t.config.near as f32)
        .mul_scalar(1.0 / span as f32)
        .clamp(0.0, 1.0)
        .mul(&pair.pri.opacity)?
        .reshape(&[1, res, res])?;
    save_png_linear(&out.join("depth.png"), &gray_rgb(&depth_vis)?)?;

    let (l_ir, _) = image_reproj_loss_with_mu(
        &pair.pri.color,
        &pair.warped_color,
        &pair.valid,
        t.config.mu_ssim,
    )?;
    println!("masked L_ir = {:.6}", l_ir.item());
    Ok(())
}

fn cmd_export_views(checkpoint: &Path, out: &Path, seed: u64, n: usize) -> Result<()> {
    let t = Trainer::load(checkpoint)?;
    let w = t.w_from_seed(seed)?;
    let dist = match t.config.pose_kind.as_str() {
        "uniform" => PoseDistribution::uniform(t.config.pose_h_spread, t.config.pose_v_spread),
        _ => PoseDistribution::gaussian(t.config.pose_h_spread, t.config.pose_v_spread),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);
    fs::create_dir_all(out)?;
    let mut manifest = fs::File::create(out.join("poses.csv"))?;
    writeln!(manifest, "index,yaw_rad,pitch_rad,fov_deg,radius")?;
    for i in 0..n {
        let pose = dist.sample(&mut rng, t.config.cam_radius);
        let img = single_image(&t, &w, &w, &pose)?;
        save_png_linear(&out.join(format!("view_{i:04}.png")), &img)?;
        writeln!(
            manifest,
            "{i},{:.6},{:.6},{:.1},{:.3}",
            pose.yaw, pose.pitch, t.config.fov_deg, pose.radius
        )?;
    }
    Ok(())
}

/// One pose rendered through the stage-aware pipeline, squeezed to [3, R, R].
fn single_image(t: &Trainer, w_field: &Tensor<f32>, w_dec: &Tensor<f32>, pose: &CameraPose) -> Result<Tensor<f32>> {
    let img = t.render_image(w_field, w_dec, std::slice::from_ref(pose))?;
    let r = img.shape()[2];
    img.reshape(&[3, r, r])
}

fn lerp(a: &Tensor<f32>, b: &Tensor<f32>, alpha: f64) -> Result<Tensor<f32>> {
    a.mul_scalar(1.0 - alpha as f32)
        .add(&b.mul_scalar(alpha as f32))
}

fn gray_rgb(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    Tensor::concat(&[t.clone(), t.clone(), t.clone()], 0)
}

/// Black -> red -> yellow -> white ramp over a [H*W] scalar map in [0, 1].
fn heatmap(values: &[f32], res: usize) -> Tensor<f32> {
    let n = res * res;
    let mut data = vec![0.0f32; 3 * n];
    for (i, &v) in values.iter().take(n).enumerate() {
        let x = v.clamp(0.0, 1.0) * 3.0;
        data[i] = x.min(1.0);
        data[n + i] = (x - 1.0).clamp(0.0, 1.0);
        data[2 * n + i] = (x - 2.0).clamp(0.0, 1.0);
    }
    Tensor::constant(data, &[3, res, res])
}

/// Tile [3, R, R] images row-major, `per_row` across, black-padding the tail.
fn contact_sheet(tiles: &[Tensor<f32>], per_row: usize) -> Result<Tensor<f32>> {
    if tiles.is_empty() {
        return Err(Error::InvalidArgument("no tiles for the contact sheet".into()));
    }
    let r = tiles[0].shape()[1];
    let cols = per_row.min(tiles.len());
    let rows = tiles.len().div_ceil(per_row);
    let (sw, sh) = (cols * r, rows * r);
    let mut data = vec![0.0f32; 3 * sh * sw];
    for (idx, tile) in tiles.iter().enumerate() {
        if tile.shape() != [3, r, r] {
            return Err(Error::ShapeMismatch(format!(
                "contact sheet tile {idx} has shape {:?}",
                tile.shape()
            )));
        }
        let (ty, tx) = (idx / per_row, idx % per_row);
        let src = tile.data();
        for c in 0..3 {
            for y in 0..r {
                let drow = (c * sh + ty * r + y) * sw + tx * r;
                let srow = (c * r + y) * r;
                data[drow..drow + r].copy_from_slice(&src[srow..srow + r]);
            }
        }
    }
    Ok(Tensor::constant(data, &[3, sh, sw]))
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gsjbu_core::io::{field_to_map, map_to_field, read_array, read_image, read_kernel_field, write_array, write_image, write_kernel_field};
use gsjbu_core::{
    bilinear_upsample, depth_metrics_with_peak, downsample_bilinear, fit_with_progress, jbu_classic, psnr,
    reconstruct_guidance, render, render_probability, Error, KernelField, MetricReport, OptimConfig, OptimState,
    ParamSpace, PlanarMap, RenderConfig, ScaleFactor,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "gsjbu", version, about = "Learned anisotropic joint bilateral upsampling")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "GSJBU_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a kernel field to a guidance image.
    Fit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        scale: usize,
        #[command(flatten)]
        fit: FitArgs,
        /// Kernel-field output (.npy, with a .meta.json sidecar).
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration loss as CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Render an LR payload with a previously fitted field.
    Render {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat the payload as per-pixel probabilities and validate it.
        #[arg(long)]
        simplex: bool,
    },
    /// Fit on the guidance image and render the payload in one go.
    Upsample {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        simplex: bool,
        #[command(flatten)]
        depth: DepthArgs,
    },
    /// Compare a prediction against a reference.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Peak value for PSNR.
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[command(flatten)]
        depth: DepthArgs,
    },
    /// Run bilinear, classic JBU and the learned upsampler on one triple.
    Compare {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Spatial sigma of classic JBU in HR pixels (default: the scale).
        #[arg(long)]
        jbu_sigma_s: Option<f64>,
        #[arg(long, default_value_t = 0.12)]
        jbu_sigma_r: f64,
        /// Window radius of classic JBU in LR pixels.
        #[arg(long, default_value_t = 2)]
        jbu_radius: usize,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[command(flatten)]
        depth: DepthArgs,
    },
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    rmax: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Initial spatial sigma (default: the scale).
    #[arg(long)]
    init_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.12)]
    init_sigma_r: f64,
    #[arg(long, value_enum, default_value_t = Space::Linear)]
    param_space: Space,
}

#[derive(Args, Clone, Copy)]
struct DepthArgs {
    /// Multiplier applied to depth values read from images or arrays.
    #[arg(long, default_value_t = 1.0)]
    depth_scale: f64,
}

#[derive(ValueEnum, Clone, Copy)]
enum Space {
    Linear,
    Log,
}

impl FitArgs {
    fn render_config(&self) -> RenderConfig {
        RenderConfig {
            r_max: self.rmax,
            alpha_dyn: self.alpha,
            ..RenderConfig::default()
        }
    }

    fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            iterations: self.iters,
            learning_rate: self.lr,
            init_sigma_spatial: match self.init_sigma {
                Some(v) => gsjbu_core::SpatialInit::Value(v),
                None => gsjbu_core::SpatialInit::Auto,
            },
            init_sigma_r: self.init_sigma_r,
            param_space: match self.param_space {
                Space::Linear => ParamSpace::Linear,
                Space::Log => ParamSpace::Log,
            },
            ..OptimConfig::default()
        }
    }
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

/// Reads `.npy` arrays as-is and anything else as an image.
fn read_map(path: &Path) -> anyhow::Result<PlanarMap> {
    let map = if is_npy(path) { read_array(path)? } else { read_image(path)? };
    Ok(map)
}

fn read_depth(path: &Path, depth: DepthArgs) -> anyhow::Result<PlanarMap> {
    let map = read_map(path)?;
    if depth.depth_scale == 1.0 {
        return Ok(map);
    }
    let k = depth.depth_scale as f32;
    Ok(map.map_values(|v| v * k)?)
}

/// Writes `.npy` bit-exactly, or a 16-bit PNG otherwise. Returns clamped-value count.
fn write_map(map: &PlanarMap, path: &Path) -> anyhow::Result<usize> {
    if is_npy(path) {
        write_array(map, path)?;
        Ok(0)
    } else {
        Ok(write_image(map, path, 16)?)
    }
}

struct Fitted {
    field: KernelField,
    state: OptimState,
    recon_psnr: f64,
    seconds: f64,
}

fn run_fit(guidance: &PlanarMap, scale: ScaleFactor, fit: &FitArgs) -> anyhow::Result<Fitted> {
    let rc = fit.render_config();
    let oc = fit.optim_config();
    let start = Instant::now();
    let (field, state) = fit_with_progress(guidance, scale, &rc, &oc, |_, _| {})?;
    // render with exactly what a saved field file would hold
    let field = map_to_field(&field_to_map(&field), scale)?;
    let seconds = start.elapsed().as_secs_f64();
    let guidance_lr = downsample_bilinear(guidance, scale)?;
    let recon = reconstruct_guidance(&field, &guidance_lr, guidance, &rc)?;
    let recon_psnr = psnr(&recon.map, guidance, 1.0)?;
    Ok(Fitted {
        field,
        state,
        recon_psnr,
        seconds,
    })
}

fn db(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn report_json(r: &MetricReport) -> Value {
    json!({"psnr_db": db(r.psnr_db), "rmse": r.rmse, "delta1": r.delta1, "mae": r.mae})
}

/// Depth-style report where the map is single-channel, PSNR only otherwise.
fn evaluate(pred: &PlanarMap, gt: &PlanarMap, peak: f64) -> anyhow::Result<Value> {
    if pred.channels() == 1 && gt.channels() == 1 {
        // zero or negative ground truth marks missing depth
        let mask: Vec<bool> = gt.data().iter().map(|&v| v > 0.0).collect();
        Ok(report_json(&depth_metrics_with_peak(pred, gt, Some(&mask), peak)?))
    } else {
        Ok(json!({"psnr_db": db(psnr(pred, gt, peak)?)}))
    }
}

fn cmd(command: Command, table: &mut String) -> anyhow::Result<Value> {
    match command {
        Command::Fit {
            image,
            scale,
            fit,
            out,
            loss_csv,
        } => {
            let guidance = read_image(&image)?;
            let scale = ScaleFactor::new(scale)?;
            let f = run_fit(&guidance, scale, &fit)?;
            write_kernel_field(&f.field, &fit.render_config(), &out)?;
            if let Some(csv) = &loss_csv {
                let mut text = String::from("iteration,loss\n");
                for (i, l) in f.state.loss_history.iter().enumerate() {
                    writeln!(text, "{i},{l:e}").unwrap();
                }
                std::fs::write(csv, text).with_context(|| format!("writing {}", csv.display()))?;
            }
            let final_loss = *f.state.loss_history.last().expect("at least one iteration");
            writeln!(table, "initial loss   {:.6}", f.state.loss_history[0]).unwrap();
            writeln!(table, "final loss     {final_loss:.6}").unwrap();
            writeln!(table, "best loss      {:.6} (iteration {})", f.state.best_loss, f.state.best_iteration).unwrap();
            writeln!(table, "recon PSNR     {:.3} dB", f.recon_psnr).unwrap();
            writeln!(table, "time           {:.3} s", f.seconds).unwrap();
            Ok(json!({
                "command": "fit",
                "field": out,
                "iterations": f.state.loss_history.len(),
                "initial_loss": f.state.loss_history[0],
                "final_loss": final_loss,
                "best_loss": f.state.best_loss,
                "best_iteration": f.state.best_iteration,
                "recon_psnr_db": db(f.recon_psnr),
                "seconds": f.seconds,
            }))
        }
        Command::Render {
            field,
            payload,
            image,
            out,
            simplex,
        } => {
            let (kf, meta) = read_kernel_field(&field)?;
            let guidance = read_image(&image)?;
            let lr = read_map(&payload)?;
            let scale = ScaleFactor::between((lr.height(), lr.width()), (guidance.height(), guidance.width()))?;
            meta.expect_scale(scale)?;
            let rc = meta.render_config();
            let output = if simplex {
                render_probability(&lr, &kf, &guidance, &rc)?
            } else {
                render(&lr, &kf, &guidance, &rc)?
            };
            let clamped = write_map(&output.map, &out)?;
            let (c, h, w) = output.map.dims();
            writeln!(table, "output     {c} x {h} x {w} -> {}", out.display()).unwrap();
            writeln!(table, "time       {:.3} s", output.stats.duration.as_secs_f64()).unwrap();
            Ok(json!({
                "command": "render",
                "out": out,
                "shape": [c, h, w],
                "clamped": clamped,
                "seconds": output.stats.duration.as_secs_f64(),
            }))
        }
        Command::Upsample {
            image,
            payload,
            out,
            fit,
            simplex,
            depth,
        } => {
            let guidance = read_image(&image)?;
            let lr = read_depth(&payload, depth)?;
            let scale = ScaleFactor::between((lr.height(), lr.width()), (guidance.height(), guidance.width()))?;
            let f = run_fit(&guidance, scale, &fit)?;
            let rc = fit.render_config();
            let output = if simplex {
                render_probability(&lr, &f.field, &guidance, &rc)?
            } else {
                render(&lr, &f.field, &guidance, &rc)?
            };
            let clamped = write_map(&output.map, &out)?;
            let (c, h, w) = output.map.dims();
            writeln!(table, "best loss  {:.6} (iteration {})", f.state.best_loss, f.state.best_iteration).unwrap();
            writeln!(table, "recon PSNR {:.3} dB", f.recon_psnr).unwrap();
            writeln!(table, "output     {c} x {h} x {w} -> {}", out.display()).unwrap();
            Ok(json!({
                "command": "upsample",
                "out": out,
                "shape": [c, h, w],
                "scale": scale.get(),
                "best_loss": f.state.best_loss,
                "recon_psnr_db": db(f.recon_psnr),
                "clamped": clamped,
                "seconds": f.seconds + output.stats.duration.as_secs_f64(),
            }))
        }
        Command::Eval { pred, gt, peak, depth } => {
            let p = read_depth(&pred, depth)?;
            let g = read_depth(&gt, depth)?;
            let metrics = evaluate(&p, &g, peak)?;
            for (k, v) in metrics.as_object().expect("object") {
                writeln!(table, "{k:<8} {v}").unwrap();
            }
            Ok(json!({"command": "eval", "metrics": metrics}))
        }
        Command::Compare {
            image,
            payload,
            gt,
            fit,
            jbu_sigma_s,
            jbu_sigma_r,
            jbu_radius,
            peak,
            depth,
        } => {
            let guidance = read_image(&image)?;
            let lr = read_depth(&payload, depth)?;
            let reference = read_depth(&gt, depth)?;
            let scale = ScaleFactor::between((lr.height(), lr.width()), (guidance.height(), guidance.width()))?;
            let s = scale.get() as f64;

            let bilinear = bilinear_upsample(&lr, scale);
            let jbu = jbu_classic(&lr, &guidance, jbu_sigma_s.unwrap_or(s), jbu_sigma_r, jbu_radius)?;
            let f = run_fit(&guidance, scale, &fit)?;
            let ours = render(&lr, &f.field, &guidance, &fit.render_config())?.map;

            let mut rows = serde_json::Map::new();
            writeln!(table, "{:<10} {:>10} {:>10} {:>10} {:>10}", "method", "RMSE", "delta1", "MAE", "PSNR").unwrap();
            for (name, pred) in [("bilinear", &bilinear), ("jbu", &jbu), ("gsjbu", &ours)] {
                let m = evaluate(pred, &reference, peak)?;
                let get = |k: &str| m.get(k).map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                let num = |k: &str| match m.get(k).and_then(Value::as_f64) {
                    Some(v) => format!("{v:.4}"),
                    None => get(k),
                };
                writeln!(
                    table,
                    "{name:<10} {:>10} {:>10} {:>10} {:>10}",
                    num("rmse"),
                    num("delta1"),
                    num("mae"),
                    num("psnr_db")
                )
                .unwrap();
                rows.insert(name.to_string(), m);
            }
            Ok(json!({"command": "compare", "scale": scale.get(), "metrics": rows}))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let built = if n == 0 {
            Err(anyhow::anyhow!("--threads must be at least 1"))
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(anyhow::Error::from)
        };
        if let Err(e) = built {
            return fail(&e);
        }
    }
    let mut table = String::new();
    match cmd(cli.command, &mut table) {
        Ok(v) => {
            eprint!("{table}");
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &anyhow::Error) -> ExitCode {
    let code = exit_code(e);
    let kind = if code == 3 { "numerical" } else { "validation" };
    eprintln!("{}", json!({"status": "error", "kind": kind, "message": format!("{e:#}")}));
    ExitCode::from(code)
}
